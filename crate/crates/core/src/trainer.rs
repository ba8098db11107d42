//! Optimization loop, schedules, evaluation and the divergence diagnostic.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::classifier::{argmax, predict_values, row_entropies};
use crate::config::{AblationFlags, Lambda2Mode, TrainConfig};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{
    embed_nodes, forward, mix_seed, Coefficients, Domain, EntropyRouting, Model, StepBatch, TransferTask,
};

/// `η0 (1 + 10p)^-0.75`.
pub fn learning_rate(eta0: f64, progress: f64) -> f64 {
    eta0 * (1.0 + 10.0 * progress).powf(-0.75)
}

/// `2 / (1 + exp(-10p)) - 1`, rising from 0 toward 1.
pub fn ramp(progress: f64) -> f64 {
    2.0 / (1.0 + (-10.0 * progress).exp()) - 1.0
}

pub fn lambda2_schedule(cap: f64, progress: f64, mode: Lambda2Mode) -> f64 {
    match mode {
        Lambda2Mode::Scale => cap * ramp(progress),
        Lambda2Mode::Clamp => ramp(progress).min(cap),
    }
}

/// Adam with the weight-decay term added to the gradient.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: i32,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(shapes: &[(usize, usize)], weight_decay: f64) -> Self {
        let zeros = || shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One update. Parameters whose gradient is `None` took no part in the
    /// loss and are left untouched.
    pub fn step(&mut self, params: Vec<&mut Matrix>, grads: &[Option<Matrix>], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(
                "adam",
                format!("{} params, {} grads, {} slots", params.len(), grads.len(), self.m.len()),
            ));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let Some(g) = g else { continue };
            if g.shape() != p.shape() {
                return Err(Error::shape("adam", format!("param {i}: {:?} vs grad {:?}", p.shape(), g.shape())));
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let pw = p.as_mut_slice();
            for (j, &gj) in g.as_slice().iter().enumerate() {
                let gj = gj + self.weight_decay * pw[j];
                let mj = &mut m.as_mut_slice()[j];
                *mj = self.beta1 * *mj + (1.0 - self.beta1) * gj;
                let mhat = *mj / c1;
                let vj = &mut v.as_mut_slice()[j];
                *vj = self.beta2 * *vj + (1.0 - self.beta2) * gj * gj;
                let vhat = *vj / c2;
                pw[j] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Losses and schedule values of one step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub epoch: usize,
    pub iter: usize,
    pub ce: f64,
    /// 0 when contrastive learning is disabled.
    pub cl: f64,
    pub en: f64,
    /// `L_CE + λ1 L_CL + λ2 L_EN`, the encoders' objective.
    pub overall: f64,
    pub lr: f64,
    pub lambda2: f64,
}

/// Fractions of nodes whose prediction entropy reaches `gamma`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub gamma: f64,
    pub source_frac: f64,
    pub target_frac: f64,
    /// Upper bound on the domain divergence term: `2 · target_frac`.
    pub bound: f64,
}

pub fn divergence_diagnostic(source_entropy: &[f64], target_entropy: &[f64], gamma: f64) -> Result<Divergence> {
    if source_entropy.is_empty() || target_entropy.is_empty() {
        return Err(Error::invalid("divergence diagnostic over an empty node set"));
    }
    if !(gamma >= 0.0) {
        return Err(Error::invalid(format!("gamma {gamma} must be >= 0")));
    }
    let frac = |h: &[f64]| h.iter().filter(|&&x| x >= gamma).count() as f64 / h.len() as f64;
    let target_frac = frac(target_entropy);
    Ok(Divergence {
        gamma,
        source_frac: frac(source_entropy),
        target_frac,
        bound: 2.0 * target_frac,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub class: usize,
    pub correct: usize,
    pub total: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub per_class: Vec<ClassAccuracy>,
    /// `(node, predicted class)` over the evaluated nodes.
    pub predictions: Vec<(usize, usize)>,
}

/// Class probabilities of `nodes`.
pub fn predict_nodes(model: &Model, domain: &Domain, nodes: &[usize], seed: u64, chunk: usize) -> Result<Matrix> {
    let e = embed_nodes(model, domain, nodes, seed, chunk)?;
    predict_values(&e, &model.classifier)
}

/// Accuracy over the unlabeled target nodes that carry ground truth.
pub fn evaluate(model: &Model, target: &Domain, seed: u64, chunk: usize) -> Result<Evaluation> {
    let g = &target.graph;
    let nodes: Vec<usize> = g.unlabeled().iter().copied().filter(|&v| g.label(v).is_some()).collect();
    if nodes.is_empty() {
        return Err(Error::invalid("no unlabeled target node has a ground-truth label"));
    }
    let probs = predict_nodes(model, target, &nodes, seed, chunk)?;
    let mut per_class: Vec<ClassAccuracy> = (0..g.num_classes())
        .map(|class| ClassAccuracy { class, correct: 0, total: 0 })
        .collect();
    let mut predictions = Vec::with_capacity(nodes.len());
    for (i, &v) in nodes.iter().enumerate() {
        let pred = argmax(probs.row(i));
        let truth = g.label(v).expect("filtered");
        per_class[truth].total += 1;
        if pred == truth {
            per_class[truth].correct += 1;
        }
        predictions.push((v, pred));
    }
    let correct: usize = per_class.iter().map(|c| c.correct).sum();
    Ok(Evaluation {
        accuracy: correct as f64 / nodes.len() as f64,
        per_class,
        predictions,
    })
}

/// Seed of the sampling used at evaluation time for a run seeded with `seed`.
pub fn evaluation_seed(seed: u64) -> u64 {
    mix_seed(seed, 7, 0)
}

/// Prediction entropies of every source node and every target node.
pub fn node_entropies(model: &Model, task: &TransferTask, seed: u64, chunk: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let all = |d: &Domain| (0..d.graph.num_nodes()).collect::<Vec<_>>();
    let hs = row_entropies(&predict_nodes(model, &task.source, &all(&task.source), seed, chunk)?);
    let ht = row_entropies(&predict_nodes(model, &task.target, &all(&task.target), mix_seed(seed, 0, 1), chunk)?);
    Ok((hs, ht))
}

/// Diagnostic over all source and all target nodes.
pub fn measure_divergence(model: &Model, task: &TransferTask, gamma: f64, seed: u64, chunk: usize) -> Result<Divergence> {
    let (hs, ht) = node_entropies(model, task, seed, chunk)?;
    divergence_diagnostic(&hs, &ht, gamma)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub ce: f64,
    pub cl: f64,
    pub en: f64,
    pub overall: f64,
    pub divergence: Option<Divergence>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub variant: String,
    pub seed: u64,
    pub steps: Vec<StepMetrics>,
    pub epochs: Vec<EpochSummary>,
    pub evaluation: Evaluation,
}

impl RunReport {
    pub fn accuracy(&self) -> f64 {
        self.evaluation.accuracy
    }
}

/// Stateful training loop over one task.
pub struct Trainer<'a> {
    task: &'a TransferTask,
    config: TrainConfig,
    model: Model,
    adam: Adam,
    rng: ChaCha8Rng,
    step: usize,
    iters_per_epoch: usize,
    total_steps: usize,
    order: Vec<usize>,
    cursor: usize,
    routing: EntropyRouting,
}

impl<'a> Trainer<'a> {
    pub fn new(task: &'a TransferTask, config: TrainConfig, flags: AblationFlags) -> Result<Self> {
        config.validate()?;
        let model = Model::init(task.attr_dim(), task.num_classes(), &config, flags)?;
        Self::with_model(task, config, model)
    }

    pub fn with_model(task: &'a TransferTask, config: TrainConfig, model: Model) -> Result<Self> {
        config.validate()?;
        if task.target.graph.unlabeled().is_empty() {
            return Err(Error::invalid("target has no unlabeled nodes to adapt on"));
        }
        let shapes: Vec<_> = model.parameters().iter().map(|p| p.shape()).collect();
        let ns = task.source.graph.labeled().len();
        let iters_per_epoch = config.iters_per_epoch.unwrap_or(ns.div_ceil(config.batch_size));
        Ok(Self {
            task,
            adam: Adam::new(&shapes, config.weight_decay),
            rng: ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 5, 0)),
            step: 0,
            iters_per_epoch,
            total_steps: iters_per_epoch * config.epochs,
            order: Vec::new(),
            cursor: 0,
            routing: EntropyRouting::Adversarial,
            config,
            model,
        })
    }

    /// Replaces the default adversarial routing, for comparison runs.
    pub fn with_routing(mut self, routing: EntropyRouting) -> Self {
        self.routing = routing;
        self
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn iters_per_epoch(&self) -> usize {
        self.iters_per_epoch
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    /// Completed fraction of training, in `[0, 1]`.
    pub fn progress(&self) -> f64 {
        if self.total_steps == 0 {
            1.0
        } else {
            (self.step as f64 / self.total_steps as f64).min(1.0)
        }
    }

    fn next_source_batch(&mut self) -> Vec<usize> {
        let labeled = self.task.source.graph.labeled();
        let bs = self.config.batch_size.min(labeled.len());
        if self.cursor + bs > self.order.len() {
            self.order = labeled.to_vec();
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let b = self.order[self.cursor..self.cursor + bs].to_vec();
        self.cursor += bs;
        b
    }

    fn next_target_batch(&mut self) -> Vec<usize> {
        let tu = self.task.target.graph.unlabeled();
        let bs = self.config.batch_size.min(tu.len());
        tu.choose_multiple(&mut self.rng, bs).copied().collect()
    }

    /// One optimization step on fresh minibatches.
    pub fn train_step(&mut self) -> Result<StepMetrics> {
        let p = self.progress();
        let lr = learning_rate(self.config.eta0, p);
        let lambda2 = lambda2_schedule(self.config.lambda2_max, p, self.config.lambda2_mode);
        let batch = StepBatch {
            source: self.next_source_batch(),
            target: self.next_target_batch(),
            seed: mix_seed(self.config.seed, 6, self.step as u64),
        };
        let coeffs = Coefficients {
            lambda1: self.config.lambda1,
            lambda2,
            lambda3: self.config.lambda3,
            routing: self.routing,
        };
        let tape = Tape::new();
        let bound = self.model.bind(&tape);
        let losses = forward(&tape, &bound, &self.model, self.task, &batch, coeffs)?;
        losses.objective.backward()?;
        let grads: Vec<Option<Matrix>> = bound.vars().iter().map(|v| v.grad()).collect();
        self.adam.step(self.model.parameters_mut(), &grads, lr)?;

        let ce = losses.ce.item().unwrap_or(f64::NAN);
        let cl = losses.cl.as_ref().and_then(|c| c.item()).unwrap_or(0.0);
        let en = losses.en.item().unwrap_or(f64::NAN);
        let lambda1 = if self.model.flags.uses_contrastive() { self.config.lambda1 } else { 0.0 };
        let lambda2_eff = if self.model.flags.uses_entropy() { lambda2 } else { 0.0 };
        let metrics = StepMetrics {
            epoch: self.step / self.iters_per_epoch.max(1),
            iter: self.step % self.iters_per_epoch.max(1),
            ce,
            cl,
            en,
            overall: ce + lambda1 * cl + lambda2_eff * en,
            lr,
            lambda2,
        };
        self.step += 1;
        if !(metrics.overall.is_finite()) {
            return Err(Error::invalid(format!("non-finite loss at step {}", self.step)));
        }
        Ok(metrics)
    }

    fn eval_seed(&self) -> u64 {
        evaluation_seed(self.config.seed)
    }

    pub fn evaluate(&self) -> Result<Evaluation> {
        evaluate(&self.model, &self.task.target, self.eval_seed(), self.config.eval_chunk)
    }

    pub fn divergence(&self) -> Result<Divergence> {
        measure_divergence(&self.model, self.task, self.config.gamma, self.eval_seed(), self.config.eval_chunk)
    }

    /// Trains for the configured epochs and evaluates on the target.
    pub fn run(&mut self) -> Result<RunReport> {
        self.run_with(|_, _| Ok(()))
    }

    /// Like [`Trainer::run`], calling `on_epoch` after every epoch.
    pub fn run_with(&mut self, mut on_epoch: impl FnMut(&EpochSummary, &Model) -> Result<()>) -> Result<RunReport> {
        let mut steps = Vec::with_capacity(self.total_steps);
        let mut epochs = Vec::with_capacity(self.config.epochs);
        for epoch in 0..self.config.epochs {
            let first = steps.len();
            for _ in 0..self.iters_per_epoch {
                steps.push(self.train_step()?);
            }
            let block: &[StepMetrics] = &steps[first..];
            let mean = |f: fn(&StepMetrics) -> f64| block.iter().map(f).sum::<f64>() / block.len().max(1) as f64;
            let every = self.config.diagnostic_every;
            let divergence = if every > 0 && (epoch + 1) % every == 0 {
                Some(self.divergence()?)
            } else {
                None
            };
            epochs.push(EpochSummary {
                epoch,
                ce: mean(|m| m.ce),
                cl: mean(|m| m.cl),
                en: mean(|m| m.en),
                overall: mean(|m| m.overall),
                divergence,
            });
            on_epoch(epochs.last().expect("just pushed"), &self.model)?;
        }
        Ok(RunReport {
            variant: self.model.flags.label(),
            seed: self.config.seed,
            steps,
            epochs,
            evaluation: self.evaluate()?,
        })
    }
}

/// Trains one variant from scratch and returns the report and the model.
pub fn run_experiment(task: &TransferTask, config: &TrainConfig, flags: AblationFlags) -> Result<(RunReport, Model)> {
    let mut trainer = Trainer::new(task, config.clone(), flags)?;
    let report = trainer.run()?;
    Ok((report, trainer.into_model()))
}

/// One cell of a seed/ablation grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridCell {
    pub flags: AblationFlags,
    pub seed: u64,
    /// Labeled target nodes per class.
    pub n: usize,
}

/// Runs every cell, in parallel when the feature is enabled. Each cell
/// redraws the labeled target set with its own seed, so results match a
/// sequential run cell by cell.
pub fn run_grid(base: &TransferTask, config: &TrainConfig, cells: &[GridCell]) -> Vec<Result<RunReport>> {
    crate::par::map_indices(cells.len(), |i| {
        let cell = cells[i];
        let task = base.relabel(cell.n, cell.seed)?;
        let cfg = TrainConfig {
            seed: cell.seed,
            n: cell.n,
            ..config.clone()
        };
        run_experiment(&task, &cfg, cell.flags).map(|(r, _)| r)
    })
}
