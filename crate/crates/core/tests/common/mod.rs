#![allow(dead_code)]

use graphda::autodiff::{Tape, Var};
use graphda::model::{forward, Coefficients, EntropyRouting, StepBatch};
use graphda::synth::{generate_pair, SbmSpec};
use graphda::{AblationFlags, Domain, Matrix, Model, TrainConfig, TransferTask};

/// Two 20-node graphs, widths 8/4, depth 2 with 3 samples per hop.
pub fn toy_task() -> (TransferTask, TrainConfig) {
    let (s, t, _) = generate_pair(&SbmSpec {
        num_nodes: 20,
        num_classes: 2,
        attr_dim: 6,
        intra_prob: 0.35,
        inter_prob: 0.05,
        prototype_strength: 1.0,
        seed: 11,
        ..SbmSpec::default()
    })
    .unwrap();
    let config = TrainConfig {
        hidden_dims: vec![8, 4],
        sample_sizes: vec![3, 3],
        topk: 5,
        batch_size: 6,
        n: 2,
        temperature: 0.5,
        ..TrainConfig::default()
    };
    let task = TransferTask::new(
        Domain::with_computed_diffusion(s, &config).unwrap(),
        Domain::with_computed_diffusion(t, &config).unwrap(),
    )
    .unwrap()
    .relabel(config.n, 4)
    .unwrap();
    (task, config)
}

pub fn toy_batch(task: &TransferTask) -> StepBatch {
    StepBatch {
        source: vec![0, 3, 5, 8, 13, 17],
        target: task.target.graph.unlabeled()[..6].to_vec(),
        seed: 21,
    }
}

pub fn coeffs(routing: EntropyRouting) -> Coefficients {
    Coefficients {
        lambda1: 0.3,
        lambda2: 0.2,
        lambda3: 1.5,
        routing,
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Scalar {
    Ce,
    Cl,
    En,
    /// `L_CE + λ1 L_CL + λ2 L_EN`.
    Encoders,
    /// `L_CE - λ3 L_EN`.
    Classifier,
}

pub fn with_params(model: &Model, params: &[Matrix]) -> Model {
    let mut m = model.clone();
    for (dst, src) in m.parameters_mut().into_iter().zip(params) {
        *dst = src.clone();
    }
    m
}

fn build(tape: &Tape, model: &Model, task: &TransferTask, batch: &StepBatch, c: Coefficients, which: Scalar) -> (Var, Vec<Var>) {
    let bound = model.bind(tape);
    let f = forward(tape, &bound, model, task, batch, c).unwrap();
    let cl = || f.cl.clone().expect("contrastive active");
    let s = match which {
        Scalar::Ce => f.ce.clone(),
        Scalar::Cl => cl(),
        Scalar::En => f.en.clone(),
        Scalar::Encoders => f
            .ce
            .add(&cl().scalar_mul(c.lambda1))
            .unwrap()
            .add(&f.en.scalar_mul(c.lambda2))
            .unwrap(),
        Scalar::Classifier => f.ce.add(&f.en.scalar_mul(-c.lambda3)).unwrap(),
    };
    (s, bound.vars().into_iter().cloned().collect())
}

/// Value of one scalar under plain routing.
pub fn value(model: &Model, params: &[Matrix], task: &TransferTask, batch: &StepBatch, which: Scalar) -> f64 {
    let m = with_params(model, params);
    let tape = Tape::new();
    build(&tape, &m, task, batch, coeffs(EntropyRouting::Plain), which).0.item().unwrap()
}

/// Analytic gradient of one scalar under plain routing; zeros where unused.
pub fn gradient(model: &Model, task: &TransferTask, batch: &StepBatch, which: Scalar) -> Vec<Matrix> {
    let tape = Tape::new();
    let (s, vars) = build(&tape, model, task, batch, coeffs(EntropyRouting::Plain), which);
    s.backward().unwrap();
    vars.iter()
        .map(|v| v.grad().unwrap_or_else(|| Matrix::zeros(v.shape().0, v.shape().1)))
        .collect()
}

/// Gradients of the adversarially routed objective in one backward pass.
pub fn routed_gradient(model: &Model, task: &TransferTask, batch: &StepBatch, c: Coefficients) -> Vec<Matrix> {
    let tape = Tape::new();
    let bound = model.bind(&tape);
    let f = forward(&tape, &bound, model, task, batch, c).unwrap();
    f.objective.backward().unwrap();
    bound
        .vars()
        .iter()
        .map(|v| v.grad().unwrap_or_else(|| Matrix::zeros(v.shape().0, v.shape().1)))
        .collect()
}

pub fn toy_model(task: &TransferTask, config: &TrainConfig) -> Model {
    Model::init(task.attr_dim(), task.num_classes(), config, AblationFlags::full()).unwrap()
}
