//! Model parameters, the transfer task, and the training forward pass.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{NamedTensors, Tape, Var};
use crate::classifier::{cross_entropy, entropy_loss, predict, ClassifierParams};
use crate::config::{AblationFlags, TrainConfig};
use crate::contrastive::{contrastive_loss, corrupt, ContrastiveBatch};
use crate::diffusion::{self, DiffusionMatrix};
use crate::encoders::{
    embed, encode_global, encode_local, glorot_uniform, sample_neighborhoods, DiffusionPlan,
    EncoderParams, NodeFeatures, SamplePlan,
};
use crate::error::{Error, Result};
use crate::graph::{select_labeled_per_class, Graph};
use crate::matrix::Matrix;

/// splitmix64 finalizer; derives independent seeds from a base seed.
pub fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A graph together with its sparsified diffusion.
#[derive(Clone, Debug)]
pub struct Domain {
    pub graph: Graph,
    pub diffusion: DiffusionMatrix,
}

impl Domain {
    pub fn new(graph: Graph, diffusion: DiffusionMatrix) -> Result<Self> {
        if diffusion.num_nodes() != graph.num_nodes() {
            return Err(Error::invalid(format!(
                "diffusion covers {} nodes, graph has {}",
                diffusion.num_nodes(),
                graph.num_nodes()
            )));
        }
        Ok(Self { graph, diffusion })
    }

    /// Computes the diffusion from the configured teleport and top-s.
    pub fn with_computed_diffusion(graph: Graph, config: &TrainConfig) -> Result<Self> {
        let mut d = diffusion::compute(&graph, config.alpha, config.topk)?;
        if config.renormalize_diffusion {
            d = d.renormalized();
        }
        Self::new(graph, d)
    }
}

/// Source and target domains over a shared attribute space.
#[derive(Clone, Debug)]
pub struct TransferTask {
    pub source: Domain,
    pub target: Domain,
}

impl TransferTask {
    pub fn new(source: Domain, target: Domain) -> Result<Self> {
        let (s, t) = (&source.graph, &target.graph);
        if s.attr_dim() != t.attr_dim() {
            return Err(Error::invalid(format!(
                "source attribute width {} differs from target {}",
                s.attr_dim(),
                t.attr_dim()
            )));
        }
        if s.num_classes() != t.num_classes() {
            return Err(Error::invalid(format!(
                "source has {} classes, target {}",
                s.num_classes(),
                t.num_classes()
            )));
        }
        if s.labeled().is_empty() {
            return Err(Error::invalid("source graph has no labeled nodes"));
        }
        if t.unlabeled().is_empty() {
            return Err(Error::invalid("target graph has no unlabeled nodes"));
        }
        Ok(Self { source, target })
    }

    pub fn num_classes(&self) -> usize {
        self.source.graph.num_classes()
    }

    pub fn attr_dim(&self) -> usize {
        self.source.graph.attr_dim()
    }

    /// Copy of the task with `n` labeled target nodes per class drawn with `seed`.
    pub fn relabel(&self, n: usize, seed: u64) -> Result<Self> {
        let labeled = select_labeled_per_class(&self.target.graph, n, seed)?;
        let target = Domain {
            graph: self.target.graph.clone().with_labeled(&labeled)?,
            diffusion: self.target.diffusion.clone(),
        };
        Self::new(self.source.clone(), target)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub encoder: EncoderParams,
    /// Bilinear discriminator, `view_dim x view_dim`.
    pub discriminator: Matrix,
    pub classifier: ClassifierParams,
    pub flags: AblationFlags,
    pub sample_sizes: Vec<usize>,
}

/// Model parameters registered on a tape, in `Model::parameters` order.
pub struct BoundModel {
    pub local: Vec<Var>,
    pub global: Vec<Var>,
    pub w_b: Var,
    pub w_c: Var,
}

impl BoundModel {
    pub fn vars(&self) -> Vec<&Var> {
        self.local
            .iter()
            .chain(&self.global)
            .chain([&self.w_b, &self.w_c])
            .collect()
    }
}

impl Model {
    pub fn init(input_dim: usize, num_classes: usize, config: &TrainConfig, flags: AblationFlags) -> Result<Self> {
        config.validate()?;
        flags.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 1, 0));
        let encoder = EncoderParams::init(input_dim, &config.hidden_dims, &mut rng)?;
        let view = encoder.view_dim();
        let discriminator = glorot_uniform(view, view, &mut rng);
        let views = usize::from(flags.uses_local()) + usize::from(flags.uses_global());
        let classifier = ClassifierParams::init(view * views, num_classes, config.temperature, &mut rng)?;
        Ok(Self {
            encoder,
            discriminator,
            classifier,
            flags,
            sample_sizes: config.sample_sizes.clone(),
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.classifier.weights.rows()
    }

    pub fn parameters(&self) -> Vec<&Matrix> {
        self.encoder
            .local
            .iter()
            .chain(&self.encoder.global)
            .chain([&self.discriminator, &self.classifier.weights])
            .collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Matrix> {
        self.encoder
            .local
            .iter_mut()
            .chain(self.encoder.global.iter_mut())
            .chain([&mut self.discriminator, &mut self.classifier.weights])
            .collect()
    }

    pub fn bind(&self, tape: &Tape) -> BoundModel {
        BoundModel {
            local: self.encoder.local.iter().map(|w| tape.param(w.clone())).collect(),
            global: self.encoder.global.iter().map(|w| tape.param(w.clone())).collect(),
            w_b: tape.param(self.discriminator.clone()),
            w_c: tape.param(self.classifier.weights.clone()),
        }
    }

    /// Weights by name, e.g. `local.0`, `global.1`, `discriminator`, `classifier`.
    pub fn to_tensors(&self) -> NamedTensors {
        let mut t = NamedTensors::new();
        for (k, w) in self.encoder.local.iter().enumerate() {
            t.insert(format!("local.{k}"), w.clone());
        }
        for (k, w) in self.encoder.global.iter().enumerate() {
            t.insert(format!("global.{k}"), w.clone());
        }
        t.insert("discriminator", self.discriminator.clone());
        t.insert("classifier", self.classifier.weights.clone());
        t
    }

    /// Overwrites every weight from `tensors`, checking names and shapes.
    pub fn load_tensors(&mut self, mut tensors: NamedTensors) -> Result<()> {
        for (k, w) in self.encoder.local.iter_mut().enumerate() {
            *w = tensors.take(&format!("local.{k}"), w.shape())?;
        }
        for (k, w) in self.encoder.global.iter_mut().enumerate() {
            *w = tensors.take(&format!("global.{k}"), w.shape())?;
        }
        self.discriminator = tensors.take("discriminator", self.discriminator.shape())?;
        self.classifier.weights = tensors.take("classifier", self.classifier.weights.shape())?;
        if !tensors.is_empty() {
            let extra: Vec<&str> = tensors.iter().map(|(n, _)| n).collect();
            return Err(Error::Checkpoint(format!("unexpected tensors {extra:?}")));
        }
        Ok(())
    }
}

/// Sampling structure shared by the real and corrupted passes over a node list.
pub struct ViewPlan {
    local: Option<SamplePlan>,
    global: Option<DiffusionPlan>,
}

impl ViewPlan {
    pub fn build(model: &Model, domain: &Domain, nodes: &[usize], seed: u64) -> Result<Self> {
        let local = model
            .flags
            .uses_local()
            .then(|| sample_neighborhoods(&domain.graph, nodes, &model.sample_sizes, seed));
        let global = if model.flags.uses_global() {
            Some(DiffusionPlan::build(&domain.diffusion, nodes, model.encoder.depth())?)
        } else {
            None
        };
        Ok(Self { local, global })
    }
}

/// Per-view embeddings of one pass.
pub struct Views {
    pub local: Option<Var>,
    pub global: Option<Var>,
}

impl Views {
    /// `[e^A; e^P]`, or the single remaining view under an ablation.
    pub fn embedding(&self) -> Result<Var> {
        match (&self.local, &self.global) {
            (Some(a), Some(p)) => embed(a, p),
            (Some(a), None) => Ok(a.clone()),
            (None, Some(p)) => Ok(p.clone()),
            (None, None) => Err(Error::invalid("model has no active view")),
        }
    }
}

pub fn encode_views(
    tape: &Tape,
    bound: &BoundModel,
    domain: &Domain,
    plan: &ViewPlan,
    features: NodeFeatures<'_>,
) -> Result<Views> {
    let local = match &plan.local {
        Some(p) => Some(encode_local(tape, features, p, &bound.local)?),
        None => None,
    };
    let global = match &plan.global {
        Some(p) => Some(encode_global(tape, features, &domain.diffusion, p, &bound.global)?),
        None => None,
    };
    Ok(Views { local, global })
}

/// Node lists of one optimization step.
#[derive(Clone, Debug)]
pub struct StepBatch {
    /// Labeled source minibatch.
    pub source: Vec<usize>,
    /// Unlabeled target minibatch.
    pub target: Vec<usize>,
    pub seed: u64,
}

/// How the entropy term enters the single backward pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum EntropyRouting {
    /// Encoders minimize `λ2 L_EN`, the classifier maximizes `λ3 L_EN`.
    #[default]
    Adversarial,
    /// Everything minimizes `λ2 L_EN`; no gradient scaling. Exists for
    /// comparison runs and gradient oracles.
    Plain,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Coefficients {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub routing: EntropyRouting,
}

pub struct ForwardLosses {
    pub ce: Var,
    /// Summed over both graphs; `None` when contrastive learning is off.
    pub cl: Option<Var>,
    /// Mean target-batch entropy.
    pub en: Var,
    /// What `backward` is called on.
    pub objective: Var,
}

/// Entropy of the target predictions plus the term that routes its gradient.
///
/// The returned term has value `-λ3 · L_EN`; the classifier receives
/// `-λ3 ∂L_EN` (it maximizes entropy) while a gradient scale of `-λ2/λ3`
/// on the embeddings turns that into `+λ2 ∂L_EN` for the encoders. With
/// `λ3 = 0` the factor is undefined, so the embeddings are scaled by `λ2`
/// and the classifier branch by 0 instead.
pub fn routed_entropy(e_t: &Var, w_c: &Var, temperature: f64, lambda2: f64, lambda3: f64) -> Result<(Var, Var)> {
    if lambda3 > 0.0 {
        let p = predict(&e_t.grad_scale(-lambda2 / lambda3), w_c, temperature)?;
        let en = entropy_loss(&p)?;
        let term = en.scalar_mul(-lambda3);
        Ok((en, term))
    } else {
        let p = predict(&e_t.grad_scale(lambda2), &w_c.grad_scale(0.0), temperature)?;
        let en = entropy_loss(&p)?;
        Ok((en.clone(), en))
    }
}

fn prefix(v: &Var, n: usize) -> Result<Var> {
    if v.shape().0 == n {
        Ok(v.clone())
    } else {
        v.gather_rows(&(0..n).collect::<Vec<_>>())
    }
}

fn graph_contrastive(
    tape: &Tape,
    bound: &BoundModel,
    domain: &Domain,
    plan: &ViewPlan,
    real: &Views,
    rows: usize,
    seed: u64,
) -> Result<Var> {
    let perm = corrupt(domain.graph.num_nodes(), seed)?;
    let fake = encode_views(
        tape,
        bound,
        domain,
        plan,
        NodeFeatures::permuted(domain.graph.attributes(), perm.perm()),
    )?;
    let pick = |v: &Option<Var>| -> Result<Var> {
        prefix(v.as_ref().ok_or_else(|| Error::invalid("contrastive needs both views"))?, rows)
    };
    let batch = ContrastiveBatch::new(
        pick(&real.local)?,
        pick(&real.global)?,
        pick(&fake.local)?,
        pick(&fake.global)?,
        bound.w_b.clone(),
    )?;
    contrastive_loss(&batch)
}

/// Builds every loss of one step on `tape`.
pub fn forward(
    tape: &Tape,
    bound: &BoundModel,
    model: &Model,
    task: &TransferTask,
    batch: &StepBatch,
    coeffs: Coefficients,
) -> Result<ForwardLosses> {
    if batch.source.is_empty() || batch.target.is_empty() {
        return Err(Error::invalid("source and target batches must be nonempty"));
    }
    let temp = model.classifier.temperature;
    let (src, tgt) = (&task.source, &task.target);

    let src_plan = ViewPlan::build(model, src, &batch.source, mix_seed(batch.seed, 2, 0))?;
    let src_views = encode_views(tape, bound, src, &src_plan, NodeFeatures::original(src.graph.attributes()))?;
    let src_probs = predict(&src_views.embedding()?, &bound.w_c, temp)?;
    let src_labels: Vec<Option<usize>> = batch.source.iter().map(|&v| src.graph.label(v)).collect();

    let nt = batch.target.len();
    let tl = tgt.graph.labeled();
    let tgt_nodes: Vec<usize> = batch.target.iter().chain(tl).copied().collect();
    let tgt_plan = ViewPlan::build(model, tgt, &tgt_nodes, mix_seed(batch.seed, 2, 1))?;
    let tgt_views = encode_views(tape, bound, tgt, &tgt_plan, NodeFeatures::original(tgt.graph.attributes()))?;
    let tgt_all = tgt_views.embedding()?;

    let tl_labels: Vec<Option<usize>> = tl.iter().map(|&v| tgt.graph.label(v)).collect();
    let ce = if tl.is_empty() {
        cross_entropy(&src_probs, &src_labels, None)?
    } else {
        let idx: Vec<usize> = (nt..nt + tl.len()).collect();
        let tl_probs = predict(&tgt_all.gather_rows(&idx)?, &bound.w_c, temp)?;
        cross_entropy(&src_probs, &src_labels, Some((&tl_probs, &tl_labels)))?
    };
    let mut objective = ce.clone();

    let cl = if model.flags.uses_contrastive() {
        let ls = graph_contrastive(tape, bound, src, &src_plan, &src_views, batch.source.len(), mix_seed(batch.seed, 3, 0))?;
        let lt = graph_contrastive(tape, bound, tgt, &tgt_plan, &tgt_views, nt, mix_seed(batch.seed, 3, 1))?;
        let cl = ls.add(&lt)?;
        objective = objective.add(&cl.scalar_mul(coeffs.lambda1))?;
        Some(cl)
    } else {
        None
    };

    let e_t = prefix(&tgt_all, nt)?;
    let en = if model.flags.uses_entropy() {
        match coeffs.routing {
            EntropyRouting::Adversarial => {
                let (en, term) = routed_entropy(&e_t, &bound.w_c, temp, coeffs.lambda2, coeffs.lambda3)?;
                objective = objective.add(&term)?;
                en
            }
            EntropyRouting::Plain => {
                let en = entropy_loss(&predict(&e_t, &bound.w_c, temp)?)?;
                objective = objective.add(&en.scalar_mul(coeffs.lambda2))?;
                en
            }
        }
    } else {
        // monitored only; not part of the objective
        entropy_loss(&predict(&e_t, &bound.w_c, temp)?)?
    };
    Ok(ForwardLosses { ce, cl, en, objective })
}

/// Tape-free embeddings of `nodes`, processed in parallel chunks. Chunk `i`
/// samples with a seed derived from `(seed, i)`, so the result does not
/// depend on the thread count.
pub fn embed_nodes(model: &Model, domain: &Domain, nodes: &[usize], seed: u64, chunk: usize) -> Result<Matrix> {
    let chunk = chunk.max(1);
    let chunks: Vec<&[usize]> = nodes.chunks(chunk).collect();
    let parts = crate::par::map_indices(chunks.len(), |i| -> Result<Matrix> {
        let tape = Tape::new();
        let bound = BoundModel {
            local: model.encoder.local.iter().map(|w| tape.constant(w.clone())).collect(),
            global: model.encoder.global.iter().map(|w| tape.constant(w.clone())).collect(),
            w_b: tape.constant(Matrix::zeros(0, 0)),
            w_c: tape.constant(Matrix::zeros(0, 0)),
        };
        let plan = ViewPlan::build(model, domain, chunks[i], mix_seed(seed, 4, i as u64))?;
        let views = encode_views(&tape, &bound, domain, &plan, NodeFeatures::original(domain.graph.attributes()))?;
        Ok(views.embedding()?.value())
    });
    let mut data = Vec::with_capacity(nodes.len() * model.embed_dim());
    for p in parts {
        data.extend_from_slice(p?.as_slice());
    }
    Matrix::from_vec(nodes.len(), model.embed_dim(), data)
}
