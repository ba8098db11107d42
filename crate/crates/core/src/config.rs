//! Training configuration and its flat `key = value` text format.
//!
//! Defaults follow the hyperparameters published for the citation transfer
//! tasks (learning rate 0.01, 30 epochs, batch 128, samples {20, 20},
//! teleport 0.1, temperature 20, layers 1024/64).

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the domain-adaptation coefficient approaches its cap.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lambda2Mode {
    /// `cap · ramp(p)`.
    #[default]
    Scale,
    /// `min(ramp(p), cap)`.
    Clamp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda1: f64,
    pub lambda2_max: f64,
    pub lambda2_mode: Lambda2Mode,
    pub lambda3: f64,
    pub eta0: f64,
    pub epochs: usize,
    /// `None` means `ceil(N_source / batch_size)`.
    pub iters_per_epoch: Option<usize>,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub temperature: f64,
    pub sample_sizes: Vec<usize>,
    pub hidden_dims: Vec<usize>,
    pub alpha: f64,
    pub topk: usize,
    pub renormalize_diffusion: bool,
    /// Labeled target nodes per class.
    pub n: usize,
    pub seed: u64,
    /// Entropy threshold of the divergence diagnostic, in nats.
    pub gamma: f64,
    /// Run the divergence diagnostic every this many epochs; 0 disables the trace.
    pub diagnostic_every: usize,
    /// Nodes per inference chunk during evaluation.
    pub eval_chunk: usize,
    /// Write a checkpoint every this many epochs; 0 writes only the final one.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda1: 0.1,
            lambda2_max: 0.1,
            lambda2_mode: Lambda2Mode::Scale,
            lambda3: 1.0,
            eta0: 0.01,
            epochs: 30,
            iters_per_epoch: None,
            batch_size: 128,
            weight_decay: 5e-5,
            temperature: 20.0,
            sample_sizes: vec![20, 20],
            hidden_dims: vec![1024, 64],
            alpha: 0.1,
            topk: 32,
            renormalize_diffusion: false,
            n: 5,
            seed: 0,
            gamma: 0.5,
            diagnostic_every: 1,
            eval_chunk: 256,
            checkpoint_every: 0,
        }
    }
}

/// Model variants with one component removed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationFlags {
    pub disable_contrastive: bool,
    pub disable_global_view: bool,
    pub disable_local_view: bool,
    pub disable_domain_adaptation: bool,
}

impl AblationFlags {
    pub fn full() -> Self {
        Self::default()
    }

    /// Parses `cl`, `gv`, `lv`, `da` tokens.
    pub fn from_tokens<S: AsRef<str>>(tokens: &[S]) -> Result<Self> {
        let mut f = Self::default();
        for t in tokens {
            match t.as_ref() {
                "cl" => f.disable_contrastive = true,
                "gv" => f.disable_global_view = true,
                "lv" => f.disable_local_view = true,
                "da" => f.disable_domain_adaptation = true,
                other => {
                    return Err(Error::invalid(format!(
                        "unknown ablation {other:?} (expected cl, gv, lv or da)"
                    )))
                }
            }
        }
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        if self.disable_global_view && self.disable_local_view {
            return Err(Error::invalid("cannot remove both the global and the local view"));
        }
        Ok(())
    }

    pub fn uses_local(&self) -> bool {
        !self.disable_local_view
    }

    pub fn uses_global(&self) -> bool {
        !self.disable_global_view
    }

    /// Contrastive learning needs both views.
    pub fn uses_contrastive(&self) -> bool {
        !self.disable_contrastive && self.uses_local() && self.uses_global()
    }

    pub fn uses_entropy(&self) -> bool {
        !self.disable_domain_adaptation
    }

    /// Short variant label, e.g. `full` or `-CL-DA`.
    pub fn label(&self) -> String {
        let mut s = String::new();
        for (on, tag) in [
            (self.disable_contrastive, "-CL"),
            (self.disable_global_view, "-GV"),
            (self.disable_local_view, "-LV"),
            (self.disable_domain_adaptation, "-DA"),
        ] {
            if on {
                s.push_str(tag);
            }
        }
        if s.is_empty() {
            "full".into()
        } else {
            s
        }
    }
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',')
        .map(|x| {
            x.trim()
                .parse()
                .map_err(|_| Error::invalid(format!("{key}: cannot parse {x:?} as a count")))
        })
        .collect()
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::invalid(format!("{key}: cannot parse {v:?}")))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, x) in [
            ("lambda1", self.lambda1),
            ("lambda2_max", self.lambda2_max),
            ("lambda3", self.lambda3),
            ("weight_decay", self.weight_decay),
            ("gamma", self.gamma),
        ] {
            if !(x >= 0.0) || !x.is_finite() {
                return Err(Error::invalid(format!("{name} = {x} must be finite and >= 0")));
            }
        }
        if !(self.eta0 > 0.0) {
            return Err(Error::invalid("eta0 must be > 0"));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::invalid("temperature must be > 0"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid("alpha must lie in (0, 1)"));
        }
        if self.batch_size == 0 || self.topk == 0 || self.eval_chunk == 0 {
            return Err(Error::invalid("batch_size, topk and eval_chunk must be >= 1"));
        }
        if self.sample_sizes.is_empty() || self.sample_sizes.contains(&0) {
            return Err(Error::invalid("sample_sizes must be a nonempty list of counts >= 1"));
        }
        if self.hidden_dims.len() != self.sample_sizes.len() || self.hidden_dims.contains(&0) {
            return Err(Error::invalid(format!(
                "hidden_dims {:?} must give one nonzero width per depth of sample_sizes {:?}",
                self.hidden_dims, self.sample_sizes
            )));
        }
        if self.iters_per_epoch == Some(0) {
            return Err(Error::invalid("iters_per_epoch must be >= 1"));
        }
        Ok(())
    }

    /// Overrides fields from `key = value` text.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let (k, v) = t
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("config line {}: expected key = value", i + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::invalid(format!("config line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "lambda1" => self.lambda1 = parse(key, v)?,
            "lambda2_max" => self.lambda2_max = parse(key, v)?,
            "lambda2_mode" => {
                self.lambda2_mode = match v {
                    "scale" => Lambda2Mode::Scale,
                    "clamp" => Lambda2Mode::Clamp,
                    _ => return Err(Error::invalid(format!("lambda2_mode: {v:?} is not scale|clamp"))),
                }
            }
            "lambda3" => self.lambda3 = parse(key, v)?,
            "eta0" => self.eta0 = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "iters_per_epoch" => {
                self.iters_per_epoch = match v {
                    "auto" => None,
                    _ => Some(parse(key, v)?),
                }
            }
            "batch_size" => self.batch_size = parse(key, v)?,
            "weight_decay" => self.weight_decay = parse(key, v)?,
            "temperature" => self.temperature = parse(key, v)?,
            "sample_sizes" => self.sample_sizes = parse_list(key, v)?,
            "hidden_dims" => self.hidden_dims = parse_list(key, v)?,
            "alpha" => self.alpha = parse(key, v)?,
            "topk" => self.topk = parse(key, v)?,
            "renormalize_diffusion" => self.renormalize_diffusion = parse(key, v)?,
            "n" => self.n = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "gamma" => self.gamma = parse(key, v)?,
            "diagnostic_every" => self.diagnostic_every = parse(key, v)?,
            "eval_chunk" => self.eval_chunk = parse(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            _ => return Err(Error::invalid(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Serializes every key; `from_text(to_text())` reproduces the config.
    pub fn to_text(&self) -> String {
        let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv("lambda1", self.lambda1.to_string());
        kv("lambda2_max", self.lambda2_max.to_string());
        kv(
            "lambda2_mode",
            match self.lambda2_mode {
                Lambda2Mode::Scale => "scale".into(),
                Lambda2Mode::Clamp => "clamp".into(),
            },
        );
        kv("lambda3", self.lambda3.to_string());
        kv("eta0", self.eta0.to_string());
        kv("epochs", self.epochs.to_string());
        kv(
            "iters_per_epoch",
            self.iters_per_epoch.map_or("auto".into(), |i| i.to_string()),
        );
        kv("batch_size", self.batch_size.to_string());
        kv("weight_decay", self.weight_decay.to_string());
        kv("temperature", self.temperature.to_string());
        kv("sample_sizes", list(&self.sample_sizes));
        kv("hidden_dims", list(&self.hidden_dims));
        kv("alpha", self.alpha.to_string());
        kv("topk", self.topk.to_string());
        kv("renormalize_diffusion", self.renormalize_diffusion.to_string());
        kv("n", self.n.to_string());
        kv("seed", self.seed.to_string());
        kv("gamma", self.gamma.to_string());
        kv("diagnostic_every", self.diagnostic_every.to_string());
        kv("eval_chunk", self.eval_chunk.to_string());
        kv("checkpoint_every", self.checkpoint_every.to_string());
        s
    }
}
