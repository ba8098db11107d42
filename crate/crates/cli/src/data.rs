//! Dataset paths, graph loading and the diffusion cache.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use graphda::diffusion::{self, DiffusionMatrix};
use graphda::graph::{load_graph, read_attribute_tokens, LoadOptions};
use graphda::{align_attributes, Domain, Graph, Side, TrainConfig, TransferTask};
use serde::{Deserialize, Serialize};

use crate::{warn, Usage};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphPaths {
    pub edges: PathBuf,
    pub attrs: PathBuf,
    pub labels: PathBuf,
}

impl GraphPaths {
    pub fn in_dir(dir: &Path, side: Side) -> Self {
        let f = |ext: &str| dir.join(format!("{}.{ext}", side.name()));
        Self {
            edges: f("edges"),
            attrs: f("attrs"),
            labels: f("labels"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataPaths {
    pub source: GraphPaths,
    pub target: GraphPaths,
    /// Where diffusion caches live.
    pub cache_dir: PathBuf,
}

#[derive(Args, Clone, Debug, Default)]
pub struct DataArgs {
    /// Dataset directory holding {source,target}.{edges,attrs,labels}.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub source_edges: Option<PathBuf>,
    #[arg(long)]
    pub source_attrs: Option<PathBuf>,
    #[arg(long)]
    pub source_labels: Option<PathBuf>,
    #[arg(long)]
    pub target_edges: Option<PathBuf>,
    #[arg(long)]
    pub target_attrs: Option<PathBuf>,
    #[arg(long)]
    pub target_labels: Option<PathBuf>,
    /// Directory for diffusion caches; defaults to the dataset directory.
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
}

impl DataArgs {
    pub fn is_empty(&self) -> bool {
        self.data.is_none()
            && [
                &self.source_edges,
                &self.source_attrs,
                &self.source_labels,
                &self.target_edges,
                &self.target_attrs,
                &self.target_labels,
            ]
            .iter()
            .all(|p| p.is_none())
    }

    /// Explicit file flags override the files implied by `--data`.
    pub fn resolve(&self) -> Result<DataPaths> {
        let pick = |explicit: &Option<PathBuf>, side: Side, ext: &str| -> Result<PathBuf> {
            match (explicit, &self.data) {
                (Some(p), _) => Ok(p.clone()),
                (None, Some(d)) => Ok(d.join(format!("{}.{ext}", side.name()))),
                (None, None) => Err(Usage(format!(
                    "missing --{}-{ext} (or --data DIR)",
                    side.name()
                ))
                .into()),
            }
        };
        let source = GraphPaths {
            edges: pick(&self.source_edges, Side::Source, "edges")?,
            attrs: pick(&self.source_attrs, Side::Source, "attrs")?,
            labels: pick(&self.source_labels, Side::Source, "labels")?,
        };
        let target = GraphPaths {
            edges: pick(&self.target_edges, Side::Target, "edges")?,
            attrs: pick(&self.target_attrs, Side::Target, "attrs")?,
            labels: pick(&self.target_labels, Side::Target, "labels")?,
        };
        let cache_dir = self
            .cache_dir
            .clone()
            .or_else(|| self.data.clone())
            .or_else(|| source.edges.parent().map(Path::to_path_buf))
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(DataPaths {
            source,
            target,
            cache_dir,
        })
    }
}

pub struct LoadedPair {
    pub source: Graph,
    pub target: Graph,
}

pub fn load_pair(paths: &DataPaths) -> Result<LoadedPair> {
    let s_tokens = read_attribute_tokens(&paths.source.attrs)?;
    let t_tokens = read_attribute_tokens(&paths.target.attrs)?;
    let vocab = align_attributes(&s_tokens, &t_tokens)?;
    let g = |p: &GraphPaths, side, opts| load_graph(&p.edges, &p.attrs, &p.labels, &vocab, side, opts);
    let source = g(&paths.source, Side::Source, LoadOptions::default())?;
    let target = g(
        &paths.target,
        Side::Target,
        LoadOptions {
            num_classes: Some(source.num_classes()),
            ..LoadOptions::default()
        },
    )?;
    Ok(LoadedPair { source, target })
}

pub fn cache_path(paths: &DataPaths, side: Side, alpha: f64, topk: usize) -> PathBuf {
    let stem = match side {
        Side::Source => &paths.source.edges,
        Side::Target => &paths.target.edges,
    }
    .file_stem()
    .and_then(|s| s.to_str())
    .unwrap_or(side.name())
    .to_string();
    paths
        .cache_dir
        .join(format!("{stem}.alpha{alpha}.top{topk}.diffusion"))
}

pub enum CacheStatus {
    Written,
    Skipped,
}

/// Computes and writes one cache unless it exists and `force` is off.
pub fn write_cache(graph: &Graph, path: &Path, alpha: f64, topk: usize, force: bool) -> Result<CacheStatus> {
    if path.exists() && !force {
        return Ok(CacheStatus::Skipped);
    }
    let d = diffusion::compute(graph, alpha, topk)?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    d.save(path)?;
    Ok(CacheStatus::Written)
}

/// Reads the cache, computing it first (with a warning) when missing.
pub fn cached_diffusion(graph: &Graph, path: &Path, config: &TrainConfig) -> Result<DiffusionMatrix> {
    if !path.exists() {
        warn(&format!(
            "diffusion cache {} missing; computing it now",
            path.display()
        ));
        write_cache(graph, path, config.alpha, config.topk, false)?;
    }
    let d = DiffusionMatrix::load(path)?;
    if d.alpha() != config.alpha || d.s() != config.topk || d.num_nodes() != graph.num_nodes() {
        return Err(Usage(format!(
            "cache {} was built for alpha={} topk={} nodes={}, need alpha={} topk={} nodes={}",
            path.display(),
            d.alpha(),
            d.s(),
            d.num_nodes(),
            config.alpha,
            config.topk,
            graph.num_nodes()
        ))
        .into());
    }
    Ok(if config.renormalize_diffusion {
        d.renormalized()
    } else {
        d
    })
}

/// Loads both graphs and their diffusions; no target labels are revealed yet.
pub fn build_base_task(paths: &DataPaths, config: &TrainConfig) -> Result<TransferTask> {
    let pair = load_pair(paths)?;
    let ds = cached_diffusion(&pair.source, &cache_path(paths, Side::Source, config.alpha, config.topk), config)?;
    let dt = cached_diffusion(&pair.target, &cache_path(paths, Side::Target, config.alpha, config.topk), config)?;
    Ok(TransferTask::new(Domain::new(pair.source, ds)?, Domain::new(pair.target, dt)?)?)
}

/// [`build_base_task`] plus the labeled target set drawn from `config.n` and `config.seed`.
pub fn build_task(paths: &DataPaths, config: &TrainConfig) -> Result<TransferTask> {
    Ok(build_base_task(paths, config)?.relabel(config.n, config.seed)?)
}
