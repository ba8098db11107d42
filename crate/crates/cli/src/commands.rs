use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use graphda::autodiff::NamedTensors;
use graphda::graph::write_graph;
use graphda::model::embed_nodes;
use graphda::report::{write_embeddings_csv, write_loss_csv};
use graphda::synth::{generate_pair, SbmSpec};
use graphda::trainer::{divergence_diagnostic, evaluate, evaluation_seed, node_entropies};
use graphda::{common_attribute_rate, AblationFlags, GridCell, Model, Side, TrainConfig, Trainer};
use serde::{Deserialize, Serialize};

use crate::data::{build_base_task, build_task, cache_path, load_pair, write_cache, CacheStatus, DataPaths, GraphPaths};
use crate::{warn, write_file, ConfigArgs, DiffuseArgs, EvalArgs, SweepArgs, SynthArgs, TrainArgs, Usage};

const TOOL: &str = "graphda";

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Everything needed to reproduce a `train` run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub created_unix: u64,
    pub config: TrainConfig,
    pub flags: AblationFlags,
    pub data: DataPaths,
}

impl RunManifest {
    fn new(command: &str, config: &TrainConfig, flags: AblationFlags, data: &DataPaths) -> Self {
        Self {
            tool: TOOL.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            created_unix: now_unix(),
            config: config.clone(),
            flags,
            data: data.clone(),
        }
    }

    fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }

    fn save(&self, path: &Path) -> Result<()> {
        write_file(path, serde_json::to_string_pretty(self)? + "\n")
    }
}

#[derive(Serialize)]
struct SynthManifest<'a> {
    tool: &'a str,
    version: &'a str,
    command: &'a str,
    created_unix: u64,
    spec: &'a SbmSpec,
    common_attribute_rate: f64,
    files: Vec<String>,
}

fn ensure_empty_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        let mut entries = fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))?;
        if entries.next().is_some() {
            return Err(Usage(format!("output directory {} is not empty", dir.display())).into());
        }
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let spec = SbmSpec {
        num_nodes: a.nodes,
        num_classes: a.classes,
        intra_prob: a.intra,
        inter_prob: a.inter,
        attr_dim: a.attr_dim,
        prototype_strength: a.strength,
        domain_shift: a.shift,
        label_noise: a.label_noise,
        seed: a.seed,
    };
    // validate before touching the filesystem
    let (source, target, vocab) = generate_pair(&spec)?;
    ensure_empty_dir(&a.out)?;
    let mut files = Vec::new();
    for (side, g) in [(Side::Source, &source), (Side::Target, &target)] {
        let p = GraphPaths::in_dir(&a.out, side);
        write_graph(g, &vocab, side, &p.edges, &p.attrs, &p.labels)?;
        for f in [&p.edges, &p.attrs, &p.labels] {
            files.push(f.file_name().unwrap().to_string_lossy().into_owned());
        }
    }
    let manifest = SynthManifest {
        tool: TOOL,
        version: env!("CARGO_PKG_VERSION"),
        command: "synth",
        created_unix: now_unix(),
        spec: &spec,
        common_attribute_rate: common_attribute_rate(&vocab),
        files,
    };
    write_file(&a.out.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    println!(
        "synth out={} nodes={} classes={} source_edges={} target_edges={} common_attribute_rate={:.4}",
        a.out.display(),
        spec.num_nodes,
        spec.num_classes,
        source.num_edges(),
        target.num_edges(),
        common_attribute_rate(&vocab)
    );
    Ok(())
}

pub fn diffuse(a: &DiffuseArgs) -> Result<()> {
    let paths = a.data.resolve()?;
    if !(a.alpha > 0.0 && a.alpha < 1.0) || a.topk == 0 {
        return Err(Usage("need 0 < alpha < 1 and topk >= 1".into()).into());
    }
    let pair = load_pair(&paths)?;
    for (side, g) in [(Side::Source, &pair.source), (Side::Target, &pair.target)] {
        let path = cache_path(&paths, side, a.alpha, a.topk);
        let status = match write_cache(g, &path, a.alpha, a.topk, a.force)? {
            CacheStatus::Written => "written",
            CacheStatus::Skipped => {
                warn(&format!("{} exists; skipped (use --force to recompute)", path.display()));
                "skipped"
            }
        };
        println!("diffusion side={} path={} status={status}", side.name(), path.display());
    }
    Ok(())
}

fn build_config(c: &ConfigArgs) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    if let Some(p) = &c.config {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        cfg.apply_text(&text)
            .with_context(|| format!("in config {}", p.display()))?;
    }
    let mut set = |k: &str, v: Option<String>| -> Result<()> {
        if let Some(v) = v {
            cfg.set(k, &v)?;
        }
        Ok(())
    };
    set("alpha", c.alpha.map(|x| x.to_string()))?;
    set("topk", c.topk.map(|x| x.to_string()))?;
    set("n", c.n.map(|x| x.to_string()))?;
    set("seed", c.seed.map(|x| x.to_string()))?;
    set("epochs", c.epochs.map(|x| x.to_string()))?;
    set("iters_per_epoch", c.iters_per_epoch.map(|x| x.to_string()))?;
    set("batch_size", c.batch_size.map(|x| x.to_string()))?;
    set("eta0", c.eta0.map(|x| x.to_string()))?;
    set("lambda1", c.lambda1.map(|x| x.to_string()))?;
    set("lambda2_max", c.lambda2_max.map(|x| x.to_string()))?;
    set("lambda3", c.lambda3.map(|x| x.to_string()))?;
    set("temperature", c.temperature.map(|x| x.to_string()))?;
    set("sample_sizes", c.sample_sizes.clone())?;
    set("hidden_dims", c.hidden_dims.clone())?;
    set("gamma", c.gamma.map(|x| x.to_string()))?;
    for kv in &c.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_variant(v: &str) -> Result<AblationFlags> {
    if v == "full" {
        return Ok(AblationFlags::full());
    }
    Ok(AblationFlags::from_tokens(&v.split('+').collect::<Vec<_>>())?)
}

fn save_model(model: &Model, path: &Path) -> Result<()> {
    Ok(model.to_tensors().save(path)?)
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let (config, flags, paths) = match &a.manifest {
        Some(m) => {
            let man = RunManifest::load(m)?;
            let paths = if a.data.is_empty() { man.data } else { a.data.resolve()? };
            (man.config, man.flags, paths)
        }
        None => (
            build_config(&a.config)?,
            AblationFlags::from_tokens(&a.ablate)?,
            a.data.resolve()?,
        ),
    };
    config.validate()?;
    flags.validate()?;
    let task = build_task(&paths, &config)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let manifest = RunManifest::new("train", &config, flags, &paths);
    manifest.save(&a.out.join("manifest.json"))?;

    let mut trainer = Trainer::new(&task, config.clone(), flags)?;
    let ckpt_dir = a.out.join("checkpoints");
    let every = config.checkpoint_every;
    let report = trainer.run_with(|summary, model| {
        let epoch = summary.epoch + 1;
        eprintln!(
            "graphda: epoch={epoch} L_CE={:.6} L_CL={:.6} L_EN={:.6} overall={:.6}",
            summary.ce, summary.cl, summary.en, summary.overall
        );
        if every > 0 && epoch % every == 0 {
            fs::create_dir_all(&ckpt_dir).map_err(|e| graphda::Error::Io {
                context: ckpt_dir.display().to_string(),
                source: e,
            })?;
            model.to_tensors().save(&ckpt_dir.join(format!("epoch_{epoch:04}.ckpt")))?;
        }
        Ok(())
    })?;

    write_loss_csv(&report.steps, &a.out.join("losses.csv"))?;
    save_model(trainer.model(), &a.out.join("model.ckpt"))?;
    write_file(&a.out.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    if a.embeddings {
        let seed = evaluation_seed(config.seed);
        for (side, d) in [("source", &task.source), ("target", &task.target)] {
            let nodes: Vec<usize> = (0..d.graph.num_nodes()).collect();
            let e = embed_nodes(trainer.model(), d, &nodes, seed, config.eval_chunk)?;
            write_embeddings_csv(&nodes, &e, &a.out.join(format!("embeddings_{side}.csv")))?;
        }
    }
    println!(
        "accuracy={:.6} variant={} seed={} n={} evaluated={}",
        report.accuracy(),
        report.variant,
        report.seed,
        config.n,
        report.evaluation.predictions.len()
    );
    Ok(())
}

#[derive(Serialize)]
struct EvalOutput {
    accuracy: f64,
    evaluated: usize,
    per_class: Vec<graphda::trainer::ClassAccuracy>,
    divergence: Vec<graphda::Divergence>,
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let man = RunManifest::load(&a.run.join("manifest.json"))?;
    let paths = if a.data.is_empty() { man.data.clone() } else { a.data.resolve()? };
    let config = man.config;
    let task = build_task(&paths, &config)?;
    let mut model = Model::init(task.attr_dim(), task.num_classes(), &config, man.flags)?;
    let ckpt = a.checkpoint.clone().unwrap_or_else(|| a.run.join("model.ckpt"));
    model.load_tensors(NamedTensors::load(&ckpt)?)?;

    let seed = evaluation_seed(config.seed);
    let ev = evaluate(&model, &task.target, seed, config.eval_chunk)?;
    let gammas = if a.gamma.is_empty() { vec![config.gamma] } else { a.gamma.clone() };
    let (hs, ht) = node_entropies(&model, &task, seed, config.eval_chunk)?;
    let divergence = gammas
        .iter()
        .map(|&g| divergence_diagnostic(&hs, &ht, g))
        .collect::<graphda::Result<Vec<_>>>()?;

    if a.json {
        let out = EvalOutput {
            accuracy: ev.accuracy,
            evaluated: ev.predictions.len(),
            per_class: ev.per_class,
            divergence,
        };
        println!("{}", serde_json::to_string(&out)?);
        return Ok(());
    }
    let mut s = String::new();
    writeln!(s, "accuracy={:.6} evaluated={}", ev.accuracy, ev.predictions.len())?;
    for c in &ev.per_class {
        let acc = if c.total == 0 { f64::NAN } else { c.correct as f64 / c.total as f64 };
        writeln!(s, "class={} correct={} total={} accuracy={acc:.6}", c.class, c.correct, c.total)?;
    }
    for d in &divergence {
        writeln!(
            s,
            "gamma={} source_frac={:.6} target_frac={:.6} bound={:.6}",
            d.gamma, d.source_frac, d.target_frac, d.bound
        )?;
    }
    print!("{s}");
    Ok(())
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

pub fn sweep(a: &SweepArgs) -> Result<()> {
    let config = build_config(&a.config)?;
    let paths = a.data.resolve()?;
    let variants: Vec<(String, AblationFlags)> = a
        .variants
        .iter()
        .map(|v| Ok((v.clone(), parse_variant(v)?)))
        .collect::<Result<_>>()?;
    let ns = if a.ns.is_empty() { vec![config.n] } else { a.ns.clone() };
    if a.seeds.is_empty() {
        return Err(Usage("--seeds must name at least one seed".into()).into());
    }
    let base = build_base_task(&paths, &config)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    RunManifest::new("sweep", &config, AblationFlags::full(), &paths).save(&a.out.join("manifest.json"))?;

    let mut cells = Vec::new();
    let mut names = Vec::new();
    for (name, flags) in &variants {
        for &n in &ns {
            for &seed in &a.seeds {
                cells.push(GridCell { flags: *flags, seed, n });
                names.push(name.as_str());
            }
        }
    }
    let results = graphda::run_grid(&base, &config, &cells);

    let mut rows = String::from("variant,n,seed,accuracy\n");
    let mut accs: Vec<Vec<f64>> = vec![Vec::new(); variants.len() * ns.len()];
    for (i, r) in results.into_iter().enumerate() {
        let report = r.with_context(|| format!("variant {} n={} seed={}", names[i], cells[i].n, cells[i].seed))?;
        writeln!(rows, "{},{},{},{}", names[i], cells[i].n, cells[i].seed, report.accuracy())?;
        accs[i / a.seeds.len()].push(report.accuracy());
    }
    write_file(&a.out.join("sweep.csv"), rows)?;

    let mut summary = String::from("variant,n,runs,mean,se\n");
    for (vi, (name, _)) in variants.iter().enumerate() {
        for (ni, n) in ns.iter().enumerate() {
            let xs = &accs[vi * ns.len() + ni];
            let (m, se) = mean_se(xs);
            writeln!(summary, "{name},{n},{},{m},{se}", xs.len())?;
            println!("variant={name} n={n} runs={} mean={m:.6} se={se:.6}", xs.len());
        }
    }
    write_file(&a.out.join("summary.csv"), summary)?;
    Ok(())
}
