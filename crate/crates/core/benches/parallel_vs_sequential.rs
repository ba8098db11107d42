use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use graphda::diffusion::{diffuse, sparsify_topk, sparsify_topk_seq, transition_matrix};
use graphda::synth::{generate_pair, SbmSpec};
use graphda::{run_experiment, run_grid, AblationFlags, Domain, GridCell, Matrix, TrainConfig, TransferTask};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn matmul(c: &mut Criterion) {
    let mut g = c.benchmark_group("matmul");
    for n in [64, 256] {
        let (a, b) = (random(n, n, 1), random(n, n, 2));
        g.bench_with_input(BenchmarkId::new("sequential", n), &n, |bch, _| bch.iter(|| a.matmul_seq(&b).unwrap()));
        g.bench_with_input(BenchmarkId::new("parallel", n), &n, |bch, _| bch.iter(|| a.matmul_par(&b).unwrap()));
    }
    g.finish();
}

fn sparsify(c: &mut Criterion) {
    let (s, _, _) = generate_pair(&SbmSpec::default()).unwrap();
    let dense = diffuse(&transition_matrix(&s), 0.1).unwrap();
    let mut g = c.benchmark_group("sparsify_topk");
    g.bench_function("sequential", |b| b.iter(|| sparsify_topk_seq(&dense, 0.1, 32).unwrap()));
    g.bench_function("parallel", |b| b.iter(|| sparsify_topk(&dense, 0.1, 32).unwrap()));
    g.finish();
}

fn seed_grid(c: &mut Criterion) {
    let config = TrainConfig {
        hidden_dims: vec![16, 8],
        sample_sizes: vec![4, 4],
        topk: 8,
        batch_size: 64,
        epochs: 1,
        diagnostic_every: 0,
        ..TrainConfig::default()
    };
    let (s, t, _) = generate_pair(&SbmSpec { num_nodes: 300, ..SbmSpec::default() }).unwrap();
    let base = TransferTask::new(
        Domain::with_computed_diffusion(s, &config).unwrap(),
        Domain::with_computed_diffusion(t, &config).unwrap(),
    )
    .unwrap();
    let cells: Vec<GridCell> = (0..4).map(|seed| GridCell { flags: AblationFlags::full(), seed, n: 5 }).collect();
    let mut g = c.benchmark_group("seed_grid");
    g.sample_size(10);
    g.bench_function("sequential", |b| {
        b.iter(|| {
            for cell in &cells {
                let cfg = TrainConfig { seed: cell.seed, ..config.clone() };
                run_experiment(&base.relabel(cell.n, cell.seed).unwrap(), &cfg, cell.flags).unwrap();
            }
        })
    });
    g.bench_function("parallel", |b| b.iter(|| run_grid(&base, &config, &cells)));
    g.finish();
}

criterion_group!(benches, matmul, sparsify, seed_grid);
criterion_main!(benches);
