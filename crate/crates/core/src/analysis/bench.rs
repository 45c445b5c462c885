use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::alloc;
use crate::attention::{head_kernels, Attention, AttentionBlock, Mechanism, DEFAULT_MEMORY_BUDGET};
use crate::counters::{self, Counter, Counts};
use crate::error::{Error, Result};
use crate::tensor::{FieldTensor, Matrix};
use crate::train::CsvSink;

pub const BENCH_HEADER: &str = "mechanism,grid,d_k,enc_time,fwd_bwd_time,peak_bytes,mul_add_count";
pub const MIN_WARMUP: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub mechanisms: Vec<Mechanism>,
    /// Axial sizes `S` of square 2-D grids.
    pub grids: Vec<usize>,
    pub head_dims: Vec<usize>,
    pub width: usize,
    pub heads: usize,
    pub lambda: f64,
    pub reps: usize,
    pub warmup: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            mechanisms: vec![Mechanism::Factorized, Mechanism::Linear],
            grids: vec![128],
            head_dims: vec![64, 128, 192],
            width: 128,
            heads: 8,
            lambda: 64.0,
            reps: 10,
            warmup: MIN_WARMUP,
            seed: 0,
        }
    }
}

/// One benchmarked configuration of a single attention block.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub mechanism: Mechanism,
    pub grid: usize,
    pub d_k: usize,
    /// Median forward time of the block (attention, normalization, feedforward), seconds.
    pub enc_time: f64,
    /// Median forward plus backward time, seconds.
    pub fwd_bwd_time: f64,
    /// Bytes allocated above the starting live size during one forward and backward.
    pub peak_bytes: usize,
    /// Multiply-adds of the attention core in one forward: kernel
    /// construction plus mode products, or the two linear-attention products.
    pub mul_add_count: u64,
}

impl BenchRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{}x{},{},{},{},{},{}",
            self.mechanism, self.grid, self.grid, self.d_k, self.enc_time, self.fwd_bwd_time, self.peak_bytes, self.mul_add_count
        )
    }
}

pub fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn random_field(shape: &[usize], rng: &mut ChaCha8Rng) -> FieldTensor {
    let len = shape.iter().product();
    FieldTensor::new(shape.to_vec(), (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn core_count(mechanism: Mechanism, c: &Counts) -> u64 {
    match mechanism {
        Mechanism::Factorized => c.get(Counter::KernelBuild) + c.get(Counter::ModeProduct),
        Mechanism::Linear => c.get(Counter::LinearCore),
    }
}

/// Times one block configuration; `Ok(None)` when it does not fit the memory budget.
pub fn bench_block(
    mechanism: Mechanism,
    s: usize,
    d_k: usize,
    cfg: &BenchConfig,
    log: &mut dyn FnMut(&str),
) -> Result<Option<BenchRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut block = AttentionBlock::new(mechanism, "bench", 2, cfg.width, cfg.heads, d_k, cfg.lambda, &mut rng)?;
    if let Attention::Linear(a) = &block.attn {
        let need = a.working_set(s * s);
        if need > DEFAULT_MEMORY_BUDGET {
            log(&format!(
                "skip {mechanism} {s}x{s} d_k={d_k}: working set {need} bytes exceeds budget {DEFAULT_MEMORY_BUDGET}"
            ));
            return Ok(None);
        }
    }
    let shape = [s, s, cfg.width];
    let u = random_field(&shape, &mut rng);
    let g = random_field(&shape, &mut rng);
    for _ in 0..cfg.warmup {
        let (_, cache) = block.forward(&u)?;
        block.backward(&cache, &g);
    }
    let mut enc = Vec::with_capacity(cfg.reps);
    let mut total = Vec::with_capacity(cfg.reps);
    let mut peak = 0;
    let mut count = 0;
    for rep in 0..cfg.reps {
        let base = alloc::current_bytes();
        alloc::reset_peak();
        let c0 = Counts::now();
        let t0 = Instant::now();
        let (y, cache) = block.forward(&u)?;
        let t1 = Instant::now();
        let c1 = Counts::now();
        block.backward(&cache, &g);
        drop(cache);
        drop(y);
        let t2 = Instant::now();
        if rep == 0 {
            peak = alloc::peak_bytes().saturating_sub(base);
            count = core_count(mechanism, &c1.since(&c0));
        }
        enc.push((t1 - t0).as_secs_f64());
        total.push((t2 - t0).as_secs_f64());
    }
    Ok(Some(BenchRow {
        mechanism,
        grid: s,
        d_k,
        enc_time: median(&mut enc),
        fwd_bwd_time: median(&mut total),
        peak_bytes: peak,
        mul_add_count: count,
    }))
}

/// Runs every mechanism, grid and kernel dimension. Configurations over
/// budget are logged and skipped.
pub fn benchmark_attention(cfg: &BenchConfig, log: &mut dyn FnMut(&str)) -> Result<Vec<BenchRow>> {
    if cfg.warmup < MIN_WARMUP || cfg.reps == 0 {
        return Err(Error::Config(format!(
            "benchmarks need at least {MIN_WARMUP} warm-up reps and one timed rep, got {} and {}",
            cfg.warmup, cfg.reps
        )));
    }
    let mut rows = Vec::new();
    for &mechanism in &cfg.mechanisms {
        for &s in &cfg.grids {
            for &d_k in &cfg.head_dims {
                if let Some(row) = bench_block(mechanism, s, d_k, cfg, log)? {
                    log(&row.csv());
                    rows.push(row);
                }
            }
        }
    }
    Ok(rows)
}

pub fn machine_comment(cfg: &BenchConfig) -> String {
    let cpus = std::thread::available_parallelism().map_or(0, |n| n.get());
    format!(
        "# machine: os={} arch={} cpus={cpus} threads=1 reps={} warmup={} width={} heads={} alloc_tracking={}",
        std::env::consts::OS,
        std::env::consts::ARCH,
        cfg.reps,
        cfg.warmup,
        cfg.width,
        cfg.heads,
        alloc::is_active()
    )
}

/// Writes the machine comment and every row. The sink must already carry [`BENCH_HEADER`].
pub fn write_bench_csv(sink: &mut CsvSink, cfg: &BenchConfig, rows: &[BenchRow]) -> Result<()> {
    sink.row(&machine_comment(cfg))?;
    rows.iter().try_for_each(|r| sink.row(&r.csv()))
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Median time to build all heads' axial kernels `Q~ K~^T / S` on an axis of size `s`.
pub fn time_kernel_construction(s: usize, heads: usize, d_k: usize, reps: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = Matrix::from_fn(s, heads * d_k, |_, _| rng.random_range(-1.0..1.0));
    let k = Matrix::from_fn(s, heads * d_k, |_, _| rng.random_range(-1.0..1.0));
    let mut times: Vec<f64> = (0..reps)
        .map(|_| {
            let t = Instant::now();
            let a = head_kernels(&q, &k, heads, 1.0 / s as f64);
            std::hint::black_box(&a);
            t.elapsed().as_secs_f64()
        })
        .collect();
    median(&mut times)
}

/// Evaluates every entry of the `N x N` kernel `(1/N) Q K^T` (`N = s^2`,
/// one head) one row at a time into a reused buffer, passing each row to
/// `sink`. Returns the number of multiply-adds, also charged to
/// [`Counter::FullKernel`].
pub fn stream_full_kernel(q: &Matrix, k: &Matrix, sink: &mut dyn FnMut(usize, &[f64])) -> Result<u64> {
    let (n, d) = q.shape();
    if k.shape() != (n, d) {
        return Err(Error::contract(format!("queries {:?} and keys {:?}", q.shape(), k.shape())));
    }
    let kt = k.transpose();
    let inv_n = 1.0 / n as f64;
    let mut row = vec![0.0; n];
    for i in 0..n {
        row.fill(0.0);
        for (l, &ql) in q.row(i).iter().enumerate() {
            let ql = ql * inv_n;
            row.iter_mut().zip(kt.row(l)).for_each(|(r, kv)| *r += ql * kv);
        }
        sink(i, &row);
    }
    let macs = (n * n * d) as u64;
    counters::add(Counter::FullKernel, macs);
    Ok(macs)
}

/// Median time to stream the full kernel on an `s x s` grid.
pub fn time_full_kernel(s: usize, d_k: usize, reps: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = s * s;
    let q = Matrix::from_fn(n, d_k, |_, _| rng.random_range(-1.0..1.0));
    let k = Matrix::from_fn(n, d_k, |_, _| rng.random_range(-1.0..1.0));
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let mut checksum = 0.0;
        let t = Instant::now();
        stream_full_kernel(&q, &k, &mut |_, r| checksum += r[0])?;
        times.push(t.elapsed().as_secs_f64());
        std::hint::black_box(checksum);
    }
    Ok(median(&mut times))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::full_kernel;

    fn tiny(mechanisms: Vec<Mechanism>) -> BenchConfig {
        BenchConfig {
            mechanisms,
            grids: vec![8],
            head_dims: vec![4],
            width: 8,
            heads: 2,
            reps: 1,
            ..BenchConfig::default()
        }
    }

    #[test]
    fn factorized_count_matches_closed_form() {
        for (s, d_k) in [(8, 4), (12, 6), (16, 4)] {
            let cfg = BenchConfig { grids: vec![s], head_dims: vec![d_k], ..tiny(vec![Mechanism::Factorized]) };
            let row = bench_block(Mechanism::Factorized, s, d_k, &cfg, &mut |_| {}).unwrap().unwrap();
            let (s, d_k, h, d) = (s as u64, d_k as u64, cfg.heads as u64, cfg.width as u64);
            assert_eq!(row.mul_add_count, 2 * s * s * d_k * h + 2 * s * s * s * d);
        }
    }

    #[test]
    fn kernel_construction_count_quadruples_with_s() {
        let count = |s: usize| {
            let q = Matrix::zeros(s, 8);
            let c0 = Counts::now();
            head_kernels(&q, &q, 2, 1.0);
            Counts::now().since(&c0).get(Counter::KernelBuild)
        };
        assert_eq!(count(32), 4 * count(16));
    }

    #[test]
    fn linear_count_is_linear_in_points() {
        let cfg = tiny(vec![Mechanism::Linear]);
        let a = bench_block(Mechanism::Linear, 8, 4, &cfg, &mut |_| {}).unwrap().unwrap();
        let b = bench_block(Mechanism::Linear, 16, 4, &cfg, &mut |_| {}).unwrap().unwrap();
        assert_eq!(b.mul_add_count, 4 * a.mul_add_count);
        // Two products of N x d_k x d_k per head.
        assert_eq!(a.mul_add_count, 2 * 64 * 2 * 4 * 4);
    }

    #[test]
    fn one_row_per_mechanism() {
        let cfg = tiny(vec![Mechanism::Factorized, Mechanism::Linear]);
        let rows = benchmark_attention(&cfg, &mut |_| {}).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.enc_time > 0.0 && r.fwd_bwd_time >= r.enc_time));
        assert_eq!(rows[0].csv().split(',').count(), BENCH_HEADER.split(',').count());
        assert!(benchmark_attention(&BenchConfig { warmup: 2, ..cfg }, &mut |_| {}).is_err());
    }

    #[test]
    fn streamed_kernel_matches_materialized() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = Matrix::from_fn(20, 3, |_, _| rng.random_range(-1.0..1.0));
        let k = Matrix::from_fn(20, 3, |_, _| rng.random_range(-1.0..1.0));
        let full = full_kernel(&q, &k, 1, 0).unwrap();
        let mut worst = 0.0f64;
        let macs = stream_full_kernel(&q, &k, &mut |i, row| {
            for (j, v) in row.iter().enumerate() {
                worst = worst.max((v - full.get(i, j)).abs());
            }
        })
        .unwrap();
        assert!(worst <= 1e-15);
        assert_eq!(macs, 20 * 20 * 3);
    }

    #[test]
    fn slope_of_power_law() {
        let xs = [64.0, 128.0, 256.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powi(2)).collect();
        assert!((loglog_slope(&xs, &ys) - 2.0).abs() < 1e-12);
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
