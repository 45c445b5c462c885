//! Attention-matrix spectra and cost benchmarks.

pub mod alloc;
mod bench;
mod spectrum;
mod svd;

pub use bench::{
    bench_block, benchmark_attention, loglog_slope, machine_comment, median, stream_full_kernel, time_full_kernel,
    time_kernel_construction, write_bench_csv, BenchConfig, BenchRow, BENCH_HEADER, MIN_WARMUP,
};
pub use spectrum::{
    attention_spectrum_sweep, average_energy, cumulative_energy, k90, svd_spectrum, write_spectrum_csv, LayerSpectrum,
    SpectrumReport, ENERGY_THRESHOLD, SPECTRUM_HEADER,
};
pub use svd::{
    jacobi_singular_values, randomized_singular_values, JACOBI_MAX_SWEEPS, JACOBI_TOL, OVERSAMPLING, POWER_ITERATIONS,
};
