//! Criterion benchmarks live under `benches/`; run `cargo bench -p denoise-bench`.
