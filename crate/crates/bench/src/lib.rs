//! Criterion benchmarks for the distortion kernels live in `benches/`.
