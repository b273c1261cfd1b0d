//! Criterion benchmarks for the hofer-core kernels live in `benches/`.
