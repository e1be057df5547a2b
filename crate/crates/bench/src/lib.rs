//! Criterion benchmarks for the kernels and the sampler; see `benches/`.
