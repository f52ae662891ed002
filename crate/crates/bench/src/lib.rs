//! Criterion benchmarks for the network kernels and the analytics; see
//! `benches/`.
