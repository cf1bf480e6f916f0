//! Criterion benchmarks for the factorization core; see `benches/nmf.rs`.
