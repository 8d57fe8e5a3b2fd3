//! Criterion benchmarks for the matching, scaling and engine layers; see
//! `benches/solvers.rs`.
