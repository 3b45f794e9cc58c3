//! Criterion benchmarks for the ndpoly core crate; see `benches/`.
