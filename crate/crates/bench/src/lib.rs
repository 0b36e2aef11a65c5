//! Criterion benchmarks for the qpgap core; see `benches/`.
