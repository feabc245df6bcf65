//! Criterion benchmarks for the hot paths of `local_dsm`; see `benches/`.
