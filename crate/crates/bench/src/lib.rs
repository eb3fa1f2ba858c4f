//! Criterion benchmarks for the hot paths of `etad-core`; see `benches/`.
//!
//! Run with `cargo bench -p etad-bench`.
