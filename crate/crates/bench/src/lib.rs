//! Criterion benchmarks for radnav-core; see `benches/`.
