//! Criterion benchmarks for careledger; see `benches/`.
