//! Benchmarks live in `benches/`; see `cargo bench -p jorlin-bench`.
