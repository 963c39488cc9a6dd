//! Benchmarks for the sampler and the Kronecker-moment engine live in
//! `benches/`; this crate has no library code of its own.
