//! Benchmarks for the path, height and verification kernels live in `benches/`.
