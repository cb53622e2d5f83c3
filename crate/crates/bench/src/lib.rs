//! Criterion benchmarks for the sampling, forward-pass, continuum-limit and
//! bound-evaluation kernels; run them with `cargo bench -p gmlab-bench`.
