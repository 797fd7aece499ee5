//! Reproduction harness: benchmarks, synthetic instruments, the steering demo
//! and stream tailing.

pub mod bench;
pub mod checks;
pub mod steering;
pub mod synthetic;
pub mod tail;

pub use bench::{bench_chunks, bench_scale, bench_stream, BenchParams, BenchReport, Conservation, ScaleOptions};
pub use checks::{all_passed, Check};
pub use steering::{steering_demo, Controller, Disturbance, SteeringOptions, Transcript};
pub use synthetic::{SourceKind, SyntheticSource};
pub use tail::{format_line, PreviewFormat};
