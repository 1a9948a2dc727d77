pub mod tensor;
pub mod graph;
pub mod frontend;
pub mod passes;
pub mod zoo;
pub mod oracle;
pub mod kernels;
pub mod dataflow;
pub mod schedule;
pub mod engine;
pub mod ring;
