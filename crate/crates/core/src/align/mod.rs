//! Coarse-to-fine global alignment of pairwise and interpolated pointmaps
//! into camera poses, a shared focal length and per-pixel depth.

mod export;
mod flow;
mod graph;
mod init;
mod objective;
mod oracle;
mod solve;

pub use export::{export_solution, read_solution_trajectory};
pub use flow::chain_flow;
pub use graph::{AlignmentGraph, FlowPair, InterpPrediction, Measurement, Node, NodeKind, PairPrediction};
pub use objective::{evaluate_terms, Terms};
pub use oracle::{ground_truth_inputs, sequence_flow, GraphInputs};
pub use solve::{align, coarse_align, fine_align, AlignConfig, AlignLog, LogEntry, Solution, SolvedNode, Stage};
