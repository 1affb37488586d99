//! Harness for benchmarking natural-language-to-code generation.
//!
//! Tasks ([`corpus`]) are solved by prompting strategies ([`strategy`]) over a
//! pluggable model backend ([`gateway`]); candidate code is checked by an
//! out-of-process sandbox ([`sandbox`]) and scored with the unbiased pass@k
//! estimator ([`eval`]). The iterative Thought-Code-Observation agent lives in
//! [`agent`].

pub mod agent;
pub mod corpus;
pub mod eval;
pub mod gateway;
pub mod limit;
pub mod sandbox;
pub mod strategy;
