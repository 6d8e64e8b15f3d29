//! ark: an iterative knowledge-graph exploration agent with an LLM in the loop.
//!
//! The agent answers natural-language yes/no questions against a property
//! graph by repeatedly asking a language model to pick an anchor entity,
//! pick one of its outgoing relations, select the retrieved tuples that
//! matter, and state what they imply. After each step the working context
//! is collapsed to a summary, so context size stays bounded no matter how
//! many hops the question needs. A final call turns the accumulated
//! summaries into a `True` / `False` / `None` verdict.
//!
//! Everything the model says travels through a small fenced-block reply
//! grammar (see [`prompt`]), and every run produces a structured trace that
//! can be replayed or redacted (see [`agent::trace`]). Backends are
//! pluggable: scripted transcripts for deterministic tests and replay, or
//! any OpenAI-compatible HTTP endpoint for live runs (see [`llm`]).
//!
//! The fastest way to get a feel for the crate is the examples directory:
//!
//! ```text
//! cargo run --example explore_graph        load a graph, query heads/relations/tuples
//! cargo run --example scripted_run         full agent run from a scripted transcript
//! cargo run --example conflicting_evidence same graph, two transcripts, two verdicts
//! cargo run --example prompt_grammar       render stage prompts, parse reply blocks
//! cargo run --example metrics_tour         answer rate, accuracies, reliability, ± columns
//! cargo run --example evaluate_dataset     multi-question evaluation to a report file
//! cargo run --example replay_trace         narrative replay of a saved trace
//! cargo run --example remote_backend       live run against an OpenAI-compatible server
//! ```
//!
//! The `ark` binary wraps the same library surface in four subcommands
//! (`ask`, `eval`, `replay`, `report`); see [`cli`].

pub mod agent;
pub mod cli;
pub mod eval;
pub mod graph;
pub mod llm;
pub mod prompt;

pub use agent::{run, AgentConfig, AgentOutcome, TerminationReason};
pub use eval::Verdict;
pub use graph::{PropertyGraph, Tuple};
pub use llm::{LlmBackend, ScriptedTranscript};
pub use prompt::PromptPack;
