//! Rescaling of coarse ordinal human judgments onto a rubric-anchored
//! 0-100 scale, driven by the annotators' natural-language explanations,
//! plus the agreement and evaluation statistics to judge the result.
//!
//! Annotators assign a four-level completeness label to each machine
//! answer, mark the missing sentences and explain their decision. The
//! rescaler embeds all of that in a prompt anchored by a point-deduction
//! rubric and asks a scoring backend (a live chat-completions model, or
//! a deterministic offline oracle) for a fine-grained score. Extreme
//! labels skip the backend and receive fixed endpoint scores.
//!
//! The crate is organized by pipeline stage:
//!
//! - [`model`]: documents, QA items, judgments, rubrics, scores,
//!   validation.
//! - [`io`]: line-delimited dataset files and the rubric document.
//! - [`prompt`]: template rendering for both prompt variants.
//! - [`rescale`]: policy routing, backends, score parsing, batch runs.
//! - [`baselines`]: static mapping, averaged-score mapping, the
//!   missing-sentences heuristic and its deduction optimizer.
//! - [`metrics`]: Kendall tau-b with tie-adjusted significance, Fleiss
//!   kappa, pairwise annotator agreement, label distributions.
//! - [`llm`]: OpenAI-compatible HTTP backend with retry and a
//!   content-addressed response cache.
//! - [`report`]: method-versus-reference tables, expert agreement,
//!   agreement shift, per-label averages, stability runs.
//! - [`manifest`]: reproducibility manifests written beside artifacts.
//! - [`cli`]: the `ebr` command-line tool wiring it all together.
//!
//! The `examples/` directory has one runnable example per capability;
//! start with `validate_dataset` and `rescale_with_oracle`.

pub mod baselines;
pub mod cli;
pub mod io;
pub mod llm;
pub mod manifest;
pub mod metrics;
pub mod model;
pub mod prompt;
pub mod report;
pub mod rescale;
