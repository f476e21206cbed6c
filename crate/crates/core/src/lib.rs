//! Closed-loop active learning for ranking candidate additives under low
//! data: hybrid hard + soft featurization, a Matérn Gaussian-process
//! surrogate, expected-improvement acquisition with expert feasibility
//! review, durable campaign state, and the evaluation statistics used to
//! judge all of it.

pub mod acquire;
pub mod campaign;
pub mod domain;
pub mod featurize;
pub mod normal;
pub mod oracle;
pub mod par;
pub mod stats;
pub mod surrogate;
pub mod synthetic;
