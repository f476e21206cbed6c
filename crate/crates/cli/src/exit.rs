//! Maps failures to exit codes: 1 validation, 2 runtime, 3 numerical.

use alprio_core::acquire::AcquireError;
use alprio_core::campaign::{CampaignError, StoreError};
use alprio_core::domain::DomainError;
use alprio_core::featurize::FeaturizeError;
use alprio_core::oracle::OracleError;
use alprio_core::stats::StatsError;
use alprio_core::surrogate::SurrogateError;

pub const OK: i32 = 0;
pub const VALIDATION: i32 = 1;
pub const RUNTIME: i32 = 2;
pub const NUMERICAL: i32 = 3;

/// Bad input that no other error type covers.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct Invalid(pub String);

pub fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

fn surrogate(e: &SurrogateError) -> i32 {
    match e {
        SurrogateError::NumericalFailure(_) | SurrogateError::NonFinite => NUMERICAL,
        _ => VALIDATION,
    }
}

fn stats(e: &StatsError) -> i32 {
    match e {
        StatsError::Surrogate(s) => surrogate(s),
        StatsError::Fold { source, .. } => stats(source),
        _ => VALIDATION,
    }
}

fn oracle(e: &OracleError) -> i32 {
    match e {
        OracleError::Transport { .. } => RUNTIME,
        _ => VALIDATION,
    }
}

fn campaign(e: &CampaignError) -> i32 {
    match e {
        CampaignError::Surrogate(s) => surrogate(s),
        CampaignError::Oracle(o) => oracle(o),
        _ => VALIDATION,
    }
}

pub fn code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CampaignError>() {
            return campaign(e);
        }
        if let Some(e) = cause.downcast_ref::<StoreError>() {
            return match e {
                StoreError::Campaign(c) => campaign(c),
                StoreError::Exists(_) | StoreError::Missing(_) => VALIDATION,
                _ => RUNTIME,
            };
        }
        if let Some(e) = cause.downcast_ref::<StatsError>() {
            return stats(e);
        }
        if let Some(e) = cause.downcast_ref::<SurrogateError>() {
            return surrogate(e);
        }
        if let Some(e) = cause.downcast_ref::<OracleError>() {
            return oracle(e);
        }
        if let Some(e) = cause.downcast_ref::<DomainError>() {
            return match e {
                DomainError::Io { .. } => RUNTIME,
                _ => VALIDATION,
            };
        }
        if cause.is::<FeaturizeError>() || cause.is::<AcquireError>() || cause.is::<Invalid>() {
            return VALIDATION;
        }
        if cause.is::<std::io::Error>() {
            return RUNTIME;
        }
    }
    RUNTIME
}
