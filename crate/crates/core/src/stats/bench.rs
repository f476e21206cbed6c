use serde::{Deserialize, Serialize};

use super::hypothesis::{holm_bonferroni, mcnemar_exact, wilson_interval};
use super::StatsError;
use crate::domain::BenchmarkSheet;

/// Per-model accuracy with its Wilson interval and, for models other than
/// the reference, the paired exact McNemar comparison against it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRow {
    pub model: String,
    pub correct: u64,
    pub total: u64,
    pub accuracy: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// Questions the reference got right and this model got wrong.
    pub b: Option<u64>,
    /// Questions the reference got wrong and this model got right.
    pub c: Option<u64>,
    pub p_raw: Option<f64>,
    pub p_holm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub reference: String,
    pub confidence: f64,
    pub rows: Vec<ModelRow>,
}

/// Accuracy and Wilson intervals for every model; exact McNemar of each
/// model against `reference`, Holm-adjusted across those comparisons.
pub fn benchmark_stats(sheet: &BenchmarkSheet, reference: &str, confidence: f64) -> Result<BenchmarkReport, StatsError> {
    let ref_bits = sheet
        .model(reference)
        .ok_or_else(|| StatsError::UnknownModel(reference.to_string()))?;
    let mut rows = Vec::with_capacity(sheet.models.len());
    let mut raw = Vec::new();
    for (name, bits) in &sheet.models {
        let total = bits.len() as u64;
        let correct = bits.iter().filter(|&&b| b).count() as u64;
        let (ci_lo, ci_hi) = wilson_interval(correct, total, confidence)?;
        let mut row = ModelRow {
            model: name.clone(),
            correct,
            total,
            accuracy: correct as f64 / total as f64,
            ci_lo,
            ci_hi,
            b: None,
            c: None,
            p_raw: None,
            p_holm: None,
        };
        if name != reference {
            let b = ref_bits.iter().zip(bits).filter(|&(&r, &m)| r && !m).count() as u64;
            let c = ref_bits.iter().zip(bits).filter(|&(&r, &m)| !r && m).count() as u64;
            let p = mcnemar_exact(b, c).p_value;
            row.b = Some(b);
            row.c = Some(c);
            row.p_raw = Some(p);
            raw.push((rows.len(), p));
        }
        rows.push(row);
    }
    let adjusted = holm_bonferroni(&raw.iter().map(|&(_, p)| p).collect::<Vec<_>>())?;
    for ((i, _), p) in raw.into_iter().zip(adjusted) {
        rows[i].p_holm = Some(p);
    }
    Ok(BenchmarkReport {
        reference: reference.to_string(),
        confidence,
        rows,
    })
}
