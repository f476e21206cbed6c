//! Soft-profile aggregation and hybrid feature-matrix assembly.
//!
//! Column order is fixed: sorted hard descriptor names, then the six soft
//! means, then the six soft standard deviations (each filtered by mode).
//! Columns constant over all rows are pruned; columns constant over the
//! training rows alone are pruned as well and recorded separately. The
//! scaler is fitted on training rows only and applied to every row.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Dimension, MoleculeRecord, SoftSample};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeaturizeError {
    #[error("no parsed soft samples for `{0}`")]
    NoParsedSamples(String),
    #[error("soft sample for `{found}` passed while aggregating `{expected}`")]
    MixedMolecules { expected: String, found: String },
    #[error("no soft profile for `{0}`")]
    MissingProfile(String),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("training id `{0}` is not among the assembled molecules")]
    UnknownTrainingId(String),
    #[error("molecule `{0}` appears twice")]
    DuplicateMolecule(String),
    #[error("every feature column is constant")]
    AllConstant,
    #[error("molecule `{0}` is not in the feature matrix")]
    UnknownMolecule(String),
    #[error("molecule `{molecule_id}` lacks feature `{feature}`")]
    MissingFeature { molecule_id: String, feature: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftProfile {
    pub molecule_id: String,
    pub mean: [f64; 6],
    pub std: [f64; 6],
    pub n_parsed: usize,
    /// Samples requested from the oracle, when known. `n_parsed < n_requested`
    /// means some responses were dropped as unparsable.
    pub n_requested: Option<usize>,
}

impl SoftProfile {
    pub fn incomplete(&self) -> bool {
        self.n_requested.is_some_and(|n| self.n_parsed < n)
    }
}

/// Per-dimension mean and population standard deviation over parsed samples.
pub fn aggregate_soft(molecule_id: &str, samples: &[SoftSample]) -> Result<SoftProfile, FeaturizeError> {
    if samples.is_empty() {
        return Err(FeaturizeError::NoParsedSamples(molecule_id.to_string()));
    }
    if let Some(s) = samples.iter().find(|s| s.molecule_id != molecule_id) {
        return Err(FeaturizeError::MixedMolecules {
            expected: molecule_id.to_string(),
            found: s.molecule_id.clone(),
        });
    }
    let n = samples.len() as f64;
    let mut mean = [0.0; 6];
    let mut std = [0.0; 6];
    for d in 0..6 {
        let m = samples.iter().map(|s| s.scores.0[d]).sum::<f64>() / n;
        let var = samples.iter().map(|s| (s.scores.0[d] - m).powi(2)).sum::<f64>() / n;
        mean[d] = m;
        std[d] = var.sqrt();
    }
    Ok(SoftProfile {
        molecule_id: molecule_id.to_string(),
        mean,
        std,
        n_parsed: samples.len(),
        n_requested: None,
    })
}

/// Groups samples by molecule and aggregates each group.
pub fn aggregate_all(samples: &[SoftSample]) -> Result<BTreeMap<String, SoftProfile>, FeaturizeError> {
    let mut groups: BTreeMap<&str, Vec<SoftSample>> = BTreeMap::new();
    for s in samples {
        groups.entry(s.molecule_id.as_str()).or_default().push(s.clone());
    }
    groups
        .into_iter()
        .map(|(id, mut g)| {
            g.sort_by_key(|s| s.sample_idx);
            aggregate_soft(id, &g).map(|p| (id.to_string(), p))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RepresentationMode {
    Hard,
    MechSoft,
    FullSoft,
    #[default]
    Hybrid,
}

impl RepresentationMode {
    pub const ALL: [RepresentationMode; 4] = [
        RepresentationMode::Hard,
        RepresentationMode::MechSoft,
        RepresentationMode::FullSoft,
        RepresentationMode::Hybrid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RepresentationMode::Hard => "hard",
            RepresentationMode::MechSoft => "mech_soft",
            RepresentationMode::FullSoft => "full_soft",
            RepresentationMode::Hybrid => "hybrid",
        }
    }

    pub fn uses_hard(self) -> bool {
        matches!(self, RepresentationMode::Hard | RepresentationMode::Hybrid)
    }

    pub fn uses_soft(self) -> bool {
        self != RepresentationMode::Hard
    }

    fn soft_dims(self) -> &'static [Dimension] {
        match self {
            RepresentationMode::Hard => &[],
            RepresentationMode::MechSoft => &Dimension::ALL[..5],
            RepresentationMode::FullSoft | RepresentationMode::Hybrid => &Dimension::ALL,
        }
    }
}

impl std::str::FromStr for RepresentationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RepresentationMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown representation mode `{s}`"))
    }
}

impl std::fmt::Display for RepresentationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

pub fn soft_mean_name(d: Dimension) -> String {
    format!("soft_mean_{}", d.name())
}

pub fn soft_std_name(d: Dimension) -> String {
    format!("soft_std_{}", d.name())
}

/// Unpruned column names for `mode`, in canonical order.
pub fn candidate_feature_names(mode: RepresentationMode, hard_names: &[String]) -> Vec<String> {
    let mut names = Vec::new();
    if mode.uses_hard() {
        let mut hard = hard_names.to_vec();
        hard.sort();
        names.extend(hard);
    }
    names.extend(mode.soft_dims().iter().map(|&d| soft_mean_name(d)));
    names.extend(mode.soft_dims().iter().map(|&d| soft_std_name(d)));
    names
}

fn raw_value(mol: &MoleculeRecord, profile: Option<&SoftProfile>, name: &str) -> Option<f64> {
    if let Some(dim) = name.strip_prefix("soft_mean_") {
        let d = Dimension::ALL.iter().find(|d| d.name() == dim)?;
        return profile.map(|p| p.mean[d.index()]);
    }
    if let Some(dim) = name.strip_prefix("soft_std_") {
        let d = Dimension::ALL.iter().find(|d| d.name() == dim)?;
        return profile.map(|p| p.std[d.index()]);
    }
    mol.hard.get(name).copied()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub molecule_ids: Vec<String>,
    pub feature_names: Vec<String>,
    /// Row-major `n x d` standardized values.
    pub values: Vec<f64>,
    pub scaler: Scaler,
    /// Columns constant over every assembled row.
    pub dropped_constant: Vec<String>,
    /// Columns varying over the pool but constant over the training rows.
    pub dropped_training_constant: Vec<String>,
    pub representation_mode: RepresentationMode,
    pub training_ids: Vec<String>,
}

impl FeatureMatrix {
    pub fn nrows(&self) -> usize {
        self.molecule_ids.len()
    }

    pub fn ncols(&self) -> usize {
        self.feature_names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.ncols();
        &self.values[i * d..(i + 1) * d]
    }

    pub fn row_index(&self, id: &str) -> Option<usize> {
        self.molecule_ids.iter().position(|m| m == id)
    }

    /// Row lookup table, for callers doing many lookups.
    pub fn index(&self) -> std::collections::HashMap<&str, usize> {
        self.molecule_ids.iter().enumerate().map(|(i, m)| (m.as_str(), i)).collect()
    }

    /// Rows for `ids` stacked into a fresh matrix.
    pub fn rows_for(&self, ids: &[String]) -> Result<nalgebra::DMatrix<f64>, FeaturizeError> {
        let idx = self.index();
        let d = self.ncols();
        let mut out = nalgebra::DMatrix::zeros(ids.len(), d);
        for (r, id) in ids.iter().enumerate() {
            let i = *idx
                .get(id.as_str())
                .ok_or_else(|| FeaturizeError::UnknownMolecule(id.clone()))?;
            for (c, v) in self.row(i).iter().enumerate() {
                out[(r, c)] = *v;
            }
        }
        Ok(out)
    }

    /// Standardizes a new candidate with the fitted scaler.
    pub fn transform(&self, mol: &MoleculeRecord, profile: Option<&SoftProfile>) -> Result<Vec<f64>, FeaturizeError> {
        self.feature_names
            .iter()
            .enumerate()
            .map(|(j, name)| {
                raw_value(mol, profile, name)
                    .map(|x| (x - self.scaler.mean[j]) / self.scaler.std[j])
                    .ok_or_else(|| FeaturizeError::MissingFeature {
                        molecule_id: mol.id.clone(),
                        feature: name.clone(),
                    })
            })
            .collect()
    }

    /// `features.csv`: `molecule_id` followed by the retained standardized columns.
    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["molecule_id".to_string()];
        header.extend(self.feature_names.iter().cloned());
        w.write_record(&header)?;
        for (i, id) in self.molecule_ids.iter().enumerate() {
            let mut row = vec![id.clone()];
            row.extend(self.row(i).iter().map(f64::to_string));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Assembles the standardized feature matrix over `mols`, fitting the scaler
/// on the rows named by `training_ids`.
pub fn assemble(
    mols: &[&MoleculeRecord],
    profiles: &BTreeMap<String, SoftProfile>,
    mode: RepresentationMode,
    training_ids: &[String],
) -> Result<FeatureMatrix, FeaturizeError> {
    if training_ids.is_empty() {
        return Err(FeaturizeError::EmptyTrainingSet);
    }
    let mut row_of = std::collections::HashMap::with_capacity(mols.len());
    for (i, m) in mols.iter().enumerate() {
        if row_of.insert(m.id.as_str(), i).is_some() {
            return Err(FeaturizeError::DuplicateMolecule(m.id.clone()));
        }
    }
    let mut train_rows = Vec::with_capacity(training_ids.len());
    let mut seen = HashSet::new();
    for id in training_ids {
        let &r = row_of
            .get(id.as_str())
            .ok_or_else(|| FeaturizeError::UnknownTrainingId(id.clone()))?;
        if seen.insert(r) {
            train_rows.push(r);
        }
    }
    let hard_names: Vec<String> = mols
        .first()
        .map(|m| m.hard.keys().cloned().collect())
        .unwrap_or_default();
    let names = candidate_feature_names(mode, &hard_names);
    let n = mols.len();
    let d_all = names.len();
    let mut raw = vec![0.0; n * d_all];
    for (i, m) in mols.iter().enumerate() {
        let profile = if mode.uses_soft() {
            Some(
                profiles
                    .get(&m.id)
                    .ok_or_else(|| FeaturizeError::MissingProfile(m.id.clone()))?,
            )
        } else {
            None
        };
        for (j, name) in names.iter().enumerate() {
            raw[i * d_all + j] = raw_value(m, profile, name).ok_or_else(|| FeaturizeError::MissingFeature {
                molecule_id: m.id.clone(),
                feature: name.clone(),
            })?;
        }
    }

    let column_constant = |j: usize, rows: &mut dyn Iterator<Item = usize>| {
        let mut it = rows.map(|i| raw[i * d_all + j]);
        let first = it.next();
        it.all(|v| Some(v) == first)
    };
    let mut kept = Vec::new();
    let mut dropped_constant = Vec::new();
    let mut dropped_training_constant = Vec::new();
    for (j, name) in names.iter().enumerate() {
        if column_constant(j, &mut (0..n)) {
            dropped_constant.push(name.clone());
        } else if column_constant(j, &mut train_rows.iter().copied()) {
            dropped_training_constant.push(name.clone());
        } else {
            kept.push(j);
        }
    }
    if kept.is_empty() {
        return Err(FeaturizeError::AllConstant);
    }

    let nt = train_rows.len() as f64;
    let mut mean = Vec::with_capacity(kept.len());
    let mut std = Vec::with_capacity(kept.len());
    for &j in &kept {
        let m = train_rows.iter().map(|&i| raw[i * d_all + j]).sum::<f64>() / nt;
        let v = train_rows.iter().map(|&i| (raw[i * d_all + j] - m).powi(2)).sum::<f64>() / nt;
        mean.push(m);
        std.push(v.sqrt());
    }
    let d = kept.len();
    let mut values = vec![0.0; n * d];
    for i in 0..n {
        for (c, &j) in kept.iter().enumerate() {
            values[i * d + c] = (raw[i * d_all + j] - mean[c]) / std[c];
        }
    }
    Ok(FeatureMatrix {
        molecule_ids: mols.iter().map(|m| m.id.clone()).collect(),
        feature_names: kept.iter().map(|&j| names[j].clone()).collect(),
        values,
        scaler: Scaler { mean, std },
        dropped_constant,
        dropped_training_constant,
        representation_mode: mode,
        training_ids: training_ids.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::SoftScores;

    fn sample(id: &str, idx: usize, binding: f64) -> SoftSample {
        SoftSample {
            molecule_id: id.into(),
            sample_idx: idx,
            scores: SoftScores([binding, 0.0, 1.0, 1.0, 0.0, 0.0]),
        }
    }

    fn mol(id: &str, hard: &[(&str, f64)]) -> MoleculeRecord {
        MoleculeRecord {
            id: id.into(),
            smiles: "C".into(),
            name: id.into(),
            hard: hard.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }

    #[test]
    fn eight_of_ten_binding() {
        let samples: Vec<_> = (0..10).map(|i| sample("m", i, if i < 8 { 1.0 } else { 0.0 })).collect();
        let p = aggregate_soft("m", &samples).unwrap();
        assert!((p.mean[0] - 0.8).abs() < 1e-15);
        // population std of a bit vector with p = 0.8
        assert!((p.std[0] - (0.8f64 * 0.2).sqrt()).abs() < 1e-15);
        assert_eq!(p.mean[2], 1.0);
        assert_eq!(p.std[2], 0.0);
        assert_eq!(p.n_parsed, 10);
    }

    #[test]
    fn aggregation_errors() {
        assert_eq!(
            aggregate_soft("m", &[]),
            Err(FeaturizeError::NoParsedSamples("m".into()))
        );
        assert!(matches!(
            aggregate_soft("m", &[sample("x", 0, 1.0)]),
            Err(FeaturizeError::MixedMolecules { .. })
        ));
    }

    #[test]
    fn zscore_by_hand() {
        let mols = [mol("a", &[("hf_x", 1.0)]), mol("b", &[("hf_x", 2.0)]), mol("c", &[("hf_x", 3.0)])];
        let refs: Vec<_> = mols.iter().collect();
        let ids: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
        let fm = assemble(&refs, &BTreeMap::new(), RepresentationMode::Hard, &ids).unwrap();
        let col: Vec<f64> = (0..3).map(|i| fm.row(i)[0]).collect();
        let s = (2.0f64 / 3.0).sqrt();
        let expected = [-1.0 / s, 0.0, 1.0 / s];
        for (a, b) in col.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((col[0] + 1.224_744_871_391_589).abs() < 1e-12);
    }

    #[test]
    fn constant_columns_pruned() {
        let mols = [
            mol("a", &[("hf_x", 1.0), ("hf_c", 5.0), ("hf_t", 1.0)]),
            mol("b", &[("hf_x", 2.0), ("hf_c", 5.0), ("hf_t", 1.0)]),
            mol("p", &[("hf_x", 3.0), ("hf_c", 5.0), ("hf_t", 9.0)]),
        ];
        let refs: Vec<_> = mols.iter().collect();
        let fm = assemble(&refs, &BTreeMap::new(), RepresentationMode::Hard, &["a".into(), "b".into()]).unwrap();
        assert_eq!(fm.feature_names, ["hf_x"]);
        assert_eq!(fm.dropped_constant, ["hf_c"]);
        assert_eq!(fm.dropped_training_constant, ["hf_t"]);
        assert!(fm.scaler.std.iter().all(|s| *s > 0.0));
    }

    #[test]
    fn errors() {
        let mols = [mol("a", &[("hf_c", 5.0)]), mol("b", &[("hf_c", 5.0)])];
        let refs: Vec<_> = mols.iter().collect();
        assert_eq!(
            assemble(&refs, &BTreeMap::new(), RepresentationMode::Hard, &["a".into()]),
            Err(FeaturizeError::AllConstant)
        );
        assert_eq!(
            assemble(&refs, &BTreeMap::new(), RepresentationMode::Hard, &[]),
            Err(FeaturizeError::EmptyTrainingSet)
        );
        assert_eq!(
            assemble(&refs, &BTreeMap::new(), RepresentationMode::Hybrid, &["a".into()]),
            Err(FeaturizeError::MissingProfile("a".into()))
        );
        assert_eq!(
            assemble(&refs, &BTreeMap::new(), RepresentationMode::Hard, &["zz".into()]),
            Err(FeaturizeError::UnknownTrainingId("zz".into()))
        );
    }

    #[test]
    fn transform_centering_and_scaling() {
        let mols = [mol("a", &[("hf_x", 1.0)]), mol("b", &[("hf_x", 3.0)])];
        let refs: Vec<_> = mols.iter().collect();
        let fm = assemble(&refs, &BTreeMap::new(), RepresentationMode::Hard, &["a".into(), "b".into()]).unwrap();
        assert_eq!(fm.scaler.mean, [2.0]);
        assert_eq!(fm.scaler.std, [1.0]);
        assert_eq!(fm.transform(&mol("n", &[("hf_x", 2.0)]), None).unwrap(), [0.0]);
        assert_eq!(fm.transform(&mol("n", &[("hf_x", 3.0)]), None).unwrap(), [1.0]);
        assert!(matches!(
            fm.transform(&mol("n", &[("hf_y", 3.0)]), None),
            Err(FeaturizeError::MissingFeature { .. })
        ));
    }

    #[test]
    fn mode_column_names() {
        let hard = vec!["hf_b".to_string(), "hf_a".to_string()];
        let h = candidate_feature_names(RepresentationMode::Hard, &hard);
        assert_eq!(h, ["hf_a", "hf_b"]);
        let mech = candidate_feature_names(RepresentationMode::MechSoft, &hard);
        let full = candidate_feature_names(RepresentationMode::FullSoft, &hard);
        let hyb = candidate_feature_names(RepresentationMode::Hybrid, &hard);
        assert_eq!(mech.len(), 10);
        assert_eq!(full.len(), 12);
        assert_eq!(hyb.len(), 14);
        assert!(!mech.iter().any(|n| n.contains("predicted_effect")));
        assert_eq!(full[0], "soft_mean_binding");
        assert_eq!(full[6], "soft_std_binding");
    }
}
