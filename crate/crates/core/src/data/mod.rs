//! Patient records, cohorts and preprocessing.

mod csv_io;
mod synthetic;

pub use csv_io::{export_csv, ingest_csv, CsvPaths, CsvSchema};
pub use synthetic::{family_risk_level, generate_synthetic, latent_path, SyntheticConfig, FAMILY_NAMES, SEVERITY_NAMES};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::controlpath::ObservationSeq;
use crate::error::{Error, Result};
use crate::survhead::SurvivalLabel;
use crate::tacl::SeveritySeries;

#[derive(Clone, Debug, PartialEq)]
pub struct PatientRecord {
    pub id: String,
    pub obs: ObservationSeq,
    pub label: SurvivalLabel,
    pub severity: SeveritySeries,
    /// Generator's log-hazard ratio (synthetic cohorts only).
    pub true_risk: Option<f64>,
    /// Generating trajectory family (synthetic cohorts only).
    pub family: Option<usize>,
}

/// Per-feature standardization statistics from the training split.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Number of observed training entries per feature.
    pub count: Vec<usize>,
}

pub const STD_FLOOR: f64 = 1e-8;

impl FeatureStats {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// Mean and (population) standard deviation over all observed entries
    /// of `records`.
    pub fn fit<'a>(records: impl IntoIterator<Item = &'a PatientRecord>, width: usize) -> Self {
        let mut sum = vec![0.0; width];
        let mut count = vec![0usize; width];
        let mut rows: Vec<&PatientRecord> = Vec::new();
        for r in records {
            for row in r.obs.values() {
                for (k, v) in row.iter().enumerate() {
                    if let Some(x) = v {
                        sum[k] += x;
                        count[k] += 1;
                    }
                }
            }
            rows.push(r);
        }
        let mean: Vec<f64> = sum
            .iter()
            .zip(&count)
            .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
            .collect();
        let mut ss = vec![0.0; width];
        for r in rows {
            for row in r.obs.values() {
                for (k, v) in row.iter().enumerate() {
                    if let Some(x) = v {
                        ss[k] += (x - mean[k]).powi(2);
                    }
                }
            }
        }
        let std = ss
            .iter()
            .zip(&count)
            .map(|(s, &c)| if c > 0 { (s / c as f64).sqrt().max(STD_FLOOR) } else { 1.0 })
            .collect();
        FeatureStats { mean, std, count }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cohort {
    pub records: Vec<PatientRecord>,
    pub feature_names: Vec<String>,
    pub severity_names: Vec<String>,
    pub stats: Option<FeatureStats>,
    /// One entry per record once [`split`] has run.
    pub splits: Vec<Split>,
}

impl Cohort {
    pub fn new(records: Vec<PatientRecord>, feature_names: Vec<String>, severity_names: Vec<String>) -> Self {
        Cohort {
            records,
            feature_names,
            severity_names,
            stats: None,
            splits: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn indices(&self, which: Split) -> Vec<usize> {
        self.splits
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == which)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn labels(&self, idx: &[usize]) -> Vec<SurvivalLabel> {
        idx.iter().map(|&i| self.records[i].label).collect()
    }
}

/// Seeded shuffle of patients into train/val/test. Train and validation
/// sizes are `round(frac * n)`; the test split takes the rest.
pub fn split(mut cohort: Cohort, fracs: (f64, f64, f64), seed: u64) -> Result<Cohort> {
    let (a, b, c) = fracs;
    if a < 0.0 || b < 0.0 || c < 0.0 || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!("split fractions {fracs:?} must be non-negative and sum to 1")));
    }
    let n = cohort.len();
    let n_train = (a * n as f64).round() as usize;
    let n_val = ((b * n as f64).round() as usize).min(n - n_train);
    let mut ids: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let mut splits = vec![Split::Test; n];
    for (pos, &i) in ids.iter().enumerate() {
        splits[i] = if pos < n_train {
            Split::Train
        } else if pos < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    cohort.splits = splits;
    Ok(cohort)
}

/// Z-scores every observed entry with statistics from the training split
/// only; the statistics are stored on the cohort.
pub fn standardize(cohort: Cohort) -> Result<Cohort> {
    let train = cohort.indices(Split::Train);
    if train.is_empty() {
        return Err(Error::usage("standardize needs a non-empty training split"));
    }
    let stats = FeatureStats::fit(train.iter().map(|&i| &cohort.records[i]), cohort.n_features());
    apply_stats(cohort, stats)
}

/// Z-scores every record with previously fitted statistics.
pub fn apply_stats(mut cohort: Cohort, stats: FeatureStats) -> Result<Cohort> {
    if cohort.stats.is_some() {
        return Err(Error::usage("cohort is already standardized"));
    }
    if stats.len() != cohort.n_features() {
        return Err(Error::Shape {
            op: "apply_stats",
            lhs: vec![stats.len()],
            rhs: vec![cohort.n_features()],
        });
    }
    for r in cohort.records.iter_mut() {
        r.obs = r.obs.map_observed(|k, x| (x - stats.mean[k]) / stats.std[k]);
    }
    cohort.stats = Some(stats);
    Ok(cohort)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Cohort {
        generate_synthetic(&SyntheticConfig {
            n_patients: 100,
            seed: 5,
            ..SyntheticConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn split_sizes_and_determinism() {
        let c = split(small(), (0.7, 0.1, 0.2), 3).unwrap();
        assert_eq!(c.indices(Split::Train).len(), 70);
        assert_eq!(c.indices(Split::Val).len(), 10);
        assert_eq!(c.indices(Split::Test).len(), 20);
        let d = split(small(), (0.7, 0.1, 0.2), 3).unwrap();
        assert_eq!(c.splits, d.splits);
        assert!(split(small(), (0.7, 0.2, 0.2), 3).is_err());
    }

    #[test]
    fn standardized_train_features_are_z_scores() {
        let c = standardize(split(small(), (0.7, 0.1, 0.2), 3).unwrap()).unwrap();
        let train = c.indices(Split::Train);
        let refit = FeatureStats::fit(train.iter().map(|&i| &c.records[i]), c.n_features());
        for k in 0..c.n_features() {
            assert!(refit.mean[k].abs() < 1e-10);
            assert!((refit.std[k] - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn stats_come_from_train_only() {
        let raw = split(small(), (0.7, 0.1, 0.2), 3).unwrap();
        let train = raw.indices(Split::Train);
        let expect = FeatureStats::fit(train.iter().map(|&i| &raw.records[i]), raw.n_features());
        let all = FeatureStats::fit(raw.records.iter(), raw.n_features());
        let c = standardize(raw).unwrap();
        assert_eq!(c.stats.as_ref().unwrap(), &expect);
        assert_ne!(c.stats.as_ref().unwrap(), &all);
    }

    #[test]
    fn standardize_requires_train() {
        let c = small();
        assert!(matches!(standardize(c), Err(Error::Usage(_))));
    }
}
