//! Censoring-aware evaluation metrics.
//!
//! IPCW weights come from the Kaplan-Meier estimate `Ĝ` of the censoring
//! distribution on the training labels: `1/Ĝ(T_i)²` for C-index pairs,
//! `1/Ĝ(T_i⁻)` and `1/Ĝ(t)` in the Brier score, `1/Ĝ(T_i)` for AUC cases.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::survhead::{predict_survival, BaselineHazard, SurvivalLabel};

/// Product-limit step function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KmCurve {
    /// Distinct event times, ascending.
    pub times: Vec<f64>,
    /// `S` just after each time.
    pub survival: Vec<f64>,
    pub at_risk: Vec<usize>,
    pub events: Vec<usize>,
}

impl KmCurve {
    /// Right-continuous value `S(t)`.
    pub fn at(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&x| x <= t);
        if k == 0 {
            1.0
        } else {
            self.survival[k - 1]
        }
    }

    /// Left limit `S(t⁻)`.
    pub fn before(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&x| x < t);
        if k == 0 {
            1.0
        } else {
            self.survival[k - 1]
        }
    }
}

fn product_limit(pairs: impl Iterator<Item = (f64, bool)>) -> KmCurve {
    let mut v: Vec<(f64, bool)> = pairs.collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = v.len();
    let mut curve = KmCurve {
        times: Vec::new(),
        survival: Vec::new(),
        at_risk: Vec::new(),
        events: Vec::new(),
    };
    let mut s = 1.0;
    let mut i = 0;
    while i < n {
        let t = v[i].0;
        let mut j = i;
        let mut d = 0;
        while j < n && v[j].0 == t {
            d += v[j].1 as usize;
            j += 1;
        }
        if d > 0 {
            let at_risk = n - i;
            s *= 1.0 - d as f64 / at_risk as f64;
            curve.times.push(t);
            curve.survival.push(s);
            curve.at_risk.push(at_risk);
            curve.events.push(d);
        }
        i = j;
    }
    curve
}

pub fn kaplan_meier(labels: &[SurvivalLabel]) -> KmCurve {
    product_limit(labels.iter().map(|l| (l.time, l.event)))
}

/// Kaplan-Meier of the censoring distribution (event indicator flipped).
pub fn censoring_km(labels: &[SurvivalLabel]) -> KmCurve {
    product_limit(labels.iter().map(|l| (l.time, !l.event)))
}

fn check_len(op: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape {
            op,
            lhs: vec![a],
            rhs: vec![b],
        });
    }
    Ok(())
}

fn positive_weight(g: f64, t: f64) -> Result<f64> {
    if g <= 0.0 {
        return Err(Error::UndefinedMetric(format!(
            "censoring survival is zero at t = {t}; IPCW weight undefined"
        )));
    }
    Ok(g)
}

fn concordance(ri: f64, rj: f64) -> f64 {
    if ri > rj {
        1.0
    } else if ri == rj {
        0.5
    } else {
        0.0
    }
}

/// IPCW concordance truncated at `tau`.
pub fn c_index_ipcw(risks: &[f64], train: &[SurvivalLabel], test: &[SurvivalLabel], tau: f64) -> Result<f64> {
    check_len("c_index", risks.len(), test.len())?;
    let g = censoring_km(train);
    let mut order: Vec<usize> = (0..test.len()).collect();
    order.sort_by(|&a, &b| test[a].time.total_cmp(&test[b].time));
    let (mut num, mut den) = (0.0, 0.0);
    for (pos, &i) in order.iter().enumerate() {
        let li = test[i];
        if !li.event || li.time > tau {
            continue;
        }
        // partners strictly later in time
        let start = pos + order[pos..].partition_point(|&j| test[j].time <= li.time);
        if start == order.len() {
            continue;
        }
        let gi = positive_weight(g.at(li.time), li.time)?;
        let w = 1.0 / (gi * gi);
        for &j in &order[start..] {
            num += w * concordance(risks[i], risks[j]);
            den += w;
        }
    }
    if den == 0.0 {
        return Err(Error::UndefinedMetric("no comparable pairs for the C-index".into()));
    }
    Ok(num / den)
}

/// Time-dependent Brier score of survival predictions `surv[i] = Ŝ_i(t)`.
pub fn brier_score(surv: &[f64], train: &[SurvivalLabel], test: &[SurvivalLabel], t: f64) -> Result<f64> {
    check_len("brier", surv.len(), test.len())?;
    if test.is_empty() {
        return Err(Error::UndefinedMetric("Brier score of an empty cohort".into()));
    }
    let g = censoring_km(train);
    let mut total = 0.0;
    for (s, l) in surv.iter().zip(test) {
        if l.time <= t && l.event {
            total += s * s / positive_weight(g.before(l.time), l.time)?;
        } else if l.time > t {
            total += (1.0 - s).powi(2) / positive_weight(g.at(t), t)?;
        }
    }
    Ok(total / test.len() as f64)
}

/// Cumulative/dynamic AUC at horizon `t`: IPCW-weighted cases
/// `{T_i ≤ t, δ_i = 1}` against unweighted controls `{T_j > t}`.
pub fn dynamic_auc(risks: &[f64], train: &[SurvivalLabel], test: &[SurvivalLabel], t: f64) -> Result<f64> {
    check_len("dynamic_auc", risks.len(), test.len())?;
    let g = censoring_km(train);
    let controls: Vec<f64> = test
        .iter()
        .zip(risks)
        .filter(|(l, _)| l.time > t)
        .map(|(_, &r)| r)
        .collect();
    let mut sorted = controls.clone();
    sorted.sort_by(f64::total_cmp);
    let (mut num, mut den) = (0.0, 0.0);
    for (l, &r) in test.iter().zip(risks) {
        if !(l.event && l.time <= t) {
            continue;
        }
        let w = 1.0 / positive_weight(g.at(l.time), l.time)?;
        let below = sorted.partition_point(|&c| c < r) as f64;
        let ties = sorted.partition_point(|&c| c <= r) as f64 - below;
        num += w * (below + 0.5 * ties);
        den += w * sorted.len() as f64;
    }
    if den == 0.0 {
        return Err(Error::UndefinedMetric(format!("no cases or no controls at t = {t}")));
    }
    Ok(num / den)
}

/// Linear-interpolation quantile (`q` in [0, 1]) of unsorted data.
pub fn quantile(data: &[f64], q: f64) -> f64 {
    let mut v = data.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

pub const QUARTILES: [f64; 3] = [0.25, 0.5, 0.75];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub eval_times: Vec<f64>,
    /// Per evaluation time; `None` where the metric is undefined.
    pub c_index_at: Vec<Option<f64>>,
    pub brier_at: Vec<Option<f64>>,
    pub auc_at: Vec<Option<f64>>,
    pub c_index: f64,
    pub brier: Option<f64>,
    pub auc: Option<f64>,
}

fn defined_mean(v: &[Option<f64>]) -> Option<f64> {
    let d: Vec<f64> = v.iter().flatten().copied().collect();
    if d.is_empty() {
        None
    } else {
        Some(d.iter().sum::<f64>() / d.len() as f64)
    }
}

fn soft<T>(r: Result<T>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedMetric(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Metrics at the 25/50/75% quartiles of the test follow-up times. The
/// C-index at each quartile is truncated there; survival curves come from
/// `baseline` (without one, Brier is skipped).
pub fn quartile_eval(
    risks: &[f64],
    baseline: Option<&BaselineHazard>,
    train: &[SurvivalLabel],
    test: &[SurvivalLabel],
) -> Result<EvalReport> {
    check_len("quartile_eval", risks.len(), test.len())?;
    if test.is_empty() {
        return Err(Error::usage("evaluation needs at least one test patient"));
    }
    let follow: Vec<f64> = test.iter().map(|l| l.time).collect();
    let eval_times: Vec<f64> = QUARTILES.iter().map(|&q| quantile(&follow, q)).collect();
    let mut report = EvalReport {
        eval_times: eval_times.clone(),
        c_index_at: Vec::new(),
        brier_at: Vec::new(),
        auc_at: Vec::new(),
        c_index: 0.0,
        brier: None,
        auc: None,
    };
    for &t in &eval_times {
        report.c_index_at.push(soft(c_index_ipcw(risks, train, test, t))?);
        report.auc_at.push(soft(dynamic_auc(risks, train, test, t))?);
        let brier = match baseline {
            Some(b) => {
                let surv = risks
                    .iter()
                    .map(|&r| predict_survival(r, b, t))
                    .collect::<Result<Vec<_>>>()?;
                soft(brier_score(&surv, train, test, t))?
            }
            None => None,
        };
        report.brier_at.push(brier);
    }
    report.c_index = defined_mean(&report.c_index_at)
        .ok_or_else(|| Error::UndefinedMetric("C-index undefined at every quartile".into()))?;
    report.brier = defined_mean(&report.brier_at);
    report.auc = defined_mean(&report.auc_at);
    Ok(report)
}

/// Average ranks (1-based), ties sharing their mean rank.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        None
    } else {
        Some(sab / (saa * sbb).sqrt())
    }
}

/// Spearman correlation; `None` when either input has zero variance.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    pearson(&ranks(a), &ranks(b))
}

/// Spearman correlation between pairwise latent L2 distances and pairwise
/// label L1 distances over all patient pairs at one hour.
pub fn alignment_spearman(latents: &[Vec<f64>], labels: &[Vec<f64>]) -> Option<f64> {
    let n = latents.len();
    if n < 3 || labels.len() != n {
        return None;
    }
    let mut dz = Vec::with_capacity(n * (n - 1) / 2);
    let mut dl = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            dz.push(
                latents[i]
                    .iter()
                    .zip(&latents[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt(),
            );
            dl.push(labels[i].iter().zip(&labels[j]).map(|(a, b)| (a - b).abs()).sum());
        }
    }
    spearman(&dz, &dl)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub mean_predicted: Option<f64>,
    /// Kaplan-Meier survival of the bin's members at `t`.
    pub observed: Option<f64>,
}

/// Equal-width bins on [0, 1] of predicted `S(t)`.
pub fn calibration_bins(surv: &[f64], labels: &[SurvivalLabel], t: f64, n_bins: usize) -> Result<Vec<CalibrationBin>> {
    check_len("calibration", surv.len(), labels.len())?;
    if n_bins == 0 {
        return Err(Error::config("calibration needs at least one bin"));
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_bins];
    for (i, &s) in surv.iter().enumerate() {
        let b = ((s * n_bins as f64).floor() as usize).min(n_bins - 1);
        members[b].push(i);
    }
    Ok(members
        .iter()
        .enumerate()
        .map(|(b, m)| {
            let (mean_predicted, observed) = if m.is_empty() {
                (None, None)
            } else {
                let mean = m.iter().map(|&i| surv[i]).sum::<f64>() / m.len() as f64;
                let sub: Vec<SurvivalLabel> = m.iter().map(|&i| labels[i]).collect();
                (Some(mean), Some(kaplan_meier(&sub).at(t)))
            };
            CalibrationBin {
                lo: b as f64 / n_bins as f64,
                hi: (b + 1) as f64 / n_bins as f64,
                count: m.len(),
                mean_predicted,
                observed,
            }
        })
        .collect())
}
