//! Cox-style risk head, survival losses and the Breslow baseline hazard.
//!
//! Risk sets follow the `>=` convention: `R(t) = {k : T_k >= t}`, so tied
//! times are at risk for each other. Losses are computed within the batch
//! they are given.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::Ffn;
use crate::tensor::{sigmoid, Activation, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurvivalLabel {
    /// Hours from the last observation to the event or censoring.
    pub time: f64,
    pub event: bool,
}

impl SurvivalLabel {
    pub fn new(time: f64, event: bool) -> Result<Self> {
        if !(time >= 0.0) || !time.is_finite() {
            return Err(Error::validation(format!("time-to-event must be finite and >= 0, got {time}")));
        }
        Ok(SurvivalLabel { time, event })
    }
}

/// `G_η: R^{d_z} → R`.
#[derive(Clone, Debug, PartialEq)]
pub struct RiskHeadParams {
    pub g_eta: Ffn,
}

impl RiskHeadParams {
    pub fn init<R: Rng>(latent_dim: usize, hidden: usize, rng: &mut R) -> Self {
        RiskHeadParams {
            g_eta: Ffn::init(&[latent_dim, hidden, 1], Activation::Tanh, Activation::Identity, 1.0, rng),
        }
    }
}

/// `r = G_η(z_last)`; the hazard ratio is `exp(r)`.
pub fn risk_score(z_last: &[f64], params: &RiskHeadParams) -> Result<f64> {
    if z_last.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "risk_score input" });
    }
    let out = params.g_eta.eval_row(z_last)?;
    if out.len() != 1 {
        return Err(Error::Shape {
            op: "risk_score",
            lhs: vec![out.len()],
            rhs: vec![1],
        });
    }
    Ok(out[0])
}

fn check_batch(risks: &[f64], labels: &[SurvivalLabel]) -> Result<()> {
    if risks.is_empty() {
        return Err(Error::usage("survival loss on an empty batch"));
    }
    if risks.len() != labels.len() {
        return Err(Error::Shape {
            op: "survival loss",
            lhs: vec![risks.len()],
            rhs: vec![labels.len()],
        });
    }
    if risks.iter().any(|r| !r.is_finite()) {
        return Err(Error::NonFinite { op: "risk scores" });
    }
    Ok(())
}

/// Negative log partial likelihood averaged over events, with its gradient
/// with respect to every risk. Zero (and zero gradient) without events.
pub fn partial_likelihood_loss(risks: &[f64], labels: &[SurvivalLabel]) -> Result<(f64, Vec<f64>)> {
    check_batch(risks, labels)?;
    let n = risks.len();
    let n_events = labels.iter().filter(|l| l.event).count();
    let mut grad = vec![0.0; n];
    if n_events == 0 {
        return Ok((0.0, grad));
    }
    let scale = 1.0 / n_events as f64;
    let mut loss = 0.0;
    for i in (0..n).filter(|&i| labels[i].event) {
        let ti = labels[i].time;
        let m = (0..n)
            .filter(|&k| labels[k].time >= ti)
            .map(|k| risks[k])
            .fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = (0..n)
            .filter(|&k| labels[k].time >= ti)
            .map(|k| (risks[k] - m).exp())
            .sum();
        let lse = m + sum.ln();
        loss += lse - risks[i];
        grad[i] -= scale;
        for k in (0..n).filter(|&k| labels[k].time >= ti) {
            grad[k] += scale * (risks[k] - lse).exp();
        }
    }
    Ok((loss * scale, grad))
}

/// Smoothed pairwise ranking loss `(1/N_e) Σ_{i event} Σ_{k ∈ R(T_i)} σ(r_k − r_i)`.
/// With `include_self` the `k = i` term (σ(0) = 0.5) is kept.
pub fn ranking_loss(risks: &[f64], labels: &[SurvivalLabel], include_self: bool) -> Result<(f64, Vec<f64>)> {
    check_batch(risks, labels)?;
    let n = risks.len();
    let n_events = labels.iter().filter(|l| l.event).count();
    let mut grad = vec![0.0; n];
    if n_events == 0 {
        return Ok((0.0, grad));
    }
    let scale = 1.0 / n_events as f64;
    let mut loss = 0.0;
    for i in (0..n).filter(|&i| labels[i].event) {
        for k in 0..n {
            if labels[k].time < labels[i].time || (k == i && !include_self) {
                continue;
            }
            let s = sigmoid(risks[k] - risks[i]);
            loss += s;
            let ds = scale * s * (1.0 - s);
            grad[k] += ds;
            grad[i] -= ds;
        }
    }
    Ok((loss * scale, grad))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurvivalLossParts {
    pub partial_likelihood: f64,
    pub ranking: f64,
}

impl SurvivalLossParts {
    pub fn total(&self) -> f64 {
        self.partial_likelihood + self.ranking
    }
}

/// `L_SURV = L_PL + L_PR`.
pub fn survival_loss(risks: &[f64], labels: &[SurvivalLabel], include_self: bool) -> Result<SurvivalLossParts> {
    Ok(SurvivalLossParts {
        partial_likelihood: partial_likelihood_loss(risks, labels)?.0,
        ranking: ranking_loss(risks, labels, include_self)?.0,
    })
}

/// Records `L_PL` on a tape; `risks` is any tensor holding one value per
/// patient.
pub fn partial_likelihood_on_tape(tape: &mut Tape, risks: Var, labels: &[SurvivalLabel]) -> Result<Var> {
    let r = tape.value(risks).data().to_vec();
    let (loss, grad) = partial_likelihood_loss(&r, labels)?;
    let g = Tensor::new(tape.shape(risks).to_vec(), grad)?;
    tape.scalar_fn("partial_likelihood", &[risks], loss, vec![g])
}

pub fn ranking_on_tape(tape: &mut Tape, risks: Var, labels: &[SurvivalLabel], include_self: bool) -> Result<Var> {
    let r = tape.value(risks).data().to_vec();
    let (loss, grad) = ranking_loss(&r, labels, include_self)?;
    let g = Tensor::new(tape.shape(risks).to_vec(), grad)?;
    tape.scalar_fn("ranking", &[risks], loss, vec![g])
}

/// Breslow cumulative baseline hazard, a right-continuous step function.
#[derive(Clone, Debug, PartialEq)]
pub struct BaselineHazard {
    pub event_times: Vec<f64>,
    pub cumulative_hazard: Vec<f64>,
}

impl BaselineHazard {
    /// `Λ_0(t)`.
    pub fn cumulative(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(Error::Range {
                value: t,
                lo: 0.0,
                hi: f64::INFINITY,
            });
        }
        let idx = self.event_times.partition_point(|&e| e <= t);
        Ok(if idx == 0 { 0.0 } else { self.cumulative_hazard[idx - 1] })
    }
}

/// `Λ_0(t) = Σ_{t_e ≤ t} d_e / Σ_{k ∈ R(t_e)} exp(r_k)`.
pub fn breslow_baseline(risks: &[f64], labels: &[SurvivalLabel]) -> Result<BaselineHazard> {
    check_batch(risks, labels)?;
    let mut times: Vec<f64> = labels.iter().filter(|l| l.event).map(|l| l.time).collect();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    times.dedup();

    // Sort once by time so each risk-set denominator is a suffix sum.
    let mut idx: Vec<usize> = (0..labels.len()).collect();
    idx.sort_by(|&a, &b| labels[a].time.partial_cmp(&labels[b].time).unwrap());
    let shift = risks.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut suffix = vec![0.0; idx.len() + 1];
    for p in (0..idx.len()).rev() {
        suffix[p] = suffix[p + 1] + (risks[idx[p]] - shift).exp();
    }
    let mut cum = Vec::with_capacity(times.len());
    let mut acc = 0.0;
    for &te in &times {
        let start = idx.partition_point(|&k| labels[k].time < te);
        let d = labels.iter().filter(|l| l.event && l.time == te).count() as f64;
        acc += d / suffix[start] * (-shift).exp();
        cum.push(acc);
    }
    if cum.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "breslow" });
    }
    Ok(BaselineHazard {
        event_times: times,
        cumulative_hazard: cum,
    })
}

/// `S(t | r) = exp(−Λ_0(t) · exp(r))`.
pub fn predict_survival(risk: f64, baseline: &BaselineHazard, t: f64) -> Result<f64> {
    Ok((-baseline.cumulative(t)? * risk.exp()).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn lab(t: f64, e: bool) -> SurvivalLabel {
        SurvivalLabel::new(t, e).unwrap()
    }

    fn random_batch(rng: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, Vec<SurvivalLabel>) {
        let risks = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let labels = (0..n)
            .map(|_| lab(rng.gen_range(0..6) as f64, rng.gen_bool(0.6)))
            .collect();
        (risks, labels)
    }

    /// Materializes every risk set explicitly.
    fn pl_brute(r: &[f64], l: &[SurvivalLabel]) -> f64 {
        let mut total = 0.0;
        let mut ne = 0;
        for i in 0..r.len() {
            if !l[i].event {
                continue;
            }
            ne += 1;
            let set: Vec<usize> = (0..r.len()).filter(|&k| l[k].time >= l[i].time).collect();
            let denom: f64 = set.iter().map(|&k| r[k].exp()).sum();
            total -= (r[i].exp() / denom).ln();
        }
        if ne == 0 {
            0.0
        } else {
            total / ne as f64
        }
    }

    fn pr_brute(r: &[f64], l: &[SurvivalLabel], include_self: bool) -> f64 {
        let mut total = 0.0;
        let mut ne = 0;
        for i in 0..r.len() {
            if !l[i].event {
                continue;
            }
            ne += 1;
            for k in 0..r.len() {
                if l[k].time >= l[i].time && (include_self || k != i) {
                    total += 1.0 / (1.0 + (-(r[k] - r[i])).exp());
                }
            }
        }
        if ne == 0 {
            0.0
        } else {
            total / ne as f64
        }
    }

    #[test]
    fn two_patient_partial_likelihood_is_log2() {
        let (l, _) = partial_likelihood_loss(&[0.0, 0.0], &[lab(1.0, true), lab(2.0, false)]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        let (l, g) = partial_likelihood_loss(&[1.3], &[lab(1.0, true)]).unwrap();
        assert_eq!(l, 0.0);
        assert_eq!(g, vec![0.0]);
    }

    #[test]
    fn partial_likelihood_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let (r, l) = random_batch(&mut rng, 5);
            let (v, _) = partial_likelihood_loss(&r, &l).unwrap();
            assert!((v - pl_brute(&r, &l)).abs() < 1e-12);
        }
    }

    #[test]
    fn ranking_loss_cases() {
        let labels = [lab(1.0, true), lab(2.0, false), lab(3.0, false)];
        let (l, _) = ranking_loss(&[0.0; 3], &labels, true).unwrap();
        assert!((l - 1.5).abs() < 1e-15);
        let (l, _) = ranking_loss(&[60.0, 0.0, 0.0], &labels, true).unwrap();
        assert!((l - 0.5).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..50 {
            let (r, l) = random_batch(&mut rng, 6);
            for inc in [true, false] {
                let (v, _) = ranking_loss(&r, &l, inc).unwrap();
                assert!((v - pr_brute(&r, &l, inc)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn survival_loss_is_the_sum() {
        let parts = survival_loss(&[0.4], &[lab(2.0, true)], true).unwrap();
        assert_eq!(parts.partial_likelihood, 0.0);
        assert_eq!(parts.total(), 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let (r, l) = random_batch(&mut rng, 7);
        let parts = survival_loss(&r, &l, true).unwrap();
        assert!((parts.total() - pl_brute(&r, &l) - pr_brute(&r, &l, true)).abs() < 1e-12);
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        for _ in 0..10 {
            let (r, l) = random_batch(&mut rng, 6);
            let (_, g_pl) = partial_likelihood_loss(&r, &l).unwrap();
            let (_, g_pr) = ranking_loss(&r, &l, true).unwrap();
            for k in 0..r.len() {
                let h = 1e-6;
                let mut rp = r.clone();
                let mut rm = r.clone();
                rp[k] += h;
                rm[k] -= h;
                let fd_pl = (pl_brute(&rp, &l) - pl_brute(&rm, &l)) / (2.0 * h);
                let fd_pr = (pr_brute(&rp, &l, true) - pr_brute(&rm, &l, true)) / (2.0 * h);
                assert!((fd_pl - g_pl[k]).abs() < 1e-7);
                assert!((fd_pr - g_pr[k]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn no_events_contribute_zero() {
        let labels = [lab(1.0, false), lab(2.0, false)];
        assert_eq!(partial_likelihood_loss(&[1.0, 2.0], &labels).unwrap().0, 0.0);
        assert_eq!(ranking_loss(&[1.0, 2.0], &labels, true).unwrap().0, 0.0);
        assert!(partial_likelihood_loss(&[], &[]).is_err());
    }

    #[test]
    fn shift_invariance_and_monotonicity() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        for _ in 0..20 {
            let (r, l) = random_batch(&mut rng, 6);
            let shifted: Vec<f64> = r.iter().map(|x| x + 3.7).collect();
            let a = survival_loss(&r, &l, true).unwrap();
            let b = survival_loss(&shifted, &l, true).unwrap();
            assert!((a.partial_likelihood - b.partial_likelihood).abs() < 1e-12);
            assert!((a.ranking - b.ranking).abs() < 1e-12);
            // only an event with no other event at or before its time is
            // free of appearing in someone else's risk set
            let first = (0..6).find(|&i| l[i].event && !(0..6).any(|j| j != i && l[j].event && l[j].time <= l[i].time));
            if let Some(i) = first {
                let mut up = r.clone();
                up[i] += 0.5;
                let c = survival_loss(&up, &l, true).unwrap();
                assert!(c.partial_likelihood <= a.partial_likelihood + 1e-12);
                assert!(c.ranking <= a.ranking + 1e-12);
            }
        }
    }

    #[test]
    fn breslow_examples() {
        let b = breslow_baseline(&[0.0, 0.0], &[lab(1.0, false), lab(2.0, false)]).unwrap();
        assert_eq!(b.cumulative(5.0).unwrap(), 0.0);
        assert_eq!(predict_survival(0.3, &b, 5.0).unwrap(), 1.0);

        let b = breslow_baseline(&[0.0, 0.0], &[lab(1.0, true), lab(2.0, false)]).unwrap();
        assert!((b.cumulative(1.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((predict_survival(0.0, &b, 1.0).unwrap() - (-0.5f64).exp()).abs() < 1e-15);
        assert_eq!(b.cumulative(0.0).unwrap(), 0.0);
        assert!(b.cumulative(-1.0).is_err());
    }

    #[test]
    fn breslow_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        for _ in 0..30 {
            let (r, l) = random_batch(&mut rng, 12);
            let b = breslow_baseline(&r, &l).unwrap();
            for t in [0.0, 0.5, 1.0, 2.0, 3.5, 5.0, 9.0] {
                let mut brute = 0.0;
                let mut seen: Vec<f64> = Vec::new();
                for i in 0..l.len() {
                    let te = l[i].time;
                    if l[i].event && te <= t && !seen.contains(&te) {
                        seen.push(te);
                        let d = l.iter().filter(|x| x.event && x.time == te).count() as f64;
                        let denom: f64 = (0..l.len()).filter(|&k| l[k].time >= te).map(|k| r[k].exp()).sum();
                        brute += d / denom;
                    }
                }
                assert!((b.cumulative(t).unwrap() - brute).abs() < 1e-12);
            }
            let mut prev = 1.0;
            for k in 0..40 {
                let s = predict_survival(0.2, &b, k as f64 * 0.2).unwrap();
                assert!(s <= prev + 1e-15);
                prev = s;
            }
        }
    }

    #[test]
    fn zero_weight_head_returns_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let mut head = RiskHeadParams::init(4, 8, &mut rng);
        for layer in head.g_eta.layers.iter_mut() {
            layer.weight = Tensor::zeros(layer.weight.shape());
        }
        head.g_eta.layers.last_mut().unwrap().bias = Tensor::vector(vec![0.75]).unwrap();
        assert_eq!(risk_score(&[1.0, 2.0, 3.0, 4.0], &head).unwrap(), 0.75);
        assert_eq!(risk_score(&[-1.0, 0.0, 0.5, 9.0], &head).unwrap(), 0.75);
    }

    #[test]
    fn linear_head_differences() {
        let w = vec![0.5, -1.0, 2.0];
        let head = RiskHeadParams {
            g_eta: Ffn {
                layers: vec![crate::nn::Linear {
                    weight: Tensor::matrix(3, 1, w.clone()).unwrap(),
                    bias: Tensor::vector(vec![0.1]).unwrap(),
                }],
                hidden: Activation::Tanh,
                output: Activation::Identity,
                output_scale: 1.0,
            },
        };
        let (z, z2) = ([1.0, 2.0, 3.0], [0.0, -1.0, 1.5]);
        let diff = risk_score(&z, &head).unwrap() - risk_score(&z2, &head).unwrap();
        let expect: f64 = w.iter().zip(z.iter().zip(&z2)).map(|(w, (a, b))| w * (a - b)).sum();
        assert!((diff - expect).abs() < 1e-14);
    }

    #[test]
    fn three_layer_head_matches_layer_by_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(28);
        let head = RiskHeadParams {
            g_eta: Ffn::init(&[4, 6, 5, 1], Activation::Tanh, Activation::Identity, 1.0, &mut rng),
        };
        let z = [0.3, -0.2, 1.1, 0.05];
        let mut h: Vec<f64> = z.to_vec();
        for (li, layer) in head.g_eta.layers.iter().enumerate() {
            let (fi, fo) = (layer.fan_in(), layer.fan_out());
            let mut next = vec![0.0; fo];
            for j in 0..fo {
                let mut s = layer.bias.data()[j];
                for i in 0..fi {
                    s += h[i] * layer.weight.data()[i * fo + j];
                }
                next[j] = if li + 1 < head.g_eta.layers.len() { s.tanh() } else { s };
            }
            h = next;
        }
        assert!((risk_score(&z, &head).unwrap() - h[0]).abs() < 1e-14);
    }
}
