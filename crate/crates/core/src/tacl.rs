//! Severity/trend labels and the time-aware contrastive objective.
//!
//! For anchors `i ≠ j` the term is
//!
//! ```text
//! Φ(t_i, t_j) · −log[ exp(sim_ij/κ1) / Σ_{k ∈ S_ij ∪ {j}} exp(sim_ik/κ1) ]
//! ```
//!
//! with `sim = −‖z_i − z_k‖₂`, `S_ij = {k ≠ i : d(i,k) > d(i,j)}` (strict),
//! `d` the L1 label distance `‖s_i − s_k‖₁ + δ‖v_i − v_k‖₁`, and
//! `Φ = exp(−|t_i − t_j| / κ2)`. The sum over pairs is divided by `|Z|²`.

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Hourly severity scores and their trends; index = hour.
#[derive(Clone, Debug, PartialEq)]
pub struct SeveritySeries {
    pub s: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl SeveritySeries {
    pub fn from_scores(s: Vec<Vec<f64>>, delta_t: usize) -> Result<Self> {
        let v = severity_trend(&s, delta_t)?;
        Ok(SeveritySeries { s, v })
    }

    pub fn hours(&self) -> usize {
        self.s.len()
    }

    pub fn components(&self) -> usize {
        self.s.first().map_or(0, Vec::len)
    }

    /// Labels at the hour nearest to `t` (clamped to the series).
    pub fn nearest(&self, t: f64) -> (&[f64], &[f64]) {
        let h = (t.round().max(0.0) as usize).min(self.s.len() - 1);
        (&self.s[h], &self.v[h])
    }
}

/// Central differences `(s_{t+Δ} − s_{t−Δ}) / 2Δ` in the interior,
/// one-sided `Δ`-differences within `Δ` hours of either end. Series with
/// fewer than two points have zero trend; series too short for a `Δ`-step
/// use the end-to-end slope.
pub fn severity_trend(s: &[Vec<f64>], delta_t: usize) -> Result<Vec<Vec<f64>>> {
    if delta_t < 1 {
        return Err(Error::config("severity trend delta_t must be >= 1"));
    }
    let n = s.len();
    let width = s.first().map_or(0, Vec::len);
    if n < 2 {
        return Ok(vec![vec![0.0; width]; n]);
    }
    let last = n - 1;
    let diff = |hi: usize, lo: usize| -> Vec<f64> {
        let span = (hi - lo) as f64;
        s[hi].iter().zip(&s[lo]).map(|(a, b)| (a - b) / span).collect()
    };
    Ok((0..n)
        .map(|t| {
            if t >= delta_t && t + delta_t <= last {
                diff(t + delta_t, t - delta_t)
            } else if t < delta_t && t + delta_t <= last {
                diff(t + delta_t, t)
            } else if t >= delta_t {
                diff(t, t - delta_t)
            } else {
                diff(last, 0)
            }
        })
        .collect())
}

/// Labels and times of the anchors in a batch; the latent states
/// themselves are passed separately.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AnchorLabels {
    pub times: Vec<f64>,
    pub s: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub patient: Vec<usize>,
}

impl AnchorLabels {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn push(&mut self, time: f64, s: &[f64], v: &[f64], patient: usize) {
        self.times.push(time);
        self.s.push(s.to_vec());
        self.v.push(v.to_vec());
        self.patient.push(patient);
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TaclConfig {
    pub kappa1: f64,
    pub kappa2: f64,
    pub delta: f64,
    pub use_time_mask: bool,
}

impl Default for TaclConfig {
    fn default() -> Self {
        TaclConfig {
            kappa1: 2.0,
            kappa2: 30.0,
            delta: 20.0,
            use_time_mask: true,
        }
    }
}

pub fn label_distance(s_a: &[f64], v_a: &[f64], s_b: &[f64], v_b: &[f64], delta: f64) -> f64 {
    let ds: f64 = s_a.iter().zip(s_b).map(|(a, b)| (a - b).abs()).sum();
    let dv: f64 = v_a.iter().zip(v_b).map(|(a, b)| (a - b).abs()).sum();
    ds + delta * dv
}

pub fn time_mask(t_i: f64, t_j: f64, kappa2: f64) -> f64 {
    (-(t_i - t_j).abs() / kappa2).exp()
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Loss and gradient with respect to the row-major `[n, dim]` states.
pub fn tacl_loss(states: &[f64], dim: usize, labels: &AnchorLabels, cfg: &TaclConfig) -> Result<(f64, Vec<f64>)> {
    let n = labels.len();
    if states.len() != n * dim {
        return Err(Error::Shape {
            op: "tacl",
            lhs: vec![states.len()],
            rhs: vec![n, dim],
        });
    }
    if !(cfg.kappa1 > 0.0 && cfg.kappa2 > 0.0 && cfg.delta >= 0.0) {
        return Err(Error::config("tacl needs kappa1 > 0, kappa2 > 0, delta >= 0"));
    }
    let mut grad = vec![0.0; n * dim];
    if n < 2 {
        log::warn!("contrastive loss needs at least two anchors, got {n}; contributing 0");
        return Ok((0.0, grad));
    }
    let z = |i: usize| &states[i * dim..(i + 1) * dim];
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for k in i + 1..n {
            let d = z(i).iter().zip(z(k)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            dist[i * n + k] = d;
            dist[k * n + i] = d;
        }
    }
    let log_mask = |i: usize, j: usize| -> f64 {
        if cfg.use_time_mask {
            -(labels.times[i] - labels.times[j]).abs() / cfg.kappa2
        } else {
            0.0
        }
    };

    let norm = 1.0 / (n * n) as f64;
    let mut loss = 0.0;
    // dL/d(sim_ik / κ1), row i
    let mut dsim = vec![0.0; n];
    let mut lse = vec![0.0; n];
    let mut ld = vec![0.0; n];
    let mut order: Vec<usize> = Vec::with_capacity(n);

    for i in 0..n {
        for k in 0..n {
            ld[k] = if k == i {
                0.0
            } else {
                label_distance(&labels.s[i], &labels.v[i], &labels.s[k], &labels.v[k], cfg.delta)
            };
        }
        let sim = |k: usize| -dist[i * n + k] / cfg.kappa1;
        order.clear();
        order.extend((0..n).filter(|&k| k != i));
        order.sort_by(|&a, &b| ld[b].partial_cmp(&ld[a]).unwrap().then(a.cmp(&b)));

        // Descending label distance: `acc` is the log-sum over strictly farther anchors.
        let mut acc = f64::NEG_INFINITY;
        let mut g = 0;
        while g < order.len() {
            let mut e = g;
            while e < order.len() && ld[order[e]] == ld[order[g]] {
                e += 1;
            }
            for &j in &order[g..e] {
                lse[j] = log_add(acc, sim(j));
                loss += log_mask(i, j).exp() * (lse[j] - sim(j));
            }
            for &j in &order[g..e] {
                acc = log_add(acc, sim(j));
            }
            g = e;
        }

        // Ascending: `back` is log Σ_{j nearer than k} Φ_ij exp(−LSE_ij).
        let mut back = f64::NEG_INFINITY;
        let mut g = order.len();
        while g > 0 {
            let mut b = g;
            while b > 0 && ld[order[b - 1]] == ld[order[g - 1]] {
                b -= 1;
            }
            for &k in &order[b..g] {
                let phi = log_mask(i, k).exp();
                let own = phi * ((sim(k) - lse[k]).exp() - 1.0);
                let others = if back == f64::NEG_INFINITY { 0.0 } else { (sim(k) + back).exp() };
                dsim[k] = norm * (own + others);
            }
            for &k in &order[b..g] {
                back = log_add(back, log_mask(i, k) - lse[k]);
            }
            g = b;
        }

        for &k in &order {
            let d = dist[i * n + k];
            if d == 0.0 || dsim[k] == 0.0 {
                continue;
            }
            // sim_ik/κ1 = −‖z_i − z_k‖/κ1
            let c = -dsim[k] / (cfg.kappa1 * d);
            for c_idx in 0..dim {
                let diff = states[i * dim + c_idx] - states[k * dim + c_idx];
                grad[i * dim + c_idx] += c * diff;
                grad[k * dim + c_idx] -= c * diff;
            }
        }
    }
    loss *= norm;
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite { op: "tacl" });
    }
    Ok((loss, grad))
}

/// Records the contrastive loss for anchor states `z: [n, d_z]`.
pub fn tacl_on_tape(tape: &mut Tape, z: Var, labels: &AnchorLabels, cfg: &TaclConfig) -> Result<Var> {
    let shape = tape.shape(z).to_vec();
    let dim = *shape.last().unwrap();
    let (loss, grad) = tacl_loss(tape.value(z).data(), dim, labels, cfg)?;
    tape.scalar_fn("tacl", &[z], loss, vec![Tensor::new(shape, grad)?])
}

/// `L = L_SURV + α · L_TACL`.
pub fn total_loss(l_surv: f64, l_tacl: f64, alpha: f64) -> f64 {
    l_surv + alpha * l_tacl
}
