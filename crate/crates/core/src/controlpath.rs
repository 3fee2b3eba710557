//! Continuous control signals built from irregular observations.
//!
//! A path has `d + 1` channels: the `d` features followed by time (raw
//! hours). Two interpolation schemes are available:
//!
//! * [`Scheme::CubicHermiteBackward`]: piecewise cubic Hermite with the
//!   slope at knot `j` taken from the backward difference
//!   `(x_j - x_{j-1}) / (t_j - t_{j-1})`. Knot 0 reuses the first segment's
//!   secant, so the first segment is linear. Any value on `[t_j, t_{j+1}]`
//!   depends on knots `0..=j+1` only, which makes the path usable online.
//! * [`Scheme::Rectilinear`]: each inter-knot interval is split at its
//!   midpoint: first the time channel advances (features held at the
//!   previous knot), then the features move to the next knot (time held).
//!   Derivatives at piece boundaries are taken from the right.

use crate::data::FeatureStats;
use crate::error::{Error, Result};

/// One patient's raw observation sequence. `None` marks a missing entry.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationSeq {
    times: Vec<f64>,
    values: Vec<Vec<Option<f64>>>,
}

impl ObservationSeq {
    pub fn new(times: Vec<f64>, values: Vec<Vec<Option<f64>>>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::validation("observation sequence is empty"));
        }
        if times.len() != values.len() {
            return Err(Error::validation(format!(
                "{} times but {} value rows",
                times.len(),
                values.len()
            )));
        }
        if times[0] != 0.0 {
            return Err(Error::validation(format!("first observation at t = {} (expected 0)", times[0])));
        }
        for w in times.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::validation(format!(
                    "observation times must be strictly increasing ({} then {})",
                    w[0], w[1]
                )));
            }
        }
        let width = values[0].len();
        if values.iter().any(|row| row.len() != width) {
            return Err(Error::validation("observation rows have differing widths"));
        }
        if values.iter().flatten().flatten().any(|v| !v.is_finite()) {
            return Err(Error::validation("observed values must be finite"));
        }
        Ok(ObservationSeq { times, values })
    }

    /// Convenience constructor for fully observed data.
    pub fn complete(times: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        let values = values
            .into_iter()
            .map(|row| row.into_iter().map(Some).collect())
            .collect();
        ObservationSeq::new(times, values)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[Vec<Option<f64>>] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn width(&self) -> usize {
        self.values[0].len()
    }

    pub fn last_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn is_complete(&self) -> bool {
        self.values.iter().flatten().all(Option::is_some)
    }

    pub fn missing_fraction(&self) -> f64 {
        let total = self.values.len() * self.width();
        let missing = self.values.iter().flatten().filter(|v| v.is_none()).count();
        missing as f64 / total as f64
    }

    /// Applies `f(feature, value)` to every observed entry.
    pub fn map_observed(&self, f: impl Fn(usize, f64) -> f64) -> ObservationSeq {
        let values = self
            .values
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .map(|(k, v)| v.map(|x| f(k, x)))
                    .collect()
            })
            .collect();
        ObservationSeq {
            times: self.times.clone(),
            values,
        }
    }

    /// Fully observed rows as plain vectors. Fails if anything is missing.
    pub fn dense_values(&self) -> Result<Vec<Vec<f64>>> {
        self.values
            .iter()
            .map(|row| {
                row.iter()
                    .map(|v| v.ok_or_else(|| Error::validation("sequence has missing entries; impute first")))
                    .collect()
            })
            .collect()
    }
}

/// Fills missing entries of an already standardized sequence: carry the
/// last observed value forward, and use 0 (the standardized training mean)
/// before a feature's first observation.
pub fn impute(seq: &ObservationSeq, train_stats: &FeatureStats) -> Result<ObservationSeq> {
    if train_stats.len() != seq.width() {
        return Err(Error::config(format!(
            "feature stats cover {} features, sequence has {}",
            train_stats.len(),
            seq.width()
        )));
    }
    if let Some(k) = (0..train_stats.len()).find(|&k| train_stats.count[k] == 0) {
        return Err(Error::config(format!("feature {k} is never observed in the training cohort")));
    }
    let mut last: Vec<f64> = vec![0.0; seq.width()];
    let values = seq
        .values
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .map(|(k, v)| {
                    if let Some(x) = v {
                        last[k] = *x;
                    }
                    Some(last[k])
                })
                .collect()
        })
        .collect();
    Ok(ObservationSeq {
        times: seq.times.clone(),
        values,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    CubicHermiteBackward,
    Rectilinear,
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cubic_hermite_backward" | "hermite" | "cubic" => Ok(Scheme::CubicHermiteBackward),
            "rectilinear" => Ok(Scheme::Rectilinear),
            other => Err(Error::config(format!("unknown interpolation scheme `{other}`"))),
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scheme::CubicHermiteBackward => "cubic_hermite_backward",
            Scheme::Rectilinear => "rectilinear",
        })
    }
}

/// Piecewise-polynomial interpolant through the augmented knots
/// `(x_j, t_j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlPath {
    scheme: Scheme,
    times: Vec<f64>,
    /// Augmented knot values, `d + 1` channels each.
    knots: Vec<Vec<f64>>,
    /// Hermite slopes at each knot (empty for rectilinear).
    slopes: Vec<Vec<f64>>,
}

/// Builds a path from a fully observed sequence.
pub fn build_path(seq: &ObservationSeq, scheme: Scheme) -> Result<ControlPath> {
    let values = seq.dense_values()?;
    ControlPath::from_knots(seq.times().to_vec(), values, scheme)
}

impl ControlPath {
    pub fn from_knots(times: Vec<f64>, values: Vec<Vec<f64>>, scheme: Scheme) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return Err(Error::validation("path needs one value row per knot time"));
        }
        for w in times.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::validation(format!(
                    "knot times must be strictly increasing ({} then {})",
                    w[0], w[1]
                )));
            }
        }
        let width = values[0].len();
        if values.iter().any(|r| r.len() != width) {
            return Err(Error::validation("knot rows have differing widths"));
        }
        let knots: Vec<Vec<f64>> = times
            .iter()
            .zip(values)
            .map(|(&t, mut row)| {
                row.push(t);
                row
            })
            .collect();

        let slopes = match scheme {
            Scheme::Rectilinear => Vec::new(),
            Scheme::CubicHermiteBackward => {
                let n = knots.len();
                let secant = |j: usize| -> Vec<f64> {
                    let dt = times[j + 1] - times[j];
                    knots[j + 1].iter().zip(&knots[j]).map(|(b, a)| (b - a) / dt).collect()
                };
                if n == 1 {
                    vec![vec![0.0; width + 1]]
                } else {
                    let mut s = Vec::with_capacity(n);
                    s.push(secant(0));
                    for j in 1..n {
                        s.push(secant(j - 1));
                    }
                    s
                }
            }
        };

        Ok(ControlPath {
            scheme,
            times,
            knots,
            slopes,
        })
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    /// Number of channels, `d + 1`.
    pub fn dim(&self) -> usize {
        self.knots[0].len()
    }

    pub fn knot_times(&self) -> &[f64] {
        &self.times
    }

    pub fn knot(&self, j: usize) -> &[f64] {
        &self.knots[j]
    }

    pub fn start(&self) -> &[f64] {
        &self.knots[0]
    }

    pub fn end_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Times at which the derivative may jump. Integration steps must not
    /// straddle these.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self.scheme {
            Scheme::CubicHermiteBackward => self.times.clone(),
            Scheme::Rectilinear => {
                let mut out = Vec::with_capacity(2 * self.times.len());
                for w in self.times.windows(2) {
                    out.push(w[0]);
                    out.push(0.5 * (w[0] + w[1]));
                }
                out.push(self.end_time());
                out
            }
        }
    }

    fn check_range(&self, t: f64) -> Result<()> {
        if !(t >= 0.0 && t <= self.end_time()) {
            return Err(Error::Range {
                value: t,
                lo: 0.0,
                hi: self.end_time(),
            });
        }
        Ok(())
    }

    /// Segment `j` with `t_j <= t < t_{j+1}`; the last segment also owns `t_n`.
    fn segment(&self, t: f64) -> usize {
        let n = self.times.len();
        if n == 1 {
            return 0;
        }
        let idx = self.times.partition_point(|&k| k <= t);
        idx.saturating_sub(1).min(n - 2)
    }

    /// `(X(t), dX/dt(t))`. Outside `[0, t_n]` is a range error.
    pub fn eval(&self, t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_range(t)?;
        Ok(self.eval_piece(t, t))
    }

    pub fn value(&self, t: f64) -> Result<Vec<f64>> {
        Ok(self.eval(t)?.0)
    }

    pub fn derivative(&self, t: f64) -> Result<Vec<f64>> {
        Ok(self.eval(t)?.1)
    }

    /// Derivative at `t` from the polynomial piece containing `locator`.
    /// Solvers pass the midpoint of the current step so that stage
    /// evaluations at step endpoints use the piece the step lies in.
    pub fn derivative_in_piece(&self, t: f64, locator: f64) -> Vec<f64> {
        self.eval_piece(t, locator).1
    }

    fn eval_piece(&self, t: f64, locator: f64) -> (Vec<f64>, Vec<f64>) {
        let dim = self.dim();
        if self.times.len() == 1 {
            return (self.knots[0].clone(), vec![0.0; dim]);
        }
        let j = self.segment(locator);
        let (t0, t1) = (self.times[j], self.times[j + 1]);
        let dt = t1 - t0;
        let (p0, p1) = (&self.knots[j], &self.knots[j + 1]);
        match self.scheme {
            Scheme::CubicHermiteBackward => {
                let (m0, m1) = (&self.slopes[j], &self.slopes[j + 1]);
                let s = (t - t0) / dt;
                let (s2, s3) = (s * s, s * s * s);
                let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
                let h10 = s3 - 2.0 * s2 + s;
                let h01 = -2.0 * s3 + 3.0 * s2;
                let h11 = s3 - s2;
                let d10 = 3.0 * s2 - 4.0 * s + 1.0;
                let d01 = -6.0 * s2 + 6.0 * s;
                let d11 = 3.0 * s2 - 2.0 * s;
                let mut x = Vec::with_capacity(dim);
                let mut dx = Vec::with_capacity(dim);
                // anchor at the nearer knot so knots and constant channels are exact
                for c in 0..dim {
                    let gap = p1[c] - p0[c];
                    let base = if s < 0.5 { p0[c] + h01 * gap } else { p1[c] - h00 * gap };
                    x.push(base + dt * (h10 * m0[c] + h11 * m1[c]));
                    dx.push(d01 * gap / dt + d10 * m0[c] + d11 * m1[c]);
                }
                (x, dx)
            }
            Scheme::Rectilinear => {
                let mid = 0.5 * (t0 + t1);
                let time_ch = dim - 1;
                let mut x = p0.clone();
                let mut dx = vec![0.0; dim];
                if locator < mid {
                    // time-advance leg
                    x[time_ch] = t0 + 2.0 * (t - t0);
                    dx[time_ch] = 2.0;
                } else {
                    let frac = (t - mid) / (t1 - mid);
                    for c in 0..time_ch {
                        x[c] = p0[c] + frac * (p1[c] - p0[c]);
                        dx[c] = (p1[c] - p0[c]) / (t1 - mid);
                    }
                    x[time_ch] = t1;
                }
                (x, dx)
            }
        }
    }
}
