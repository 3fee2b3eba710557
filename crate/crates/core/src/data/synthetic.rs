//! Synthetic longitudinal cohorts with known ground truth.
//!
//! Each patient carries a 2-D latent health state `h` simulated hourly as a
//! mean-reverting diffusion. The first coordinate is overall illness (higher
//! is worse), the second an organ-profile axis that decides which severity
//! components dominate. Patients belong to one of four trajectory families
//! that differ in starting point, drift target and reversion speed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};

use super::{Cohort, PatientRecord};
use crate::controlpath::ObservationSeq;
use crate::error::{Error, Result};
use crate::survhead::SurvivalLabel;
use crate::tacl::SeveritySeries;

pub const FAMILY_NAMES: [&str; 4] = ["ISQI", "ISK", "IMK", "IMSI"];

pub const SEVERITY_NAMES: [&str; 7] = [
    "overall",
    "respiration",
    "coagulation",
    "liver",
    "cardiovascular",
    "cns",
    "renal",
];

struct Family {
    start: [f64; 2],
    target: [f64; 2],
    rate: f64,
}

const FAMILIES: [Family; 4] = [
    // initially severe, quickly improving
    Family { start: [2.0, 0.8], target: [0.0, 0.8], rate: 0.15 },
    // initially severe, kept
    Family { start: [1.8, -0.8], target: [2.2, -0.8], rate: 0.05 },
    // initially mild, kept
    Family { start: [-1.6, -0.8], target: [-1.6, -0.8], rate: 0.05 },
    // initially mild, slowly improving
    Family { start: [0.6, 0.8], target: [-1.6, 0.8], rate: 0.04 },
];

/// Organ-profile loading of each severity component.
const PROFILE: [f64; 6] = [0.8, -0.8, 0.8, -0.8, 0.8, -0.8];

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub n_patients: usize,
    pub d_features: usize,
    /// Observation window in whole hours.
    pub window_h: usize,
    /// Probability that a given hour after admission carries an observation.
    pub obs_rate: f64,
    pub missing_frac: f64,
    pub seed: u64,
    /// Families patients are drawn from, uniformly.
    pub families: Vec<usize>,
    /// Features `0..n_signal` load on the latent state; the rest are drift and noise.
    pub n_signal: usize,
    /// Give features 0 and 1 identical mixing rows.
    pub tie_first_pair: bool,
    /// Log-hazard coefficients on `h(t_n)`.
    pub beta: [f64; 2],
    /// Multiplier on `beta`.
    pub effect_size: f64,
    pub base_hazard: f64,
    pub admin_horizon_h: f64,
    /// Rate of independent loss to follow-up, per hour.
    pub dropout_rate: f64,
    pub start_spread: f64,
    pub diffusion: f64,
    pub noise_sd: f64,
    pub drift_amplitude: f64,
    /// Hours for the severity trend central difference.
    pub trend_delta: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_patients: 2000,
            d_features: 12,
            window_h: 36,
            obs_rate: 3.0 / 36.0,
            missing_frac: 0.55,
            seed: 0,
            families: vec![0, 1, 2, 3],
            n_signal: 12,
            tie_first_pair: false,
            beta: [3.75, 0.5],
            effect_size: 1.0,
            base_hazard: 1e-5,
            admin_horizon_h: 720.0,
            dropout_rate: 0.0,
            start_spread: 1.0,
            diffusion: 0.01,
            noise_sd: 0.2,
            drift_amplitude: 0.2,
            trend_delta: 2,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if self.n_patients == 0 || self.d_features == 0 {
            return bad("synthetic cohort needs at least one patient and one feature".into());
        }
        if !(self.obs_rate > 0.0 && self.obs_rate <= 1.0) {
            return bad(format!("obs_rate {} must lie in (0, 1]", self.obs_rate));
        }
        if !(0.0..1.0).contains(&self.missing_frac) {
            return bad(format!("missing_frac {} must lie in [0, 1)", self.missing_frac));
        }
        if self.families.is_empty() || self.families.iter().any(|&f| f >= FAMILIES.len()) {
            return bad(format!("families {:?} must be a non-empty subset of 0..4", self.families));
        }
        if self.n_signal > self.d_features {
            return bad(format!("n_signal {} exceeds d_features {}", self.n_signal, self.d_features));
        }
        if self.tie_first_pair && self.n_signal < 2 {
            return bad("tie_first_pair needs at least two signal features".into());
        }
        if self.base_hazard <= 0.0 || self.admin_horizon_h <= self.window_h as f64 {
            return bad("base_hazard must be positive and the horizon must exceed the window".into());
        }
        if self.dropout_rate < 0.0 || self.noise_sd < 0.0 || self.diffusion < 0.0 || self.start_spread < 0.0 {
            return bad("rates and spreads must be non-negative".into());
        }
        if self.trend_delta < 1 {
            return bad("trend_delta must be at least 1".into());
        }
        Ok(())
    }
}

struct Design {
    mixing: Vec<[f64; 2]>,
    offset: Vec<f64>,
    scale: Vec<f64>,
    phase: Vec<f64>,
}

fn design(cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Design {
    let d = cfg.d_features;
    let mut mixing = Vec::with_capacity(d);
    for k in 0..d {
        if k < cfg.n_signal {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            mixing.push([a, b]);
        } else {
            mixing.push([0.0, 0.0]);
        }
    }
    if cfg.tie_first_pair {
        mixing[1] = mixing[0];
    }
    let offset = (0..d).map(|_| rng.gen_range(-5.0..5.0)).collect();
    let scale = (0..d).map(|_| rng.gen_range(0.5..3.0)).collect();
    let phase = (0..d).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
    Design { mixing, offset, scale, phase }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Severity components in [0, 4] followed by their sum.
pub(crate) fn severity_of(h: [f64; 2]) -> Vec<f64> {
    let comps: Vec<f64> = PROFILE
        .iter()
        .map(|c| (4.0 * sigmoid(1.2 * (h[0] + c * h[1]) - 0.5)).clamp(0.0, 4.0))
        .collect();
    let mut out = Vec::with_capacity(7);
    out.push(comps.iter().sum());
    out.extend(comps);
    out
}

/// Drift of the latent process for `family` at state `h`.
pub(crate) fn family_drift(family: usize, h: [f64; 2]) -> [f64; 2] {
    let f = &FAMILIES[family];
    [f.rate * (f.target[0] - h[0]), f.rate * (f.target[1] - h[1])]
}

/// Mean true log-hazard ratio of a family at hour `t` ignoring noise.
pub fn family_risk_level(cfg: &SyntheticConfig, family: usize, t: f64) -> f64 {
    let f = &FAMILIES[family];
    let decay = (-f.rate * t).exp();
    let h0 = f.target[0] + (f.start[0] - f.target[0]) * decay;
    let h1 = f.target[1] + (f.start[1] - f.target[1]) * decay;
    cfg.effect_size * (cfg.beta[0] * h0 + cfg.beta[1] * h1)
}

pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Cohort> {
    cfg.validate()?;
    let mut structure = ChaCha8Rng::seed_from_u64(cfg.seed);
    let design = design(cfg, &mut structure);
    let mut records = Vec::with_capacity(cfg.n_patients);
    for i in 0..cfg.n_patients {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(i as u64 + 1);
        records.push(patient(cfg, &design, i, &mut rng)?);
    }
    let feature_names = (0..cfg.d_features).map(|k| format!("x{k}")).collect();
    let severity_names = SEVERITY_NAMES.iter().map(|s| s.to_string()).collect();
    Ok(Cohort::new(records, feature_names, severity_names))
}

fn patient(cfg: &SyntheticConfig, design: &Design, i: usize, rng: &mut ChaCha8Rng) -> Result<PatientRecord> {
    let family = cfg.families[rng.gen_range(0..cfg.families.len())];
    let fam = &FAMILIES[family];

    let mut h = [0.0; 2];
    for (c, v) in h.iter_mut().enumerate() {
        let e: f64 = rng.sample(StandardNormal);
        *v = fam.start[c] + cfg.start_spread * e;
    }
    let mut latent = Vec::with_capacity(cfg.window_h + 1);
    latent.push(h);
    for _ in 0..cfg.window_h {
        let drift = family_drift(family, h);
        for c in 0..2 {
            let e: f64 = rng.sample(StandardNormal);
            h[c] += drift[c] + cfg.diffusion * e;
        }
        latent.push(h);
    }

    let mut hours = vec![0usize];
    for t in 1..=cfg.window_h {
        if rng.gen::<f64>() < cfg.obs_rate {
            hours.push(t);
        }
    }

    let d = cfg.d_features;
    let mut times = Vec::with_capacity(hours.len());
    let mut values = Vec::with_capacity(hours.len());
    for &t in &hours {
        let hv = latent[t];
        let mut row = Vec::with_capacity(d);
        for k in 0..d {
            let a = design.mixing[k];
            let seasonal = cfg.drift_amplitude * (std::f64::consts::TAU * t as f64 / 24.0 + design.phase[k]).sin();
            let e: f64 = rng.sample(StandardNormal);
            let x = a[0] * hv[0] + a[1] * hv[1] + seasonal + cfg.noise_sd * e;
            row.push(design.offset[k] + design.scale[k] * x);
        }
        let mut mask: Vec<bool> = (0..d).map(|_| rng.gen::<f64>() < cfg.missing_frac).collect();
        if mask.iter().all(|&m| m) {
            mask[rng.gen_range(0..d)] = false;
        }
        values.push(row.into_iter().zip(mask).map(|(x, m)| if m { None } else { Some(x) }).collect());
        times.push(t as f64);
    }
    let obs = ObservationSeq::new(times, values)?;

    let t_n = *hours.last().unwrap_or(&0);
    let h_n = latent[t_n];
    let risk = cfg.effect_size * (cfg.beta[0] * h_n[0] + cfg.beta[1] * h_n[1]);
    let hazard = cfg.base_hazard * risk.exp();
    let event_time = sample_exp(hazard, rng)?;
    let mut censor = cfg.admin_horizon_h - t_n as f64;
    if cfg.dropout_rate > 0.0 {
        censor = censor.min(sample_exp(cfg.dropout_rate, rng)?);
    }
    let label = if event_time <= censor {
        SurvivalLabel::new(event_time, true)?
    } else {
        SurvivalLabel::new(censor, false)?
    };

    let scores: Vec<Vec<f64>> = latent[..=t_n].iter().map(|&hv| severity_of(hv)).collect();
    let severity = SeveritySeries::from_scores(scores, cfg.trend_delta)?;

    Ok(PatientRecord {
        id: format!("p{i:05}"),
        obs,
        label,
        severity,
        true_risk: Some(risk),
        family: Some(family),
    })
}

fn sample_exp(rate: f64, rng: &mut ChaCha8Rng) -> Result<f64> {
    if !(rate.is_finite() && rate > 0.0) {
        return Err(Error::config(format!("hazard rate {rate} is not a positive finite number")));
    }
    let dist = Exp::new(rate).map_err(|e| Error::config(e.to_string()))?;
    Ok(dist.sample(rng))
}

/// Latent health path the generator used for `record`, recomputed from the
/// cohort seed. Exposed for diagnostics and tests.
pub fn latent_path(cfg: &SyntheticConfig, index: usize) -> Result<Vec<[f64; 2]>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64 + 1);
    let family = cfg.families[rng.gen_range(0..cfg.families.len())];
    let fam = &FAMILIES[family];
    let mut h = [0.0; 2];
    for (c, v) in h.iter_mut().enumerate() {
        let e: f64 = rng.sample(StandardNormal);
        *v = fam.start[c] + cfg.start_spread * e;
    }
    let mut latent = vec![h];
    for _ in 0..cfg.window_h {
        let drift = family_drift(family, h);
        for c in 0..2 {
            let e: f64 = rng.sample(StandardNormal);
            h[c] += drift[c] + cfg.diffusion * e;
        }
        latent.push(h);
    }
    Ok(latent)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tacl::severity_trend;

    fn cfg(n: usize, seed: u64) -> SyntheticConfig {
        SyntheticConfig {
            n_patients: n,
            seed,
            ..SyntheticConfig::default()
        }
    }

    #[test]
    fn deterministic_for_a_seed() {
        let a = generate_synthetic(&cfg(50, 9)).unwrap();
        let b = generate_synthetic(&cfg(50, 9)).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&cfg(50, 10)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn no_missing_when_disabled() {
        let c = generate_synthetic(&SyntheticConfig {
            missing_frac: 0.0,
            ..cfg(40, 1)
        })
        .unwrap();
        assert!(c.records.iter().all(|r| r.obs.is_complete()));
    }

    #[test]
    fn zero_obs_rate_is_a_config_error() {
        let r = generate_synthetic(&SyntheticConfig {
            obs_rate: 0.0,
            ..cfg(10, 1)
        });
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn calibration_statistics() {
        let c = generate_synthetic(&cfg(2000, 3)).unwrap();
        let n = c.len() as f64;
        let mean_obs = c.records.iter().map(|r| r.obs.len() as f64).sum::<f64>() / n;
        assert!((3.5..4.5).contains(&mean_obs), "mean observations {mean_obs}");
        let missing = c.records.iter().map(|r| r.obs.missing_fraction()).sum::<f64>() / n;
        assert!((0.45..0.6).contains(&missing), "missing rate {missing}");
        let events = c.records.iter().filter(|r| r.label.event).count() as f64 / n;
        assert!((0.05..0.4).contains(&events), "event rate {events}");
        for r in &c.records {
            assert!(r.obs.last_time() <= 36.0);
            assert_eq!(r.severity.hours(), r.obs.last_time() as usize + 1);
        }
    }

    #[test]
    fn severity_components_in_range_and_summed() {
        let c = generate_synthetic(&cfg(100, 4)).unwrap();
        for r in &c.records {
            for row in &r.severity.s {
                for &x in &row[1..] {
                    assert!((0.0..=4.0).contains(&x));
                }
                let sum: f64 = row[1..].iter().sum();
                assert!((row[0] - sum).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn event_rate_grows_with_effect_size() {
        for seed in 0..3 {
            let mut prev = -1.0;
            for effect in [0.25, 0.5, 1.0, 1.5] {
                let c = generate_synthetic(&SyntheticConfig {
                    effect_size: effect,
                    ..cfg(1000, seed)
                })
                .unwrap();
                let rate = c.records.iter().filter(|r| r.label.event).count() as f64 / c.len() as f64;
                assert!(rate > prev, "seed {seed} effect {effect}: {rate} <= {prev}");
                prev = rate;
            }
        }
    }

    #[test]
    fn trend_sign_follows_latent_drift() {
        let config = cfg(300, 6);
        let c = generate_synthetic(&config).unwrap();
        let (mut agree, mut total) = (0usize, 0usize);
        for (i, r) in c.records.iter().enumerate() {
            let latent = latent_path(&config, i).unwrap();
            let family = r.family.unwrap();
            let overall: Vec<Vec<f64>> = r.severity.s.iter().map(|row| vec![row[0]]).collect();
            let v = severity_trend(&overall, 2).unwrap();
            let n = overall.len();
            for t in 2..n.saturating_sub(2) {
                // derivative of overall severity along the drift direction
                let dh = family_drift(family, latent[t]);
                let eps = 1e-6;
                let ahead = severity_of([latent[t][0] + eps * dh[0], latent[t][1] + eps * dh[1]])[0];
                let analytic = (ahead - severity_of(latent[t])[0]) / eps;
                total += 1;
                if analytic.signum() == v[t][0].signum() {
                    agree += 1;
                }
            }
        }
        let frac = agree as f64 / total as f64;
        assert!(frac >= 0.9, "sign agreement {frac}");
    }

    #[test]
    fn tied_pair_shares_mixing() {
        let config = SyntheticConfig {
            n_signal: 3,
            tie_first_pair: true,
            ..cfg(5, 2)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = design(&config, &mut rng);
        assert_eq!(d.mixing[0], d.mixing[1]);
        assert_ne!(d.mixing[0], d.mixing[2]);
        assert!(d.mixing[3..].iter().all(|m| *m == [0.0, 0.0]));
    }
}
