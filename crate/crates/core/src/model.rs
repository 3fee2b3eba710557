//! The full model: NCDE encoder plus Cox risk head, and the training loss
//! `L = L_PL + L_PR + α·L_TACL` on a batch of patients.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::controlpath::{build_path, impute, ControlPath, Scheme};
use crate::data::{Cohort, FeatureStats};
use crate::error::{Error, Result};
use crate::ncde::{encode_batch, encode_many, BoundEncoder, EncoderParams, LatentTrajectory, SolverConfig};
use crate::nn::BoundFfn;
use crate::survhead::{partial_likelihood_on_tape, ranking_on_tape, risk_score, RiskHeadParams, SurvivalLabel};
use crate::tacl::{tacl_on_tape, AnchorLabels, SeveritySeries, TaclConfig};
use crate::tensor::{Gradients, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub latent_dim: usize,
    pub hidden: usize,
    pub head_hidden: usize,
    pub scheme: Scheme,
    pub solver: SolverConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            latent_dim: 64,
            hidden: 64,
            head_hidden: 32,
            scheme: Scheme::CubicHermiteBackward,
            solver: SolverConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub alpha: f64,
    pub tacl: TaclConfig,
    pub use_tacl: bool,
    pub use_ranking_loss: bool,
    pub include_self_pairs: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 1.0,
            tacl: TaclConfig::default(),
            use_tacl: true,
            use_ranking_loss: true,
            include_self_pairs: true,
        }
    }
}

/// Loss components of one batch, as plain numbers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub partial_likelihood: f64,
    pub ranking: f64,
    pub tacl: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajSurv {
    pub config: ModelConfig,
    pub encoder: EncoderParams,
    pub head: RiskHeadParams,
}

pub struct BoundModel {
    pub encoder: BoundEncoder,
    pub head: BoundFfn,
}

impl BoundModel {
    /// Parameter vars in [`TrajSurv::named_params`] order.
    pub fn vars(&self) -> Vec<Var> {
        let mut v = self.encoder.vars();
        v.extend(self.head.vars());
        v
    }
}

/// Everything a batch loss needs about one patient.
pub struct PatientView<'a> {
    pub path: &'a ControlPath,
    pub label: SurvivalLabel,
    pub severity: &'a SeveritySeries,
}

impl TrajSurv {
    pub fn init<R: Rng>(n_features: usize, config: ModelConfig, rng: &mut R) -> Self {
        let encoder = EncoderParams::init(n_features, config.latent_dim, config.hidden, rng);
        let head = RiskHeadParams::init(config.latent_dim, config.head_hidden, rng);
        TrajSurv { config, encoder, head }
    }

    pub fn n_features(&self) -> usize {
        self.encoder.path_dim() - 1
    }

    fn groups(&self) -> [(&'static str, &crate::nn::Ffn); 3] {
        [
            ("g_phi", &self.encoder.g_phi),
            ("f_theta", &self.encoder.f_theta),
            ("g_eta", &self.head.g_eta),
        ]
    }

    /// `(name, tensor)` for every parameter, e.g. `f_theta.1.weight`.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (net, ffn) in self.groups() {
            for (i, layer) in ffn.layers.iter().enumerate() {
                out.push((format!("{net}.{i}.weight"), &layer.weight));
                out.push((format!("{net}.{i}.bias"), &layer.bias));
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.encoder.g_phi.tensors_mut();
        out.extend(self.encoder.f_theta.tensors_mut());
        out.extend(self.head.g_eta.tensors_mut());
        out
    }

    pub fn num_params(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundModel {
        BoundModel {
            encoder: self.encoder.bind(tape, trainable),
            head: self.head.g_eta.bind(tape, trainable),
        }
    }

    /// Imputed control paths for every record of a standardized cohort.
    pub fn paths(&self, cohort: &Cohort) -> Result<Vec<ControlPath>> {
        let stats = cohort
            .stats
            .as_ref()
            .ok_or_else(|| Error::usage("cohort must be standardized before building paths"))?;
        paths_for(cohort, stats, self.config.scheme)
    }

    pub fn encode(&self, paths: &[&ControlPath]) -> Result<Vec<LatentTrajectory>> {
        encode_many(paths, &self.encoder, &self.config.solver, 64)
    }

    pub fn risks(&self, trajectories: &[LatentTrajectory]) -> Result<Vec<f64>> {
        trajectories.iter().map(|t| risk_score(t.last_state(), &self.head)).collect()
    }

    /// Records the batch loss on `tape` and returns it with its parts.
    pub fn batch_loss(
        &self,
        tape: &mut Tape,
        bound: &BoundModel,
        batch: &[PatientView],
        loss: &LossConfig,
    ) -> Result<(Var, LossParts)> {
        let paths: Vec<&ControlPath> = batch.iter().map(|p| p.path).collect();
        let labels: Vec<SurvivalLabel> = batch.iter().map(|p| p.label).collect();
        let trajs = encode_batch(tape, &bound.encoder, &paths, &self.config.solver)?;

        let last: Vec<(Var, usize)> = trajs.iter().map(|t| (t.last.var, t.last.row)).collect();
        let z_last = tape.gather_rows(&last)?;
        let risks = bound.head.forward(tape, z_last)?;

        let pl = partial_likelihood_on_tape(tape, risks, &labels)?;
        let mut parts = LossParts {
            partial_likelihood: tape.value(pl).item(),
            ..LossParts::default()
        };
        let mut terms = vec![(pl, 1.0)];
        if loss.use_ranking_loss {
            let pr = ranking_on_tape(tape, risks, &labels, loss.include_self_pairs)?;
            parts.ranking = tape.value(pr).item();
            terms.push((pr, 1.0));
        }
        if loss.use_tacl && loss.alpha > 0.0 {
            let mut refs = Vec::new();
            let mut anchors = AnchorLabels::default();
            for (p, (traj, view)) in trajs.iter().zip(batch).enumerate() {
                for a in &traj.anchors {
                    let (s, v) = view.severity.nearest(a.time);
                    anchors.push(a.time, s, v, p);
                    refs.push((a.var, a.row));
                }
            }
            if anchors.len() >= 2 {
                let z = tape.gather_rows(&refs)?;
                let tl = tacl_on_tape(tape, z, &anchors, &loss.tacl)?;
                parts.tacl = tape.value(tl).item();
                terms.push((tl, loss.alpha));
            }
        }
        let total = tape.lincomb(&terms)?;
        parts.total = tape.value(total).item();
        Ok((total, parts))
    }

    /// Loss value without recording gradients.
    pub fn loss_value(&self, batch: &[PatientView], loss: &LossConfig) -> Result<LossParts> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        Ok(self.batch_loss(&mut tape, &bound, batch, loss)?.1)
    }

    /// Loss and per-parameter gradients in [`TrajSurv::named_params`] order.
    pub fn loss_and_grad(&self, batch: &[PatientView], loss: &LossConfig) -> Result<(LossParts, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, true);
        let (l, parts) = self.batch_loss(&mut tape, &bound, batch, loss)?;
        let vars = bound.vars();
        let grads: Gradients = tape.backward(l)?;
        Ok((parts, vars.into_iter().map(|v| grads.wrt(v)).collect()))
    }
}

pub fn paths_for(cohort: &Cohort, stats: &FeatureStats, scheme: Scheme) -> Result<Vec<ControlPath>> {
    cohort
        .records
        .iter()
        .map(|r| build_path(&impute(&r.obs, stats)?, scheme))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controlpath::ObservationSeq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn micro(rng: &mut ChaCha8Rng, n: usize, d: usize) -> (Vec<ControlPath>, Vec<SurvivalLabel>, Vec<SeveritySeries>) {
        let mut paths = Vec::new();
        let mut labels = Vec::new();
        let mut sev = Vec::new();
        for i in 0..n {
            let k = rng.gen_range(1..4);
            let times: Vec<f64> = (0..k).map(|j| (2 * j) as f64 + if j > 0 { rng.gen_range(0.0..1.0) } else { 0.0 }).collect();
            let vals = times.iter().map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            let seq = ObservationSeq::complete(times.clone(), vals).unwrap();
            paths.push(build_path(&seq, Scheme::CubicHermiteBackward).unwrap());
            labels.push(SurvivalLabel::new(rng.gen_range(1.0..20.0), i % 2 == 0).unwrap());
            let hours = times.last().unwrap().ceil() as usize + 1;
            let s = (0..hours).map(|_| (0..3).map(|_| rng.gen_range(0..4) as f64).collect()).collect();
            sev.push(SeveritySeries::from_scores(s, 2).unwrap());
        }
        (paths, labels, sev)
    }

    fn views<'a>(p: &'a [ControlPath], l: &[SurvivalLabel], s: &'a [SeveritySeries]) -> Vec<PatientView<'a>> {
        (0..p.len())
            .map(|i| PatientView {
                path: &p[i],
                label: l[i],
                severity: &s[i],
            })
            .collect()
    }

    fn small_config() -> ModelConfig {
        ModelConfig {
            latent_dim: 4,
            hidden: 6,
            head_hidden: 5,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn named_params_cover_every_tensor() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut m = TrajSurv::init(3, small_config(), &mut rng);
        let names: Vec<String> = m.named_params().iter().map(|(n, _)| n.clone()).collect();
        assert_eq!(names[0], "g_phi.0.weight");
        assert!(names.contains(&"f_theta.2.bias".to_string()));
        assert_eq!(names.last().unwrap(), "g_eta.1.bias");
        assert_eq!(m.params_mut().len(), names.len());
        let mut tape = Tape::new();
        assert_eq!(m.bind(&mut tape, true).vars().len(), names.len());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (p, l, s) = micro(&mut rng, 4, 3);
        let batch = views(&p, &l, &s);
        let model = TrajSurv::init(3, small_config(), &mut rng);
        let cfg = LossConfig::default();
        let (parts, grads) = model.loss_and_grad(&batch, &cfg).unwrap();
        assert!(parts.tacl > 0.0 && parts.ranking > 0.0);
        let h = 1e-5;
        let n_tensors = grads.len();
        for ti in 0..n_tensors {
            for e in 0..grads[ti].len() {
                let mut plus = model.clone();
                plus.params_mut()[ti].data_mut()[e] += h;
                let mut minus = model.clone();
                minus.params_mut()[ti].data_mut()[e] -= h;
                let fd = (plus.loss_value(&batch, &cfg).unwrap().total - minus.loss_value(&batch, &cfg).unwrap().total) / (2.0 * h);
                let an = grads[ti].data()[e];
                let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                assert!(err < 1e-4, "tensor {ti} entry {e}: fd {fd} analytic {an}");
            }
        }
    }

    #[test]
    fn ablation_flags_zero_their_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (p, l, s) = micro(&mut rng, 5, 2);
        let batch = views(&p, &l, &s);
        let model = TrajSurv::init(2, small_config(), &mut rng);
        let full = model.loss_value(&batch, &LossConfig::default()).unwrap();
        let a3 = LossConfig {
            use_tacl: false,
            use_ranking_loss: false,
            ..LossConfig::default()
        };
        let only_pl = model.loss_value(&batch, &a3).unwrap();
        assert_eq!(only_pl.tacl, 0.0);
        assert_eq!(only_pl.ranking, 0.0);
        assert_eq!(only_pl.total, only_pl.partial_likelihood);
        assert_eq!(only_pl.partial_likelihood, full.partial_likelihood);
        assert!((full.total - (full.partial_likelihood + full.ranking + full.tacl)).abs() < 1e-12);
    }
}
