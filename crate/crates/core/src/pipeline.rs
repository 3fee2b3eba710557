//! Commands shared by the CLI: simulate, train, evaluate, interpret, cluster.
//!
//! Output layout under `out`: `config.snapshot`, `checkpoint.bin`,
//! `logs/epoch.csv`, `metrics.report`, `metrics.json`, `alignment.csv`,
//! `calibration.csv`, `data/*.csv` (simulate) and `interpret/*.csv`.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, Checkpoint};
use crate::config::{DataSource, RunConfig};
use crate::controlpath::ControlPath;
use crate::data::{apply_stats, export_csv, generate_synthetic, ingest_csv, split, standardize, Cohort, Split};
use crate::error::{Error, Result};
use crate::interpret::{
    adjusted_rand_index, attach_outcomes, average_field, cluster_trajectories, feature_importance, feature_relevance,
    phenotype_map, AvgField, ClusterResult, Importance, PhenotypeCell,
};
use crate::metrics::{alignment_spearman, calibration_bins, quartile_eval, CalibrationBin, EvalReport};
use crate::model::{paths_for, TrajSurv};
use crate::ncde::LatentTrajectory;
use crate::survhead::{breslow_baseline, predict_survival, SurvivalLabel};
use crate::train::{train, EpochLog, TrainOutcome};

pub const CHECKPOINT: &str = "checkpoint.bin";
pub const SNAPSHOT: &str = "config.snapshot";
pub const REPORT: &str = "metrics.report";

/// Hours whose alignment is averaged into `alignment_mid`.
pub const MID_WINDOW: (usize, usize) = (8, 28);

fn io<T>(path: &Path, r: std::io::Result<T>) -> Result<T> {
    r.map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e.into(),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    io(dir, fs::create_dir_all(dir))
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Loads the configured cohort and assigns splits (not standardized).
pub fn load_cohort(cfg: &RunConfig) -> Result<Cohort> {
    let cohort = match cfg.source {
        DataSource::Synthetic => generate_synthetic(&cfg.synthetic_config())?,
        DataSource::Csv => {
            let (paths, schema) = cfg.csv_inputs()?;
            ingest_csv(&paths, &schema)?
        }
    };
    split(cohort, cfg.split, cfg.data_seed())
}

/// Split cohort standardized with training statistics.
pub fn prepare(cfg: &RunConfig) -> Result<Cohort> {
    standardize(load_cohort(cfg)?)
}

pub fn init_model(cfg: &RunConfig, n_features: usize) -> TrajSurv {
    TrajSurv::init(n_features, cfg.model, &mut ChaCha8Rng::seed_from_u64(cfg.seed))
}

pub fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<Cohort> {
    if cfg.source != DataSource::Synthetic {
        return Err(Error::config("simulate needs data.source = synthetic"));
    }
    ensure_dir(out)?;
    let cohort = load_cohort(cfg)?;
    let dir = out.join("data");
    ensure_dir(&dir)?;
    export_csv(&cohort, &dir)?;
    let splits = out.join("data").join("splits.csv");
    write_csv(
        &splits,
        &["patient_id", "split"],
        cohort.records.iter().zip(&cohort.splits).map(|(r, s)| {
            let name = match s {
                Split::Train => "train",
                Split::Val => "val",
                Split::Test => "test",
            };
            vec![r.id.clone(), name.to_string()]
        }),
    )?;
    io(&out.join(SNAPSHOT), fs::write(out.join(SNAPSHOT), cfg.snapshot()))?;
    log::info!("simulated {} patients into {}", cohort.len(), dir.display());
    Ok(cohort)
}

pub fn write_epoch_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    write_csv(
        path,
        &["epoch", "partial_likelihood", "ranking", "tacl", "total", "val_c_index", "val_loss"],
        log.iter().map(|e| {
            vec![
                e.epoch.to_string(),
                e.partial_likelihood.to_string(),
                e.ranking.to_string(),
                e.tacl.to_string(),
                e.total.to_string(),
                opt(e.val_c_index),
                e.val_loss.to_string(),
            ]
        }),
    )
}

/// Trains on a prepared cohort with the config's loss and schedule.
pub fn fit(cfg: &RunConfig, cohort: &Cohort, paths: &[ControlPath]) -> Result<TrainOutcome> {
    let mut tc = cfg.train;
    tc.seed = cfg.seed;
    let model = init_model(cfg, cohort.n_features());
    train(model, cohort, paths, &cfg.loss, &tc, |_| {})
}

pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<TrainOutcome> {
    ensure_dir(&out.join("logs"))?;
    io(&out.join(SNAPSHOT), fs::write(out.join(SNAPSHOT), cfg.snapshot()))?;
    let cohort = prepare(cfg)?;
    let stats = cohort.stats.clone().expect("standardized");
    let paths = paths_for(&cohort, &stats, cfg.model.scheme)?;
    let outcome = fit(cfg, &cohort, &paths)?;
    write_epoch_log(&out.join("logs").join("epoch.csv"), &outcome.log)?;
    checkpoint::save(&out.join(CHECKPOINT), &outcome.model, &stats, &cfg.hash(), Some(outcome.best_epoch))?;
    log::info!("best epoch {} of {}", outcome.best_epoch, outcome.log.len());
    Ok(outcome)
}

/// Cohort standardized with the checkpoint's statistics, plus its paths.
pub fn restore(cfg: &RunConfig, out: &Path, checkpoint_path: Option<&Path>) -> Result<(Checkpoint, Cohort, Vec<ControlPath>)> {
    let path = checkpoint_path.map_or_else(|| out.join(CHECKPOINT), Path::to_path_buf);
    let ck = checkpoint::load(&path, &cfg.model, Some(&cfg.hash()))?;
    let cohort = apply_stats(load_cohort(cfg)?, ck.stats.clone())?;
    let paths = paths_for(&cohort, &ck.stats, cfg.model.scheme)?;
    Ok((ck, cohort, paths))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HourAlignment {
    pub hour: usize,
    pub n: usize,
    pub spearman: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub report: EvalReport,
    pub n_test: usize,
    pub n_events: usize,
    pub alignment: Vec<HourAlignment>,
    pub alignment_mid: Option<f64>,
    pub calibration_time: f64,
    pub calibration: Vec<CalibrationBin>,
}

/// States at whole hours `0..=end` of a trajectory.
pub fn hourly_states(traj: &LatentTrajectory, end: f64) -> Vec<Vec<f64>> {
    traj.grid_times
        .iter()
        .zip(&traj.grid_states)
        .filter(|(t, _)| t.fract() == 0.0 && **t <= end)
        .map(|(_, z)| z.clone())
        .collect()
}

/// Hourly latent states of the given patients (index aligned with `idx`).
pub fn hourly_trajectories(model: &TrajSurv, paths: &[ControlPath], idx: &[usize]) -> Result<Vec<Vec<Vec<f64>>>> {
    let refs: Vec<&ControlPath> = idx.iter().map(|&i| &paths[i]).collect();
    let trajs = model.encode(&refs)?;
    Ok(trajs
        .iter()
        .zip(&refs)
        .map(|(t, p)| hourly_states(t, p.end_time()))
        .collect())
}

/// Spearman alignment between latent and severity distances at each hour,
/// over patients whose window reaches that hour.
pub fn alignment_by_hour(hourly: &[Vec<Vec<f64>>], severity: &[&[Vec<f64>]], hours: usize) -> Vec<HourAlignment> {
    (0..hours)
        .map(|h| {
            let (z, s): (Vec<Vec<f64>>, Vec<Vec<f64>>) = hourly
                .iter()
                .zip(severity)
                .filter_map(|(t, sev)| Some((t.get(h)?.clone(), sev.get(h)?.clone())))
                .unzip();
            HourAlignment {
                hour: h,
                n: z.len(),
                spearman: alignment_spearman(&z, &s),
            }
        })
        .collect()
}

pub fn mid_window_mean(alignment: &[HourAlignment]) -> Option<f64> {
    let v: Vec<f64> = alignment
        .iter()
        .filter(|a| a.hour >= MID_WINDOW.0 && a.hour <= MID_WINDOW.1)
        .filter_map(|a| a.spearman)
        .collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Discrimination and calibration of `risks` on the test split, with the
/// Breslow baseline fitted on the training split.
pub fn evaluate_risks(
    cohort: &Cohort,
    train_risks: &[f64],
    test_risks: &[f64],
    calibration_bins_n: usize,
) -> Result<(EvalReport, f64, Vec<CalibrationBin>)> {
    let train: Vec<SurvivalLabel> = cohort.labels(&cohort.indices(Split::Train));
    let test: Vec<SurvivalLabel> = cohort.labels(&cohort.indices(Split::Test));
    let baseline = breslow_baseline(train_risks, &train)?;
    let report = quartile_eval(test_risks, Some(&baseline), &train, &test)?;
    let t = report.eval_times[1];
    let surv = test_risks
        .iter()
        .map(|&r| predict_survival(r, &baseline, t))
        .collect::<Result<Vec<_>>>()?;
    let bins = calibration_bins(&surv, &test, t, calibration_bins_n)?;
    Ok((report, t, bins))
}

/// Ground-truth risks stored by the generator.
pub fn oracle_risks(cohort: &Cohort, idx: &[usize]) -> Result<Vec<f64>> {
    idx.iter()
        .map(|&i| {
            cohort.records[i]
                .true_risk
                .ok_or_else(|| Error::usage("oracle evaluation needs ground-truth risks (synthetic data)"))
        })
        .collect()
}

pub fn evaluate_model(model: &TrajSurv, cohort: &Cohort, paths: &[ControlPath], cfg: &RunConfig) -> Result<EvalOutput> {
    let train_idx = cohort.indices(Split::Train);
    let test_idx = cohort.indices(Split::Test);
    let train_refs: Vec<&ControlPath> = train_idx.iter().map(|&i| &paths[i]).collect();
    let train_risks = model.risks(&model.encode(&train_refs)?)?;
    let test_refs: Vec<&ControlPath> = test_idx.iter().map(|&i| &paths[i]).collect();
    let trajs = model.encode(&test_refs)?;
    let test_risks = model.risks(&trajs)?;
    let hourly: Vec<Vec<Vec<f64>>> = trajs
        .iter()
        .zip(&test_refs)
        .map(|(t, p)| hourly_states(t, p.end_time()))
        .collect();
    let severity: Vec<&[Vec<f64>]> = test_idx.iter().map(|&i| cohort.records[i].severity.s.as_slice()).collect();
    let alignment = alignment_by_hour(&hourly, &severity, cfg.window_h.floor() as usize + 1);
    let (report, calibration_time, calibration) = evaluate_risks(cohort, &train_risks, &test_risks, cfg.eval.calibration_bins)?;
    Ok(EvalOutput {
        n_test: test_idx.len(),
        n_events: test_idx.iter().filter(|&&i| cohort.records[i].label.event).count(),
        alignment_mid: mid_window_mean(&alignment),
        alignment,
        report,
        calibration_time,
        calibration,
    })
}

pub fn evaluate_oracle(cohort: &Cohort, cfg: &RunConfig) -> Result<EvalOutput> {
    let train_idx = cohort.indices(Split::Train);
    let test_idx = cohort.indices(Split::Test);
    let (report, calibration_time, calibration) = evaluate_risks(
        cohort,
        &oracle_risks(cohort, &train_idx)?,
        &oracle_risks(cohort, &test_idx)?,
        cfg.eval.calibration_bins,
    )?;
    Ok(EvalOutput {
        n_test: test_idx.len(),
        n_events: test_idx.iter().filter(|&&i| cohort.records[i].label.event).count(),
        alignment: Vec::new(),
        alignment_mid: None,
        report,
        calibration_time,
        calibration,
    })
}

/// The flat `key = value` report.
pub fn report_text(e: &EvalOutput) -> String {
    let r = &e.report;
    let mut lines = vec![
        format!("n_test = {}", e.n_test),
        format!("n_events = {}", e.n_events),
        format!("c_index = {}", r.c_index),
        format!("brier = {}", opt(r.brier)),
        format!("auc = {}", opt(r.auc)),
    ];
    for (k, q) in ["q25", "q50", "q75"].iter().enumerate() {
        lines.push(format!("eval_time.{q} = {}", r.eval_times[k]));
        lines.push(format!("c_index.{q} = {}", opt(r.c_index_at[k])));
        lines.push(format!("brier.{q} = {}", opt(r.brier_at[k])));
        lines.push(format!("auc.{q} = {}", opt(r.auc_at[k])));
    }
    lines.push(format!("alignment_mid = {}", opt(e.alignment_mid)));
    lines.push(format!("calibration_time = {}", e.calibration_time));
    let mut out = lines.join("\n");
    out.push('\n');
    out
}

/// Parses a report written by `report_text`; empty values map to `None`.
pub fn parse_report(text: &str) -> Result<Vec<(String, Option<f64>)>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let (k, v) = l
                .split_once('=')
                .ok_or_else(|| Error::validation(format!("malformed report line `{l}`")))?;
            let v = v.trim();
            let val = if v.is_empty() {
                None
            } else {
                Some(v.parse().map_err(|_| Error::validation(format!("bad number in `{l}`")))?)
            };
            Ok((k.trim().to_string(), val))
        })
        .collect()
}

pub fn write_eval(out: &Path, e: &EvalOutput) -> Result<()> {
    ensure_dir(out)?;
    let report = out.join(REPORT);
    io(&report, fs::write(&report, report_text(e)))?;
    let json = out.join("metrics.json");
    let text = serde_json::to_string_pretty(e).map_err(|err| Error::validation(err.to_string()))?;
    io(&json, fs::write(&json, text))?;
    write_csv(
        &out.join("alignment.csv"),
        &["hour", "n", "spearman"],
        e.alignment.iter().map(|a| vec![a.hour.to_string(), a.n.to_string(), opt(a.spearman)]),
    )?;
    write_csv(
        &out.join("calibration.csv"),
        &["time", "lo", "hi", "count", "mean_predicted", "observed"],
        e.calibration.iter().map(|b| {
            vec![
                e.calibration_time.to_string(),
                b.lo.to_string(),
                b.hi.to_string(),
                b.count.to_string(),
                opt(b.mean_predicted),
                opt(b.observed),
            ]
        }),
    )
}

pub fn cmd_evaluate(cfg: &RunConfig, out: &Path, checkpoint_path: Option<&Path>, oracle: bool) -> Result<EvalOutput> {
    let e = if oracle {
        evaluate_oracle(&load_cohort(cfg)?, cfg)?
    } else {
        let (ck, cohort, paths) = restore(cfg, out, checkpoint_path)?;
        evaluate_model(&ck.model, &cohort, &paths, cfg)?
    };
    write_eval(out, &e)?;
    log::info!("test C-index {:.4}", e.report.c_index);
    Ok(e)
}

pub fn feature_labels(cohort: &Cohort) -> Vec<String> {
    (0..cohort.n_features())
        .map(|k| cohort.feature_names.get(k).cloned().unwrap_or_else(|| format!("x{k}")))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct InterpretOutput {
    pub field: AvgField,
    pub importance: Importance,
    pub relevance: Vec<Vec<f64>>,
    pub phenotype: Option<Vec<PhenotypeCell>>,
}

pub fn interpret_model(model: &TrajSurv, cohort: &Cohort, paths: &[ControlPath], cfg: &RunConfig) -> Result<InterpretOutput> {
    let all: Vec<usize> = (0..cohort.len()).collect();
    let hourly = hourly_trajectories(model, paths, &all)?;
    let field = average_field(&model.encoder, &hourly, cfg.interpret.n_samples, cfg.seed)?;
    let importance = feature_importance(&field);
    let relevance = feature_relevance(&field);
    let phenotype = if model.config.latent_dim == 2 {
        let mut anchors = Vec::new();
        let mut comps = Vec::new();
        for (traj, r) in hourly.iter().zip(&cohort.records) {
            for (h, z) in traj.iter().enumerate() {
                if let Some(s) = r.severity.s.get(h) {
                    anchors.push(z.clone());
                    comps.push(s.clone());
                }
            }
        }
        if anchors.is_empty() {
            None
        } else {
            let g = cfg.interpret.probe_grid;
            let lo = |d: usize| anchors.iter().map(|a| a[d]).fold(f64::INFINITY, f64::min);
            let hi = |d: usize| anchors.iter().map(|a| a[d]).fold(f64::NEG_INFINITY, f64::max);
            let (x0, x1, y0, y1) = (lo(0), hi(0), lo(1), hi(1));
            let probes: Vec<Vec<f64>> = (0..g)
                .flat_map(|i| {
                    (0..g).map(move |j| {
                        let fx = i as f64 / (g - 1) as f64;
                        let fy = j as f64 / (g - 1) as f64;
                        vec![x0 + fx * (x1 - x0), y0 + fy * (y1 - y0)]
                    })
                })
                .collect();
            Some(phenotype_map(&anchors, &comps, &probes, cfg.interpret.k_neighbors)?)
        }
    } else {
        None
    };
    Ok(InterpretOutput {
        field,
        importance,
        relevance,
        phenotype,
    })
}

pub fn write_interpret(dir: &Path, names: &[String], severity_names: &[String], r: &InterpretOutput) -> Result<()> {
    ensure_dir(dir)?;
    let mut rows: Vec<Vec<String>> = r
        .importance
        .ranking
        .iter()
        .enumerate()
        .map(|(k, f)| vec![(k + 1).to_string(), f.feature.to_string(), names[f.feature].clone(), f.score.to_string()])
        .collect();
    rows.push(vec![
        "excluded".into(),
        names.len().to_string(),
        "time".into(),
        r.importance.time_score.to_string(),
    ]);
    write_csv(&dir.join("importance.csv"), &["rank", "feature", "name", "score"], rows)?;

    let mut header = vec!["feature"];
    header.extend(names.iter().map(String::as_str));
    write_csv(
        &dir.join("relevance.csv"),
        &header,
        r.relevance.iter().enumerate().map(|(a, row)| {
            let mut v = vec![names[a].clone()];
            v.extend(row.iter().map(f64::to_string));
            v
        }),
    )?;
    write_csv(
        &dir.join("relevance_long.csv"),
        &["feature_a", "feature_b", "cosine"],
        r.relevance.iter().enumerate().flat_map(|(a, row)| {
            row.iter()
                .enumerate()
                .map(move |(b, c)| vec![names[a].clone(), names[b].clone(), c.to_string()])
        }),
    )?;
    let f = &r.field;
    write_csv(
        &dir.join("avg_field.csv"),
        &["latent", "channel", "value"],
        (0..f.rows).flat_map(|i| {
            (0..f.cols).map(move |k| {
                let ch = if k < names.len() { names[k].clone() } else { "time".into() };
                vec![i.to_string(), ch, f.data[i * f.cols + k].to_string()]
            })
        }),
    )?;
    if let Some(cells) = &r.phenotype {
        let mut header = vec!["z0", "z1", "dominant", "intensity"];
        header.extend(severity_names.iter().map(String::as_str));
        write_csv(
            &dir.join("phenotype.csv"),
            &header,
            cells.iter().map(|c| {
                let mut v = vec![
                    c.probe[0].to_string(),
                    c.probe[1].to_string(),
                    severity_names.get(c.dominant).cloned().unwrap_or_else(|| c.dominant.to_string()),
                    c.intensity.to_string(),
                ];
                v.extend(c.means.iter().map(f64::to_string));
                v
            }),
        )?;
    }
    Ok(())
}

pub fn cmd_interpret(cfg: &RunConfig, out: &Path, checkpoint_path: Option<&Path>) -> Result<InterpretOutput> {
    let (ck, cohort, paths) = restore(cfg, out, checkpoint_path)?;
    let r = interpret_model(&ck.model, &cohort, &paths, cfg)?;
    write_interpret(&out.join("interpret"), &feature_labels(&cohort), &cohort.severity_names, &r)?;
    Ok(r)
}

/// Clusters the hourly trajectories of `idx` and attaches outcomes.
pub fn cluster_patients(
    model: &TrajSurv,
    cohort: &Cohort,
    paths: &[ControlPath],
    idx: &[usize],
    clusters: usize,
    dba_iters: usize,
) -> Result<ClusterResult> {
    let hourly = hourly_trajectories(model, paths, idx)?;
    let mut result = cluster_trajectories(&hourly, clusters, dba_iters)?;
    let severity: Vec<&[Vec<f64>]> = idx.iter().map(|&i| cohort.records[i].severity.s.as_slice()).collect();
    attach_outcomes(&mut result, &severity, &cohort.labels(idx));
    Ok(result)
}

/// ARI against generating families, when every patient has one.
pub fn family_ari(cohort: &Cohort, idx: &[usize], result: &ClusterResult) -> Option<f64> {
    let fam: Option<Vec<usize>> = idx.iter().map(|&i| cohort.records[i].family).collect();
    fam.map(|f| adjusted_rand_index(&result.assignments, &f))
}

pub fn write_clusters(dir: &Path, cohort: &Cohort, idx: &[usize], r: &ClusterResult) -> Result<()> {
    ensure_dir(dir)?;
    let name = |c: usize| r.names[c].clone();
    write_csv(
        &dir.join("cluster_assignments.csv"),
        &["patient_id", "cluster", "name", "family"],
        idx.iter().zip(&r.assignments).map(|(&i, &c)| {
            let rec = &cohort.records[i];
            vec![
                rec.id.clone(),
                c.to_string(),
                name(c),
                rec.family.map(|f| f.to_string()).unwrap_or_default(),
            ]
        }),
    )?;
    write_csv(
        &dir.join("cluster_centroids.csv"),
        &["cluster", "name", "step", "latent", "value"],
        r.centroids.iter().enumerate().flat_map(|(c, seq)| {
            seq.iter().enumerate().flat_map(move |(s, z)| {
                z.iter()
                    .enumerate()
                    .map(move |(d, v)| vec![c.to_string(), name(c), s.to_string(), d.to_string(), v.to_string()])
            })
        }),
    )?;
    let comp = |q: usize| cohort.severity_names.get(q).cloned().unwrap_or_else(|| format!("s{q}"));
    write_csv(
        &dir.join("cluster_severity.csv"),
        &["cluster", "name", "hour", "component", "value"],
        r.severity_profiles.iter().enumerate().flat_map(|(c, prof)| {
            prof.iter().enumerate().flat_map(move |(h, row)| {
                row.iter()
                    .enumerate()
                    .map(move |(q, v)| vec![c.to_string(), name(c), h.to_string(), comp(q), v.to_string()])
            })
        }),
    )?;
    write_csv(
        &dir.join("cluster_km.csv"),
        &["cluster", "name", "time", "survival", "at_risk", "events"],
        r.km.iter().enumerate().flat_map(|(c, km)| {
            (0..km.times.len()).map(move |k| {
                vec![
                    c.to_string(),
                    name(c),
                    km.times[k].to_string(),
                    km.survival[k].to_string(),
                    km.at_risk[k].to_string(),
                    km.events[k].to_string(),
                ]
            })
        }),
    )?;
    let ari = family_ari(cohort, idx, r);
    write_csv(
        &dir.join("cluster_summary.csv"),
        &["cluster", "name", "size", "events", "initial_severity", "family_ari"],
        (0..r.n_clusters()).map(|c| {
            let m = r.members(c);
            let events = m.iter().filter(|&&j| cohort.records[idx[j]].label.event).count();
            let init = r.severity_profiles[c].first().and_then(|row| row.first()).copied();
            vec![c.to_string(), name(c), m.len().to_string(), events.to_string(), opt(init), opt(ari)]
        }),
    )
}

pub fn cmd_cluster(cfg: &RunConfig, out: &Path, checkpoint_path: Option<&Path>) -> Result<ClusterResult> {
    let (ck, cohort, paths) = restore(cfg, out, checkpoint_path)?;
    let idx = cohort.indices(Split::Test);
    let r = cluster_patients(&ck.model, &cohort, &paths, &idx, cfg.interpret.clusters, cfg.interpret.dba_iters)?;
    write_clusters(&out.join("interpret"), &cohort, &idx, &r)?;
    if let Some(a) = family_ari(&cohort, &idx, &r) {
        log::info!("adjusted Rand index against generating families: {a:.3}");
    }
    Ok(r)
}

/// The config to use for a command: `path` if given, otherwise the
/// snapshot in `out`, otherwise defaults.
pub fn resolve_config(path: Option<&Path>, out: &Path) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => {
            let snap: PathBuf = out.join(SNAPSHOT);
            if snap.exists() {
                RunConfig::load(&snap)
            } else {
                Ok(RunConfig::default())
            }
        }
    }
}
