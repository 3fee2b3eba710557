//! Long-format CSV import and export.
//!
//! * observations: `patient_id,time_h,feature,value` (observed entries only)
//! * labels: `patient_id,time_to_event_h,event[,true_risk,family]`
//! * severity (optional): `patient_id,hour,<component>...`

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use super::{Cohort, PatientRecord};
use crate::controlpath::ObservationSeq;
use crate::error::{Error, Result};
use crate::survhead::SurvivalLabel;
use crate::tacl::SeveritySeries;

#[derive(Clone, Debug, PartialEq)]
pub struct CsvPaths {
    pub observations: PathBuf,
    pub labels: PathBuf,
    pub severity: Option<PathBuf>,
}

impl CsvPaths {
    /// The fixed file names `export_csv` writes inside `dir`.
    pub fn in_dir(dir: &Path) -> Self {
        CsvPaths {
            observations: dir.join("observations.csv"),
            labels: dir.join("labels.csv"),
            severity: Some(dir.join("severity.csv")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CsvSchema {
    pub feature_names: Vec<String>,
    /// Rows with this many observed features or fewer are dropped.
    pub min_observed: usize,
    pub window_h: f64,
    pub trend_delta: usize,
}

impl CsvSchema {
    pub fn new(feature_names: Vec<String>) -> Self {
        CsvSchema {
            feature_names,
            min_observed: 20,
            window_h: 36.0,
            trend_delta: 2,
        }
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Schema(format!("{}: {e}", path.display()))
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    Ok(csv::Writer::from_writer(file))
}

pub fn export_csv(cohort: &Cohort, dir: &Path) -> Result<CsvPaths> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let paths = CsvPaths::in_dir(dir);

    let p = &paths.observations;
    let mut w = writer(p)?;
    w.write_record(["patient_id", "time_h", "feature", "value"]).map_err(|e| csv_err(p, e))?;
    for r in &cohort.records {
        for (t, row) in r.obs.times().iter().zip(r.obs.values()) {
            for (k, v) in row.iter().enumerate() {
                if let Some(x) = v {
                    w.write_record([r.id.as_str(), &t.to_string(), &cohort.feature_names[k], &x.to_string()])
                        .map_err(|e| csv_err(p, e))?;
                }
            }
        }
    }
    w.flush().map_err(io_err(p))?;

    let p = &paths.labels;
    let mut w = writer(p)?;
    w.write_record(["patient_id", "time_to_event_h", "event", "true_risk", "family"])
        .map_err(|e| csv_err(p, e))?;
    for r in &cohort.records {
        let risk = r.true_risk.map(|x| x.to_string()).unwrap_or_default();
        let fam = r.family.map(|x| x.to_string()).unwrap_or_default();
        let event = if r.label.event { "1" } else { "0" };
        w.write_record([r.id.as_str(), &r.label.time.to_string(), event, &risk, &fam])
            .map_err(|e| csv_err(p, e))?;
    }
    w.flush().map_err(io_err(p))?;

    let p = paths.severity.as_ref().expect("in_dir sets a severity path");
    let mut w = writer(p)?;
    let mut header = vec!["patient_id".to_string(), "hour".to_string()];
    header.extend(cohort.severity_names.iter().cloned());
    w.write_record(&header).map_err(|e| csv_err(p, e))?;
    for r in &cohort.records {
        for (h, row) in r.severity.s.iter().enumerate() {
            let mut rec = vec![r.id.clone(), h.to_string()];
            rec.extend(row.iter().map(|x| x.to_string()));
            w.write_record(&rec).map_err(|e| csv_err(p, e))?;
        }
    }
    w.flush().map_err(io_err(p))?;
    Ok(paths)
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn column(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Schema(format!("{}: missing column '{name}'", path.display())))
}

fn number(field: &str, what: &str, path: &Path, line: u64) -> Result<f64> {
    let x: f64 = field
        .parse()
        .map_err(|_| Error::Schema(format!("{}:{line}: {what} '{field}' is not a number", path.display())))?;
    if !x.is_finite() {
        return Err(Error::validation(format!("{}:{line}: {what} is not finite", path.display())));
    }
    Ok(x)
}

struct LabelRow {
    id: String,
    label: SurvivalLabel,
    true_risk: Option<f64>,
    family: Option<usize>,
}

fn read_labels(path: &Path) -> Result<Vec<LabelRow>> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let c_id = column(&headers, "patient_id", path)?;
    let c_time = column(&headers, "time_to_event_h", path)?;
    let c_event = column(&headers, "event", path)?;
    let c_risk = headers.iter().position(|h| h == "true_risk");
    let c_fam = headers.iter().position(|h| h == "family");
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let time = number(&rec[c_time], "time_to_event_h", path, line)?;
        let event = match &rec[c_event] {
            "1" => true,
            "0" => false,
            other => {
                return Err(Error::validation(format!(
                    "{}:{line}: event must be 0 or 1, got '{other}'",
                    path.display()
                )))
            }
        };
        let label = SurvivalLabel::new(time, event)
            .map_err(|e| Error::validation(format!("{}:{line}: {e}", path.display())))?;
        let true_risk = match c_risk.map(|c| &rec[c]) {
            Some(s) if !s.is_empty() => Some(number(s, "true_risk", path, line)?),
            _ => None,
        };
        let family = match c_fam.map(|c| &rec[c]) {
            Some(s) if !s.is_empty() => Some(
                s.parse()
                    .map_err(|_| Error::Schema(format!("{}:{line}: bad family '{s}'", path.display())))?,
            ),
            _ => None,
        };
        out.push(LabelRow {
            id: rec[c_id].to_string(),
            label,
            true_risk,
            family,
        });
    }
    Ok(out)
}

type Entries = Vec<(f64, usize, f64)>;

fn read_observations(path: &Path, schema: &CsvSchema) -> Result<HashMap<String, Entries>> {
    let index: HashMap<&str, usize> = schema
        .feature_names
        .iter()
        .enumerate()
        .map(|(k, n)| (n.as_str(), k))
        .collect();
    let mut rdr = reader(path)?;
    let headers = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let c_id = column(&headers, "patient_id", path)?;
    let c_time = column(&headers, "time_h", path)?;
    let c_feat = column(&headers, "feature", path)?;
    let c_val = column(&headers, "value", path)?;
    let mut out: HashMap<String, Entries> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let t = number(&rec[c_time], "time_h", path, line)?;
        if t < 0.0 {
            return Err(Error::validation(format!("{}:{line}: negative time {t}", path.display())));
        }
        let k = *index.get(&rec[c_feat]).ok_or_else(|| {
            Error::Schema(format!("{}:{line}: unknown feature '{}'", path.display(), &rec[c_feat]))
        })?;
        let x = number(&rec[c_val], "value", path, line)?;
        out.entry(rec[c_id].to_string()).or_default().push((t, k, x));
    }
    Ok(out)
}

fn read_severity(path: &Path) -> Result<(Vec<String>, HashMap<String, Vec<(usize, Vec<f64>)>>)> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let c_id = column(&headers, "patient_id", path)?;
    let c_hour = column(&headers, "hour", path)?;
    let comps: Vec<usize> = (0..headers.len()).filter(|&c| c != c_id && c != c_hour).collect();
    let names = comps.iter().map(|&c| headers[c].to_string()).collect();
    let mut out: HashMap<String, Vec<(usize, Vec<f64>)>> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let h = number(&rec[c_hour], "hour", path, line)?;
        if h < 0.0 || h.fract() != 0.0 {
            return Err(Error::validation(format!(
                "{}:{line}: hour must be a non-negative integer, got {h}",
                path.display()
            )));
        }
        let vals = comps
            .iter()
            .map(|&c| number(&rec[c], &headers[c], path, line))
            .collect::<Result<Vec<_>>>()?;
        out.entry(rec[c_id].to_string()).or_default().push((h as usize, vals));
    }
    Ok((names, out))
}

/// Reads a cohort. Observation rows are grouped per patient and time;
/// entries beyond the window are discarded and rows with `min_observed`
/// features or fewer are dropped. If rows at the start are dropped the
/// clock is rebased so the first kept row is hour 0; if rows at the end are
/// dropped the time-to-event is extended by the lost interval so the event
/// clock is unchanged. Patients left without rows are skipped with a warning.
pub fn ingest_csv(paths: &CsvPaths, schema: &CsvSchema) -> Result<Cohort> {
    let d = schema.feature_names.len();
    if d == 0 {
        return Err(Error::config("schema declares no features"));
    }
    let labels = read_labels(&paths.labels)?;
    let mut obs = read_observations(&paths.observations, schema)?;
    let severity = match &paths.severity {
        Some(p) => Some(read_severity(p)?),
        None => None,
    };
    let known: std::collections::HashSet<&str> = labels.iter().map(|l| l.id.as_str()).collect();
    if let Some(id) = obs.keys().find(|id| !known.contains(id.as_str())) {
        return Err(Error::validation(format!("patient '{id}' has observations but no label")));
    }

    let mut records = Vec::with_capacity(labels.len());
    for row in labels {
        let Some(mut entries) = obs.remove(&row.id) else {
            log::warn!("patient '{}' has no observations; skipped", row.id);
            continue;
        };
        entries.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let file_last = entries.last().map_or(0.0, |e| e.0);
        let mut times: Vec<f64> = Vec::new();
        let mut values: Vec<Vec<Option<f64>>> = Vec::new();
        for &(t, k, x) in &entries {
            if t > schema.window_h {
                continue;
            }
            if times.last() != Some(&t) {
                times.push(t);
                values.push(vec![None; d]);
            }
            let slot = &mut values.last_mut().expect("row pushed above")[k];
            if slot.is_some() {
                return Err(Error::validation(format!(
                    "patient '{}': feature '{}' recorded twice at time {t}",
                    row.id, schema.feature_names[k]
                )));
            }
            *slot = Some(x);
        }
        let (times, values): (Vec<f64>, Vec<_>) = times
            .into_iter()
            .zip(values)
            .filter(|(_, v)| v.iter().filter(|x| x.is_some()).count() > schema.min_observed)
            .unzip();
        if times.is_empty() {
            log::warn!("patient '{}' has no rows above the observation threshold; skipped", row.id);
            continue;
        }
        let t0 = times[0];
        let last = *times.last().expect("non-empty");
        let times: Vec<f64> = times.iter().map(|t| t - t0).collect();
        let seq = ObservationSeq::new(times, values)
            .map_err(|e| Error::validation(format!("patient '{}': {e}", row.id)))?;
        let label = SurvivalLabel::new(row.label.time + (file_last - last), row.label.event)?;

        let hours = (seq.last_time().ceil() as usize) + 1;
        let shift = t0.round() as usize;
        let scores = match &severity {
            Some((names, table)) => {
                let rows = table.get(&row.id).ok_or_else(|| {
                    Error::validation(format!("patient '{}' has no severity rows", row.id))
                })?;
                hourly(rows, shift, hours, names.len())
            }
            None => vec![Vec::new(); hours],
        };
        let sev = SeveritySeries::from_scores(scores, schema.trend_delta)?;
        records.push(PatientRecord {
            id: row.id,
            obs: seq,
            label,
            severity: sev,
            true_risk: row.true_risk,
            family: row.family,
        });
    }
    let severity_names = severity.map(|(n, _)| n).unwrap_or_default();
    Ok(Cohort::new(records, schema.feature_names.clone(), severity_names))
}

/// Hourly table over `shift..shift + hours`, forward-filled; hours before
/// the first record take the first record's values.
fn hourly(rows: &[(usize, Vec<f64>)], shift: usize, hours: usize, width: usize) -> Vec<Vec<f64>> {
    let mut sorted: Vec<&(usize, Vec<f64>)> = rows.iter().collect();
    sorted.sort_by_key(|r| r.0);
    let mut out = Vec::with_capacity(hours);
    let mut cursor = 0;
    let mut current = sorted.first().map_or(vec![0.0; width], |r| r.1.clone());
    for h in shift..shift + hours {
        while cursor < sorted.len() && sorted[cursor].0 <= h {
            current = sorted[cursor].1.clone();
            cursor += 1;
        }
        out.push(current.clone());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticConfig};
    use std::io::Write;

    fn schema_for(c: &Cohort, min_observed: usize) -> CsvSchema {
        CsvSchema {
            min_observed,
            ..CsvSchema::new(c.feature_names.clone())
        }
    }

    #[test]
    fn round_trip_is_identity() {
        let c = generate_synthetic(&SyntheticConfig {
            n_patients: 60,
            seed: 12,
            ..SyntheticConfig::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let paths = export_csv(&c, dir.path()).unwrap();
        let back = ingest_csv(&paths, &schema_for(&c, 0)).unwrap();
        assert_eq!(back, c);
    }

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        let mut f = std::fs::File::create(&p).unwrap();
        f.write_all(text.as_bytes()).unwrap();
        p
    }

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|k| format!("f{k}")).collect()
    }

    #[test]
    fn sparse_rows_are_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let mut obs = String::from("patient_id,time_h,feature,value\n");
        for k in 0..25 {
            obs += &format!("a,0,f{k},1.0\n");
        }
        for k in 0..3 {
            obs += &format!("a,2,f{k},2.0\n");
        }
        for k in 0..21 {
            obs += &format!("a,5,f{k},3.0\n");
        }
        let paths = CsvPaths {
            observations: write(dir.path(), "o.csv", &obs),
            labels: write(dir.path(), "l.csv", "patient_id,time_to_event_h,event\na,10,1\n"),
            severity: None,
        };
        let c = ingest_csv(&paths, &CsvSchema::new(names(25))).unwrap();
        assert_eq!(c.records[0].obs.times(), &[0.0, 5.0]);
        assert_eq!(c.records[0].label.time, 10.0);
    }

    #[test]
    fn dropped_tail_extends_time_to_event() {
        let dir = tempfile::tempdir().unwrap();
        let obs = "patient_id,time_h,feature,value\na,1,f0,1\na,1,f1,1\na,4,f0,2\na,40,f0,1\na,40,f1,1\n";
        let paths = CsvPaths {
            observations: write(dir.path(), "o.csv", obs),
            labels: write(dir.path(), "l.csv", "patient_id,time_to_event_h,event\na,10,0\n"),
            severity: Some(write(dir.path(), "s.csv", "patient_id,hour,sofa\na,0,1\na,3,2\n")),
        };
        let schema = CsvSchema {
            min_observed: 1,
            ..CsvSchema::new(names(2))
        };
        let c = ingest_csv(&paths, &schema).unwrap();
        let r = &c.records[0];
        // hour 40 is outside the window, hour 4 has one feature
        assert_eq!(r.obs.times(), &[0.0]);
        assert_eq!(r.label.time, 10.0 + 39.0);
        assert_eq!(r.severity.s, vec![vec![1.0]]);
    }

    #[test]
    fn unknown_feature_and_negative_time() {
        let dir = tempfile::tempdir().unwrap();
        let labels = write(dir.path(), "l.csv", "patient_id,time_to_event_h,event\na,1,0\n");
        let bad_feat = CsvPaths {
            observations: write(dir.path(), "o1.csv", "patient_id,time_h,feature,value\na,0,zz,1\n"),
            labels: labels.clone(),
            severity: None,
        };
        assert!(matches!(ingest_csv(&bad_feat, &CsvSchema::new(names(2))), Err(Error::Schema(_))));
        let bad_time = CsvPaths {
            observations: write(dir.path(), "o2.csv", "patient_id,time_h,feature,value\na,-1,f0,1\n"),
            labels,
            severity: None,
        };
        assert!(matches!(ingest_csv(&bad_time, &CsvSchema::new(names(2))), Err(Error::Validation(_))));
    }

    #[test]
    fn counts_match_line_count_oracle() {
        let c = generate_synthetic(&SyntheticConfig {
            n_patients: 80,
            seed: 2,
            ..SyntheticConfig::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let paths = export_csv(&c, dir.path()).unwrap();
        let back = ingest_csv(&paths, &schema_for(&c, 0)).unwrap();

        // independent count: distinct (patient, time) pairs per patient
        let text = std::fs::read_to_string(&paths.observations).unwrap();
        let mut rows: HashMap<String, std::collections::BTreeSet<String>> = HashMap::new();
        for line in text.lines().skip(1) {
            let mut parts = line.split(',');
            let id = parts.next().unwrap().to_string();
            let t = parts.next().unwrap().to_string();
            rows.entry(id).or_default().insert(t);
        }
        assert_eq!(back.len(), rows.len());
        for r in &back.records {
            assert_eq!(r.obs.len(), rows[&r.id].len(), "patient {}", r.id);
        }
    }
}
