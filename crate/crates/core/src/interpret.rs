//! Vector-field interpretation and latent-trajectory clustering.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{kaplan_meier, KmCurve};
use crate::ncde::EncoderParams;
use crate::survhead::SurvivalLabel;

/// Mean of `f_θ(z)` over sampled latent states, row-major `d_z × (d+1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AvgField {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    pub sample_count: usize,
}

impl AvgField {
    pub fn column(&self, k: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.data[i * self.cols + k]).collect()
    }

    /// Number of feature channels (the last column is time).
    pub fn n_features(&self) -> usize {
        self.cols - 1
    }
}

/// Averages the field over the given latent states.
pub fn field_mean(encoder: &EncoderParams, states: &[&[f64]]) -> Result<AvgField> {
    if states.is_empty() {
        return Err(Error::usage("average field needs at least one latent state"));
    }
    let (rows, cols) = (encoder.latent_dim(), encoder.path_dim());
    let mut acc = vec![0.0; rows * cols];
    for z in states {
        let f = encoder.vector_field(z)?;
        for (a, v) in acc.iter_mut().zip(&f) {
            *a += v;
        }
    }
    let n = states.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(AvgField {
        rows,
        cols,
        data: acc,
        sample_count: states.len(),
    })
}

/// Samples `n_samples` (patient, grid-time) pairs uniformly with replacement
/// from hourly latent trajectories and averages the field there.
pub fn average_field(encoder: &EncoderParams, trajectories: &[Vec<Vec<f64>>], n_samples: usize, seed: u64) -> Result<AvgField> {
    if trajectories.is_empty() || trajectories.iter().all(Vec::is_empty) {
        return Err(Error::usage("average field of an empty cohort"));
    }
    if n_samples == 0 {
        return Err(Error::config("average field needs n_samples >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks: Vec<&[f64]> = Vec::with_capacity(n_samples);
    while picks.len() < n_samples {
        let p = &trajectories[rng.gen_range(0..trajectories.len())];
        if p.is_empty() {
            continue;
        }
        picks.push(&p[rng.gen_range(0..p.len())]);
    }
    field_mean(encoder, &picks)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureScore {
    pub feature: usize,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Importance {
    /// Feature channels by descending column norm, ties by index.
    pub ranking: Vec<FeatureScore>,
    /// Column norm of the time channel, reported apart from the ranking.
    pub time_score: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn feature_importance(field: &AvgField) -> Importance {
    let d = field.n_features();
    let mut ranking: Vec<FeatureScore> = (0..d)
        .map(|k| FeatureScore {
            feature: k,
            score: norm(&field.column(k)),
        })
        .collect();
    ranking.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.feature.cmp(&b.feature)));
    Importance {
        ranking,
        time_score: norm(&field.column(d)),
    }
}

/// Cosine similarity between feature columns; zero-norm columns relate 0
/// to everything, themselves included.
pub fn feature_relevance(field: &AvgField) -> Vec<Vec<f64>> {
    let d = field.n_features();
    let cols: Vec<Vec<f64>> = (0..d).map(|k| field.column(k)).collect();
    let norms: Vec<f64> = cols.iter().map(|c| norm(c)).collect();
    let mut r = vec![vec![0.0; d]; d];
    for a in 0..d {
        for b in a..d {
            let v = if norms[a] == 0.0 || norms[b] == 0.0 {
                0.0
            } else if a == b {
                1.0
            } else {
                let dot: f64 = cols[a].iter().zip(&cols[b]).map(|(x, y)| x * y).sum();
                (dot / (norms[a] * norms[b])).clamp(-1.0, 1.0)
            };
            r[a][b] = v;
            r[b][a] = v;
        }
    }
    r
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn dtw_table(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<Vec<f64>> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::usage("DTW of an empty sequence"));
    }
    let (n, m) = (a.len(), b.len());
    let mut d = vec![f64::INFINITY; n * m];
    for i in 0..n {
        for j in 0..m {
            let prev = if i == 0 && j == 0 {
                0.0
            } else {
                let up = if i > 0 { d[(i - 1) * m + j] } else { f64::INFINITY };
                let left = if j > 0 { d[i * m + j - 1] } else { f64::INFINITY };
                let diag = if i > 0 && j > 0 { d[(i - 1) * m + j - 1] } else { f64::INFINITY };
                up.min(left).min(diag)
            };
            d[i * m + j] = l2(&a[i], &b[j]) + prev;
        }
    }
    Ok(d)
}

/// Accumulated L2 cost of the best monotone warping path.
pub fn dtw_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let d = dtw_table(a, b)?;
    Ok(d[d.len() - 1])
}

/// Optimal warping path as `(i, j)` pairs from `(0, 0)` to `(n-1, m-1)`.
pub fn dtw_path(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<(f64, Vec<(usize, usize)>)> {
    let d = dtw_table(a, b)?;
    let m = b.len();
    let (mut i, mut j) = (a.len() - 1, m - 1);
    let mut path = vec![(i, j)];
    while i > 0 || j > 0 {
        let mut best = (f64::INFINITY, (i, j));
        if i > 0 && j > 0 {
            best = (d[(i - 1) * m + j - 1], (i - 1, j - 1));
        }
        if i > 0 && d[(i - 1) * m + j] < best.0 {
            best = (d[(i - 1) * m + j], (i - 1, j));
        }
        if j > 0 && d[i * m + j - 1] < best.0 {
            best = (d[i * m + j - 1], (i, j - 1));
        }
        (i, j) = best.1;
        path.push((i, j));
    }
    path.reverse();
    Ok((d[d.len() - 1], path))
}

/// Total DTW cost of `seqs` to `centroid`.
pub fn dba_cost(seqs: &[&[Vec<f64>]], centroid: &[Vec<f64>]) -> Result<f64> {
    seqs.iter().map(|s| dtw_distance(centroid, s)).sum()
}

/// The member minimizing total DTW cost to the others.
pub fn medoid(seqs: &[&[Vec<f64>]]) -> Result<usize> {
    let mut best = (f64::INFINITY, 0);
    for (i, s) in seqs.iter().enumerate() {
        let c = dba_cost(seqs, s)?;
        if c < best.0 {
            best = (c, i);
        }
    }
    Ok(best.1)
}

/// DTW barycenter averaging from `init`. Each iteration aligns every
/// sequence to the current centroid and replaces each centroid state by the
/// mean of the states aligned to it; an iteration that would raise the
/// total cost is rejected and the loop stops.
pub fn dba_centroid(seqs: &[&[Vec<f64>]], init: &[Vec<f64>], iters: usize) -> Result<Vec<Vec<f64>>> {
    if seqs.is_empty() {
        return Err(Error::usage("DBA needs at least one sequence"));
    }
    let mut centroid = init.to_vec();
    let mut cost = dba_cost(seqs, &centroid)?;
    let dim = centroid[0].len();
    for _ in 0..iters {
        let mut sums = vec![vec![0.0; dim]; centroid.len()];
        let mut counts = vec![0usize; centroid.len()];
        for s in seqs {
            let (_, path) = dtw_path(&centroid, s)?;
            for (i, j) in path {
                for (acc, v) in sums[i].iter_mut().zip(&s[j]) {
                    *acc += v;
                }
                counts[i] += 1;
            }
        }
        let next: Vec<Vec<f64>> = sums
            .into_iter()
            .zip(&counts)
            .map(|(s, &c)| s.into_iter().map(|v| v / c as f64).collect())
            .collect();
        let next_cost = dba_cost(seqs, &next)?;
        if next_cost > cost {
            break;
        }
        let done = next == centroid;
        centroid = next;
        cost = next_cost;
        if done {
            break;
        }
    }
    Ok(centroid)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<Vec<f64>>>,
    /// Sum of member DTW costs to their centroid.
    pub cost: f64,
    /// Per cluster, per hour: mean severity over members observed that hour.
    pub severity_profiles: Vec<Vec<Vec<f64>>>,
    pub km: Vec<KmCurve>,
    pub names: Vec<String>,
}

impl ClusterResult {
    pub fn n_clusters(&self) -> usize {
        self.centroids.len()
    }

    pub fn members(&self, c: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i] == c).collect()
    }
}

fn pairwise(seqs: &[Vec<Vec<f64>>]) -> Result<Vec<Vec<f64>>> {
    let n = seqs.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = dtw_distance(&seqs[i], &seqs[j])?;
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    Ok(d)
}

/// Greedy BUILD initialisation followed by Voronoi-iteration k-medoids.
fn k_medoids(dist: &[Vec<f64>], k: usize) -> Vec<usize> {
    let n = dist.len();
    let total = |i: usize| dist[i].iter().sum::<f64>();
    let first = (0..n).min_by(|&a, &b| total(a).total_cmp(&total(b))).expect("n > 0");
    let mut medoids = vec![first];
    let mut nearest: Vec<f64> = dist[first].clone();
    while medoids.len() < k {
        let gain = |c: usize| -> f64 { (0..n).map(|j| (nearest[j] - dist[c][j]).max(0.0)).sum() };
        let pick = (0..n)
            .filter(|c| !medoids.contains(c))
            .max_by(|&a, &b| gain(a).total_cmp(&gain(b)).then(b.cmp(&a)))
            .expect("k <= n");
        medoids.push(pick);
        for j in 0..n {
            nearest[j] = nearest[j].min(dist[pick][j]);
        }
    }
    for _ in 0..100 {
        let assign: Vec<usize> = (0..n)
            .map(|j| (0..k).min_by(|&a, &b| dist[medoids[a]][j].total_cmp(&dist[medoids[b]][j])).expect("k > 0"))
            .collect();
        let mut changed = false;
        for (c, m) in medoids.iter_mut().enumerate() {
            let members: Vec<usize> = (0..n).filter(|&j| assign[j] == c).collect();
            let best = members
                .iter()
                .copied()
                .min_by(|&a, &b| {
                    let ca: f64 = members.iter().map(|&j| dist[a][j]).sum();
                    let cb: f64 = members.iter().map(|&j| dist[b][j]).sum();
                    ca.total_cmp(&cb).then(a.cmp(&b))
                })
                .unwrap_or(*m);
            if best != *m {
                *m = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    medoids
}

fn nearest_centroid(seq: &[Vec<f64>], centroids: &[Vec<Vec<f64>>]) -> Result<(usize, f64)> {
    let mut best = (0, f64::INFINITY);
    for (c, cen) in centroids.iter().enumerate() {
        let d = dtw_distance(seq, cen)?;
        if d < best.1 {
            best = (c, d);
        }
    }
    Ok(best)
}

/// Clusters variable-length hourly latent trajectories into `k` groups:
/// k-medoids under DTW, then DBA centroids (initialised at the medoids) and
/// nearest-centroid reassignment until assignments settle.
pub fn cluster_trajectories(trajectories: &[Vec<Vec<f64>>], k: usize, dba_iters: usize) -> Result<ClusterResult> {
    let n = trajectories.len();
    if k < 2 || k > n {
        return Err(Error::usage(format!("cannot form {k} clusters from {n} trajectories")));
    }
    if trajectories.iter().any(Vec::is_empty) {
        return Err(Error::usage("DTW of an empty sequence"));
    }
    let dist = pairwise(trajectories)?;
    let medoids = k_medoids(&dist, k);
    let mut centroids: Vec<Vec<Vec<f64>>> = medoids.iter().map(|&m| trajectories[m].clone()).collect();
    let mut assignments: Vec<usize> = (0..n)
        .map(|j| (0..k).min_by(|&a, &b| dist[medoids[a]][j].total_cmp(&dist[medoids[b]][j])).expect("k > 0"))
        .collect();
    for _ in 0..5 {
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let members: Vec<&[Vec<f64>]> = (0..n)
                .filter(|&j| assignments[j] == c)
                .map(|j| trajectories[j].as_slice())
                .collect();
            if !members.is_empty() {
                *centroid = dba_centroid(&members, centroid, dba_iters)?;
            }
        }
        let next = trajectories
            .iter()
            .map(|t| nearest_centroid(t, &centroids).map(|x| x.0))
            .collect::<Result<Vec<_>>>()?;
        if next == assignments {
            break;
        }
        assignments = next;
    }
    let cost = trajectories
        .iter()
        .zip(&assignments)
        .map(|(t, &c)| dtw_distance(t, &centroids[c]))
        .sum::<Result<f64>>()?;
    Ok(ClusterResult {
        assignments,
        centroids,
        cost,
        severity_profiles: Vec::new(),
        km: Vec::new(),
        names: (0..k).map(|c| format!("cluster{c}")).collect(),
    })
}

/// Fills per-cluster severity profiles, KM curves and descriptive names.
/// With four clusters, the two with the highest initial overall severity
/// are "severe" and the rest "mild"; within each pair the steeper early
/// decline is the improving one (ISQI/ISK, IMSI/IMK).
pub fn attach_outcomes(result: &mut ClusterResult, severity: &[&[Vec<f64>]], labels: &[SurvivalLabel]) {
    let k = result.n_clusters();
    result.severity_profiles = (0..k)
        .map(|c| {
            let members = result.members(c);
            let hours = members.iter().map(|&i| severity[i].len()).max().unwrap_or(0);
            (0..hours)
                .filter_map(|h| {
                    let rows: Vec<&Vec<f64>> = members.iter().filter_map(|&i| severity[i].get(h)).collect();
                    let width = rows.first()?.len();
                    Some(
                        (0..width)
                            .map(|q| rows.iter().map(|r| r[q]).sum::<f64>() / rows.len() as f64)
                            .collect(),
                    )
                })
                .collect()
        })
        .collect();
    result.km = (0..k)
        .map(|c| {
            let l: Vec<SurvivalLabel> = result.members(c).iter().map(|&i| labels[i]).collect();
            kaplan_meier(&l)
        })
        .collect();
    if k == 4 {
        let initial = |c: usize| result.severity_profiles[c].first().map_or(0.0, |r| r.first().copied().unwrap_or(0.0));
        let slope = |c: usize| {
            let p = &result.severity_profiles[c];
            let h = p.len().min(13).saturating_sub(1);
            if h == 0 || p[0].is_empty() {
                0.0
            } else {
                (p[h][0] - p[0][0]) / h as f64
            }
        };
        let mut by_initial: Vec<usize> = (0..4).collect();
        by_initial.sort_by(|&a, &b| initial(b).total_cmp(&initial(a)));
        let mut names = vec![String::new(); 4];
        for (pair, (improving, kept)) in [(0, ("ISQI", "ISK")), (2, ("IMSI", "IMK"))] {
            let (a, b) = (by_initial[pair], by_initial[pair + 1]);
            let (imp, flat) = if slope(a) <= slope(b) { (a, b) } else { (b, a) };
            names[imp] = improving.to_string();
            names[flat] = kept.to_string();
        }
        result.names = names;
    }
}

/// Adjusted Rand index between two labelings.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0u64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let c2 = |x: u64| (x * x.saturating_sub(1)) as f64 / 2.0;
    let sum_cells: f64 = table.iter().flatten().map(|&x| c2(x)).sum();
    let sum_rows: f64 = table.iter().map(|r| c2(r.iter().sum())).sum();
    let sum_cols: f64 = (0..kb).map(|j| c2(table.iter().map(|r| r[j]).sum())).sum();
    let total = c2(n as u64);
    let expected = sum_rows * sum_cols / total;
    let max = 0.5 * (sum_rows + sum_cols);
    if max == expected {
        return 1.0;
    }
    (sum_cells - expected) / (max - expected)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhenotypeCell {
    pub probe: Vec<f64>,
    pub dominant: usize,
    pub intensity: f64,
    pub means: Vec<f64>,
}

/// For each probe point, the mean component scores of its `k` nearest
/// anchor states (L2, ties by index) and the dominant component.
pub fn phenotype_map(anchors: &[Vec<f64>], components: &[Vec<f64>], probes: &[Vec<f64>], k: usize) -> Result<Vec<PhenotypeCell>> {
    if anchors.is_empty() || anchors.len() != components.len() {
        return Err(Error::usage("phenotype map needs matching, non-empty anchors and components"));
    }
    let k = if k > anchors.len() {
        log::warn!("only {} anchors for k = {k}; using all", anchors.len());
        anchors.len()
    } else {
        k.max(1)
    };
    let width = components[0].len();
    probes
        .iter()
        .map(|p| {
            let mut order: Vec<(f64, usize)> = anchors.iter().enumerate().map(|(i, a)| (l2(a, p), i)).collect();
            order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut means = vec![0.0; width];
            for &(_, i) in &order[..k] {
                for (m, v) in means.iter_mut().zip(&components[i]) {
                    *m += v / k as f64;
                }
            }
            let dominant = (0..width)
                .max_by(|&a, &b| means[a].total_cmp(&means[b]).then(b.cmp(&a)))
                .unwrap_or(0);
            Ok(PhenotypeCell {
                probe: p.clone(),
                dominant,
                intensity: means.get(dominant).copied().unwrap_or(0.0),
                means,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Ffn;
    use crate::tensor::{Activation, Tensor};
    use proptest::prelude::{prop_assert, proptest};

    fn rand_seq(rng: &mut ChaCha8Rng, len: usize, dim: usize) -> Vec<Vec<f64>> {
        (0..len).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
    }

    /// Minimum over every monotone warping path, by recursion.
    fn brute_dtw(a: &[Vec<f64>], b: &[Vec<f64>], i: usize, j: usize) -> f64 {
        let c = l2(&a[i], &b[j]);
        if i == a.len() - 1 && j == b.len() - 1 {
            return c;
        }
        let mut best = f64::INFINITY;
        if i + 1 < a.len() {
            best = best.min(brute_dtw(a, b, i + 1, j));
        }
        if j + 1 < b.len() {
            best = best.min(brute_dtw(a, b, i, j + 1));
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            best = best.min(brute_dtw(a, b, i + 1, j + 1));
        }
        c + best
    }

    fn constant_encoder(field: &[f64], dz: usize, q: usize) -> EncoderParams {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = Ffn::init(&[q, 3, dz], Activation::Tanh, Activation::Identity, 1.0, &mut rng);
        let mut f = Ffn::init(&[dz, 3, dz * q], Activation::Tanh, Activation::Identity, 1.0, &mut rng);
        let last = f.layers.last_mut().unwrap();
        last.weight = Tensor::zeros(last.weight.shape());
        last.bias = Tensor::vector(field.to_vec()).unwrap();
        EncoderParams::from_networks(g, f).unwrap()
    }

    #[test]
    fn dtw_examples() {
        let a = vec![vec![0.0]];
        let b = vec![vec![1.0]];
        assert_eq!(dtw_distance(&a, &b).unwrap(), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = rand_seq(&mut rng, 5, 3);
        assert_eq!(dtw_distance(&s, &s).unwrap(), 0.0);
        assert!(dtw_distance(&s, &[]).is_err());
    }

    #[test]
    fn dtw_matches_exhaustive_paths() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let (n, m) = (rng.gen_range(1..=6), rng.gen_range(1..=6));
            let a = rand_seq(&mut rng, n, 2);
            let b = rand_seq(&mut rng, m, 2);
            let d = dtw_distance(&a, &b).unwrap();
            assert!((d - brute_dtw(&a, &b, 0, 0)).abs() < 1e-12);
            let (pd, path) = dtw_path(&a, &b).unwrap();
            let along: f64 = path.iter().map(|&(i, j)| l2(&a[i], &b[j])).sum();
            assert!((pd - along).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn dtw_is_a_symmetric_bounded_cost(seed in 0u64..500, n in 1usize..8, m in 1usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = rand_seq(&mut rng, n, 2);
            let b = rand_seq(&mut rng, m, 2);
            let ab = dtw_distance(&a, &b).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - dtw_distance(&b, &a).unwrap()).abs() < 1e-12);
            let c = rand_seq(&mut rng, n, 2);
            let diag: f64 = a.iter().zip(&c).map(|(x, y)| l2(x, y)).sum();
            prop_assert!(dtw_distance(&a, &c).unwrap() <= diag + 1e-12);
        }
    }

    #[test]
    fn dba_fixed_points_and_improvement() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = rand_seq(&mut rng, 4, 2);
        assert_eq!(dba_centroid(&[&s, &s, &s], &s, 1).unwrap(), s);
        assert_eq!(dba_centroid(&[&s], &s, 5).unwrap(), s);
        for _ in 0..20 {
            let seqs: Vec<Vec<Vec<f64>>> = (0..3)
                .map(|_| {
                    let len = rng.gen_range(2..6);
                    rand_seq(&mut rng, len, 2)
                })
                .collect();
            let refs: Vec<&[Vec<f64>]> = seqs.iter().map(|s| s.as_slice()).collect();
            let m = medoid(&refs).unwrap();
            let base = dba_cost(&refs, &seqs[m]).unwrap();
            let mut prev = base;
            for it in 1..6 {
                let c = dba_centroid(&refs, &seqs[m], it).unwrap();
                let cost = dba_cost(&refs, &c).unwrap();
                assert!(cost <= prev + 1e-12);
                prev = cost;
            }
            assert!(prev <= base + 1e-12);
        }
    }

    fn family(rng: &mut ChaCha8Rng, up: bool) -> Vec<Vec<f64>> {
        let len = rng.gen_range(5..12);
        (0..len)
            .map(|t| {
                let x = if up { t as f64 * 0.5 } else { 3.0 - t as f64 * 0.5 };
                vec![x + rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1)]
            })
            .collect()
    }

    #[test]
    fn clustering_recovers_two_families() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let truth: Vec<usize> = (0..30).map(|i| i % 2).collect();
        let trajs: Vec<Vec<Vec<f64>>> = truth.iter().map(|&f| family(&mut rng, f == 1)).collect();
        let r = cluster_trajectories(&trajs, 2, 5).unwrap();
        assert_eq!(adjusted_rand_index(&r.assignments, &truth), 1.0);
        assert_eq!(r, cluster_trajectories(&trajs, 2, 5).unwrap());

        // permuting the input permutes the assignments up to relabeling
        let perm: Vec<usize> = (0..30).rev().collect();
        let shuffled: Vec<Vec<Vec<f64>>> = perm.iter().map(|&i| trajs[i].clone()).collect();
        let s = cluster_trajectories(&shuffled, 2, 5).unwrap();
        let back: Vec<usize> = (0..30).map(|i| s.assignments[29 - i]).collect();
        assert_eq!(adjusted_rand_index(&back, &r.assignments), 1.0);
    }

    #[test]
    fn every_patient_its_own_cluster() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let trajs: Vec<Vec<Vec<f64>>> = (0..5).map(|_| rand_seq(&mut rng, 4, 2)).collect();
        let r = cluster_trajectories(&trajs, 5, 3).unwrap();
        assert!(r.cost.abs() < 1e-12);
        let mut seen = r.assignments.clone();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 5);
        assert!(cluster_trajectories(&trajs, 6, 3).is_err());
        assert!(cluster_trajectories(&trajs, 1, 3).is_err());
    }

    #[test]
    fn ari_examples() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]), 1.0);
        let v = adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]);
        assert!((v - (-0.5)).abs() < 1e-12);
    }

    #[test]
    fn importance_and_relevance() {
        // d_z = 2, two features + time
        let field = AvgField {
            rows: 2,
            cols: 3,
            data: vec![3.0, 0.0, 1.0, 4.0, 0.0, 1.0],
            sample_count: 1,
        };
        let imp = feature_importance(&field);
        assert_eq!(imp.ranking[0].feature, 0);
        assert_eq!(imp.ranking[0].score, 5.0);
        assert_eq!(imp.ranking[1].score, 0.0);
        assert!((imp.time_score - 2f64.sqrt()).abs() < 1e-15);
        let r = feature_relevance(&field);
        assert_eq!(r[0][0], 1.0);
        assert_eq!(r[1][1], 0.0);
        assert_eq!(r[0][1], 0.0);

        let anti = AvgField {
            rows: 2,
            cols: 4,
            data: vec![1.0, -1.0, 1.0, 0.0, 2.0, -2.0, 2.0, 0.0],
            sample_count: 1,
        };
        let r = feature_relevance(&anti);
        assert!((r[0][1] + 1.0).abs() < 1e-15);
        assert!((r[0][2] - 1.0).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let data: Vec<f64> = (0..15).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f = AvgField { rows: 3, cols: 5, data: data.clone(), sample_count: 1 };
        let imp = feature_importance(&f);
        let r = feature_relevance(&f);
        for a in 0..4 {
            let col: Vec<f64> = (0..3).map(|i| data[i * 5 + a]).collect();
            let n: f64 = col.iter().map(|x| x * x).sum::<f64>().sqrt();
            let s = imp.ranking.iter().find(|x| x.feature == a).unwrap().score;
            assert!((s - n).abs() < 1e-15);
            for b in 0..4 {
                let colb: Vec<f64> = (0..3).map(|i| data[i * 5 + b]).collect();
                let nb: f64 = colb.iter().map(|x| x * x).sum::<f64>().sqrt();
                let dot: f64 = col.iter().zip(&colb).map(|(x, y)| x * y).sum();
                assert!((r[a][b] - dot / (n * nb)).abs() < 1e-12);
                assert_eq!(r[a][b], r[b][a]);
            }
        }
        assert!(imp.ranking.windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn average_of_constant_field() {
        let field: Vec<f64> = (0..6).map(|i| i as f64 * 0.1 - 0.2).collect();
        let enc = constant_encoder(&field, 2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let trajs: Vec<Vec<Vec<f64>>> = (0..4).map(|_| rand_seq(&mut rng, 3, 2)).collect();
        let avg = average_field(&enc, &trajs, 50, 1).unwrap();
        for (a, b) in avg.data.iter().zip(&field) {
            assert!((a - b).abs() < 1e-15);
        }
        let z = [0.3, -0.2];
        let once = field_mean(&enc, &[&z]).unwrap();
        let twice = field_mean(&enc, &[&z, &z]).unwrap();
        assert_eq!(once.data, twice.data);
        assert!(average_field(&enc, &[], 10, 1).is_err());
    }

    #[test]
    fn average_matches_explicit_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let enc = EncoderParams::init(2, 3, 5, &mut rng);
        let trajs: Vec<Vec<Vec<f64>>> = (0..6).map(|i| rand_seq(&mut rng, 2 + i, 3)).collect();
        let avg = average_field(&enc, &trajs, 40, 9).unwrap();
        let mut picker = ChaCha8Rng::seed_from_u64(9);
        let mut acc = vec![0.0; 9];
        for _ in 0..40 {
            let p = &trajs[picker.gen_range(0..trajs.len())];
            let z = &p[picker.gen_range(0..p.len())];
            for (a, v) in acc.iter_mut().zip(enc.vector_field(z).unwrap()) {
                *a += v;
            }
        }
        for (a, b) in avg.data.iter().zip(&acc) {
            assert!((a - b / 40.0).abs() < 1e-12);
        }
    }

    #[test]
    fn phenotype_map_cases() {
        let anchors = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![5.0, 5.0]];
        let comps = vec![vec![1.0, 3.0], vec![2.0, 2.0], vec![4.0, 0.0]];
        let cells = phenotype_map(&anchors, &comps, &[vec![0.9, 0.1]], 1).unwrap();
        assert_eq!(cells[0].means, vec![2.0, 2.0]);
        let cells = phenotype_map(&anchors, &comps, &[vec![4.0, 4.0]], 10).unwrap();
        assert_eq!(cells[0].dominant, 0);
        let uniform = vec![vec![0.0, 3.0]; 3];
        for c in phenotype_map(&anchors, &uniform, &[vec![0.0, 0.0], vec![9.0, 9.0]], 2).unwrap() {
            assert_eq!(c.dominant, 1);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let a: Vec<Vec<f64>> = (0..40).map(|_| rand_seq(&mut rng, 1, 2).remove(0)).collect();
        let c: Vec<Vec<f64>> = (0..40).map(|_| (0..3).map(|_| rng.gen_range(0.0..4.0)).collect()).collect();
        let probes: Vec<Vec<f64>> = (0..10).map(|_| rand_seq(&mut rng, 1, 2).remove(0)).collect();
        let cells = phenotype_map(&a, &c, &probes, 5).unwrap();
        for (p, cell) in probes.iter().zip(&cells) {
            // exhaustive scan: anchors strictly closer than the 5th nearest
            let mut d: Vec<(f64, usize)> = a.iter().enumerate().map(|(i, x)| (l2(x, p), i)).collect();
            d.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
            for q in 0..3 {
                let m: f64 = d[..5].iter().map(|&(_, i)| c[i][q]).sum::<f64>() / 5.0;
                assert!((cell.means[q] - m).abs() < 1e-12);
            }
        }
    }
}
