//! Per-user context-factor importance and k-means clustering over it.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::context::ContextSchema;
use crate::error::{Error, Result};
use crate::ids::IdTable;
use crate::model::Model;

pub const DEFAULT_K: usize = 4;

/// One row of factor importances per user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceMatrix {
    pub users: Vec<String>,
    pub factors: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl ImportanceMatrix {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// `user,<factor>...,cluster`
    pub fn to_csv(&self, assignments: &[usize]) -> Result<String> {
        if assignments.len() != self.rows.len() {
            return Err(Error::invalid(format!(
                "{} assignments for {} users",
                assignments.len(),
                self.rows.len()
            )));
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        let header = std::iter::once("user".to_owned())
            .chain(self.factors.iter().cloned())
            .chain(std::iter::once("cluster".to_owned()));
        w.write_record(header).map_err(csv_err)?;
        for ((user, row), c) in self.users.iter().zip(&self.rows).zip(assignments) {
            let rec = std::iter::once(user.clone())
                .chain(row.iter().map(|v| v.to_string()))
                .chain(std::iter::once(c.to_string()));
            w.write_record(rec).map_err(csv_err)?;
        }
        finish_csv(w)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::invalid(format!("csv: {e}"))
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::invalid(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::invalid(e.to_string()))
}

pub fn export_importance(model: &Model, users: &IdTable, schema: &ContextSchema) -> Result<ImportanceMatrix> {
    if !model.config.variant.uses_context() {
        return Err(Error::invalid(format!(
            "variant {} has no context parameters",
            model.config.variant
        )));
    }
    let rows = (0..users.len())
        .map(|u| model.context_factor_importance(u).map(|(_, pi)| pi))
        .collect::<Result<Vec<_>>>()?;
    Ok(ImportanceMatrix {
        users: users.names().to_vec(),
        factors: schema.factors().names().to_vec(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeans {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    /// Inertia after each Lloyd iteration.
    pub history: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut dist: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut chosen = points.len() - 1;
            for (i, d) in dist.iter().enumerate() {
                if target < *d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            // all remaining points coincide with a centroid
            rng.random_range(0..points.len())
        };
        centroids.push(points[next].clone());
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

/// Lloyd's algorithm with k-means++ seeding. An empty cluster takes over
/// the point farthest from its current centroid.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, max_iter: usize) -> Result<KMeans> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if k > points.len() {
        return Err(Error::invalid(format!("k = {k} exceeds the {} points", points.len())));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim || p.iter().any(|v| !v.is_finite())) {
        return Err(Error::invalid("points must be finite and of equal length"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus(points, k, &mut rng);
    let mut assignments: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
    let mut history = Vec::new();
    let mut iterations = 0;
    for _ in 0..max_iter.max(1) {
        iterations += 1;
        // update
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignments) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let (far, _) = points
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| counts[assignments[*i]] > 1)
                    .map(|(i, p)| (i, sq_dist(p, &centroids[assignments[i]])))
                    .fold((usize::MAX, -1.0), |b, x| if x.1 > b.1 { x } else { b });
                if far != usize::MAX {
                    counts[assignments[far]] -= 1;
                    assignments[far] = c;
                    counts[c] = 1;
                    centroids[c] = points[far].clone();
                }
            }
        }
        // assign
        let mut changed = false;
        let mut inertia = 0.0;
        for (p, a) in points.iter().zip(assignments.iter_mut()) {
            let (c, d) = nearest(p, &centroids);
            if c != *a && d < sq_dist(p, &centroids[*a]) {
                *a = c;
                changed = true;
            }
            inertia += sq_dist(p, &centroids[*a]);
        }
        history.push(inertia);
        if !changed {
            break;
        }
    }
    let inertia = *history.last().expect("at least one iteration");
    Ok(KMeans {
        assignments,
        centroids,
        inertia,
        history,
        iterations,
    })
}

/// Mean importance per factor within one cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRow {
    pub cluster: usize,
    pub size: usize,
    pub mean: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub factors: Vec<String>,
    pub clusters: Vec<ClusterRow>,
}

pub fn cluster_report(assignments: &[usize], matrix: &ImportanceMatrix) -> Result<ClusterReport> {
    if assignments.len() != matrix.rows.len() {
        return Err(Error::invalid(format!(
            "{} assignments for {} users",
            assignments.len(),
            matrix.rows.len()
        )));
    }
    let k = assignments.iter().max().map_or(0, |m| m + 1);
    let f = matrix.factors.len();
    let mut sums = vec![vec![0.0; f]; k];
    let mut sizes = vec![0usize; k];
    for (row, &c) in matrix.rows.iter().zip(assignments) {
        sizes[c] += 1;
        for (s, v) in sums[c].iter_mut().zip(row) {
            *s += v;
        }
    }
    let clusters = (0..k)
        .filter(|&c| sizes[c] > 0)
        .map(|c| ClusterRow {
            cluster: c,
            size: sizes[c],
            mean: sums[c].iter().map(|s| s / sizes[c] as f64).collect(),
        })
        .collect();
    Ok(ClusterReport {
        factors: matrix.factors.clone(),
        clusters,
    })
}

impl ClusterReport {
    /// `cluster,size,<factor>...`
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header = ["cluster".to_owned(), "size".to_owned()]
            .into_iter()
            .chain(self.factors.iter().cloned());
        w.write_record(header).map_err(csv_err)?;
        for row in &self.clusters {
            let rec = [row.cluster.to_string(), row.size.to_string()]
                .into_iter()
                .chain(row.mean.iter().map(|v| v.to_string()));
            w.write_record(rec).map_err(csv_err)?;
        }
        finish_csv(w)
    }

    /// Fixed-width table, factors as rows and clusters as columns.
    pub fn to_table(&self) -> String {
        let width = self.factors.iter().map(|f| f.len()).max().unwrap_or(6).max(6);
        let mut out = format!("{:width$}", "factor");
        for row in &self.clusters {
            let _ = write!(out, "  {:>10}", format!("c{} (n={})", row.cluster, row.size));
        }
        out.push('\n');
        for (i, f) in self.factors.iter().enumerate() {
            let _ = write!(out, "{f:width$}");
            for row in &self.clusters {
                let _ = write!(out, "  {:>10.4}", row.mean[i]);
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub k: usize,
    pub inertia: f64,
}

/// Final inertia for each k in `ks` that does not exceed the point count.
pub fn inertia_sweep(
    points: &[Vec<f64>],
    ks: impl IntoIterator<Item = usize>,
    seed: u64,
    max_iter: usize,
) -> Result<Vec<SweepPoint>> {
    ks.into_iter()
        .filter(|&k| k >= 1 && k <= points.len())
        .map(|k| kmeans(points, k, seed, max_iter).map(|r| SweepPoint { k, inertia: r.inertia }))
        .collect()
}
