//! Evaluation helpers: centre profiles, representational dissimilarity
//! matrices, the Wilcoxon rank-sum test, gamma rendering and aggregation of
//! per-image metrics.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{SampleRecord, Split};
use crate::error::{Error, Result};
use crate::transport::ReflectanceImage;

/// Middle row of an odd-sided square raster.
pub fn middle_row(pixels: &[f64], side: usize) -> Result<Vec<f64>> {
    if side.is_multiple_of(2) {
        return Err(Error::invalid(format!("image side {side} is even; no centre row")));
    }
    if pixels.len() != side * side {
        return Err(Error::invalid(format!(
            "{} pixels do not form a {side}×{side} image",
            pixels.len()
        )));
    }
    let mid = side / 2;
    Ok(pixels[mid * side..(mid + 1) * side].to_vec())
}

/// Horizontal profile through the beam entry point.
pub fn center_profile(image: &ReflectanceImage) -> Result<Vec<f64>> {
    middle_row(image.pixels(), image.side())
}

/// Square symmetric distance matrix with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct Rdm {
    n: usize,
    distances: Vec<f64>,
}

impl Rdm {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.distances[i * self.n + j]
    }

    pub fn distances(&self) -> &[f64] {
        &self.distances
    }
}

/// Pairwise Euclidean distances between equal-length vectors.
pub fn compute_rdm(items: &[Vec<f64>]) -> Result<Rdm> {
    let n = items.len();
    if let Some(first) = items.first() {
        if let Some((i, v)) = items.iter().enumerate().find(|(_, v)| v.len() != first.len()) {
            return Err(Error::invalid(format!(
                "item {i} has length {} but item 0 has length {}",
                v.len(),
                first.len()
            )));
        }
    }
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (i + 1..n)
                .map(|j| {
                    items[i]
                        .iter()
                        .zip(&items[j])
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt()
                })
                .collect()
        })
        .collect();
    let mut distances = vec![0.0; n * n];
    for (i, row) in upper.iter().enumerate() {
        for (off, d) in row.iter().enumerate() {
            let j = i + 1 + off;
            distances[i * n + j] = *d;
            distances[j * n + i] = *d;
        }
    }
    Ok(Rdm { n, distances })
}

/// Test-split records ordered by tissue, then g, then sample index.
pub fn rdm_order(records: &[SampleRecord], split: Split) -> Vec<&SampleRecord> {
    let mut v: Vec<_> = records.iter().filter(|r| r.split == split).collect();
    v.sort_by(|a, b| {
        a.tissue
            .cmp(&b.tissue)
            .then(a.g.total_cmp(&b.g))
            .then(a.sample_index.cmp(&b.sample_index))
    });
    v
}

/// Loads the centre profiles of the ordered records from `dataset_dir`.
pub fn load_profiles(dataset_dir: &Path, records: &[&SampleRecord]) -> Result<Vec<Vec<f64>>> {
    records
        .iter()
        .map(|r| {
            let pixels = crate::io::read_f32(&dataset_dir.join(&r.path))?;
            middle_row(&pixels, r.grid().side()).map_err(|e| Error::Record {
                record: r.path.clone(),
                source: Box::new(e),
            })
        })
        .collect()
}

// Exact enumeration is used while the number of label assignments stays
// below this.
const EXACT_ASSIGNMENTS: f64 = 1e6;

fn midranks(a: &[f64], b: &[f64]) -> Vec<(f64, bool)> {
    let mut all: Vec<(f64, bool)> = a
        .iter()
        .map(|v| (*v, true))
        .chain(b.iter().map(|v| (*v, false)))
        .collect();
    all.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut ranked = Vec::with_capacity(all.len());
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for item in &all[i..=j] {
            ranked.push((rank, item.1));
        }
        i = j + 1;
    }
    ranked
}

fn choose(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn check_samples(a: &[f64], b: &[f64]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("rank-sum test needs two nonempty samples"));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::invalid("rank-sum test samples contain NaN"));
    }
    Ok(())
}

/// Two-sided p-value from the exact permutation distribution of the rank sum
/// of `a` (midranks for ties): `min(1, 2·min(P(W ≤ w), P(W ≥ w)))`.
pub fn rank_sum_exact(a: &[f64], b: &[f64]) -> Result<f64> {
    check_samples(a, b)?;
    let ranked = midranks(a, b);
    let n = a.len();
    // Doubled midranks are integers.
    let doubled: Vec<usize> = ranked.iter().map(|(r, _)| (r * 2.0).round() as usize).collect();
    let observed: usize = ranked
        .iter()
        .zip(&doubled)
        .filter(|((_, in_a), _)| *in_a)
        .map(|(_, d)| *d)
        .sum();
    let max_sum: usize = doubled.iter().sum();
    // ways[j][s]: subsets of size j with doubled rank sum s.
    let mut ways = vec![vec![0.0f64; max_sum + 1]; n + 1];
    ways[0][0] = 1.0;
    for d in &doubled {
        for j in (1..=n).rev() {
            let (lo, hi) = ways.split_at_mut(j);
            for s in (*d..=max_sum).rev() {
                hi[0][s] += lo[j - 1][s - d];
            }
        }
    }
    let dist = &ways[n];
    let total: f64 = dist.iter().sum();
    let le: f64 = dist[..=observed].iter().sum();
    let ge: f64 = dist[observed..].iter().sum();
    Ok((2.0 * le.min(ge) / total).min(1.0))
}

/// Two-sided p-value from the normal approximation of the Mann-Whitney U
/// statistic with tie and continuity corrections.
pub fn rank_sum_normal(a: &[f64], b: &[f64]) -> Result<f64> {
    check_samples(a, b)?;
    let ranked = midranks(a, b);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let total = n + m;
    let w: f64 = ranked.iter().filter(|(_, in_a)| *in_a).map(|(r, _)| r).sum();
    let u = w - n * (n + 1.0) / 2.0;
    let mean = n * m / 2.0;

    let mut ties = 0.0;
    let mut i = 0;
    while i < ranked.len() {
        let mut j = i;
        while j + 1 < ranked.len() && ranked[j + 1].0 == ranked[i].0 {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        ties += t * t * t - t;
        i = j + 1;
    }
    let var = n * m / 12.0 * ((total + 1.0) - ties / (total * (total - 1.0)).max(1.0));
    if var <= 0.0 {
        return Ok(1.0);
    }
    let z = ((u - mean).abs() - 0.5).max(0.0) / var.sqrt();
    Ok(libm::erfc(z / std::f64::consts::SQRT_2).min(1.0))
}

/// Wilcoxon rank-sum test, exact for small samples and normal otherwise.
pub fn rank_sum_test(a: &[f64], b: &[f64]) -> Result<f64> {
    check_samples(a, b)?;
    if choose(a.len() + b.len(), a.len().min(b.len())) <= EXACT_ASSIGNMENTS {
        rank_sum_exact(a, b)
    } else {
        rank_sum_normal(a, b)
    }
}

/// 8-bit rendering `round(255·(v/v_max)^γ)`, all zero when `v_max = 0`.
pub fn render_gamma(pixels: &[f64], gamma: f64) -> Vec<u8> {
    let vmax = pixels.iter().cloned().fold(0.0f64, f64::max);
    if !(vmax > 0.0) {
        return vec![0; pixels.len()];
    }
    pixels
        .iter()
        .map(|v| {
            let x = 255.0 * (v.max(0.0) / vmax).powf(gamma);
            (x + 0.5).floor().clamp(0.0, 255.0) as u8
        })
        .collect()
}

/// One per-image evaluation result, as exported by the estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    #[serde(default)]
    pub dataset: String,
    pub image_id: String,
    pub tissue: String,
    pub g: f64,
    pub mse: f64,
    pub g_hat: f64,
    pub rel_error: f64,
}

/// Mean and population standard deviation.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupSummary {
    pub dataset: String,
    /// `*` for the per-dataset overall row.
    pub tissue: String,
    /// `None` for pooled rows.
    pub g: Option<f64>,
    pub count: usize,
    pub mse_mean: f64,
    pub mse_sd: f64,
    pub rel_error_mean: f64,
    pub rel_error_sd: f64,
    /// `(ref − mse)/mse × 100` on overall rows.
    pub gain_percent: Option<f64>,
}

/// Rank-sum comparison of per-image MSE between a dataset and the reference
/// at one g value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub dataset: String,
    pub reference: String,
    pub g: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricSummary {
    pub groups: Vec<GroupSummary>,
    pub overall: Vec<GroupSummary>,
    pub comparisons: Vec<Comparison>,
}

fn g_key(g: f64) -> i64 {
    (g * 1e6).round() as i64
}

fn summarize(dataset: &str, tissue: &str, g: Option<f64>, rows: &[&MetricRecord]) -> GroupSummary {
    let mse: Vec<f64> = rows.iter().map(|r| r.mse).collect();
    let rel: Vec<f64> = rows.iter().map(|r| r.rel_error).collect();
    let (mse_mean, mse_sd) = mean_sd(&mse);
    let (rel_error_mean, rel_error_sd) = mean_sd(&rel);
    GroupSummary {
        dataset: dataset.to_string(),
        tissue: tissue.to_string(),
        g,
        count: rows.len(),
        mse_mean,
        mse_sd,
        rel_error_mean,
        rel_error_sd,
        gain_percent: None,
    }
}

/// Groups by (dataset, tissue, g), pools per dataset and computes the gain
/// of each dataset's mean MSE against `reference`.
pub fn aggregate_metrics(records: &[MetricRecord], reference: &str) -> Result<MetricSummary> {
    if records.is_empty() {
        return Err(Error::invalid("no metric records"));
    }
    let mut by_group: BTreeMap<(&str, &str, i64), Vec<&MetricRecord>> = BTreeMap::new();
    let mut by_dataset: BTreeMap<&str, Vec<&MetricRecord>> = BTreeMap::new();
    for r in records {
        by_group
            .entry((&r.dataset, &r.tissue, g_key(r.g)))
            .or_default()
            .push(r);
        by_dataset.entry(&r.dataset).or_default().push(r);
    }
    let ref_rows = by_dataset
        .get(reference)
        .ok_or_else(|| Error::UnknownReference(reference.to_string()))?;
    let ref_mse = mean_sd(&ref_rows.iter().map(|r| r.mse).collect::<Vec<_>>()).0;

    let groups = by_group
        .iter()
        .map(|((d, t, _), rows)| summarize(d, t, Some(rows[0].g), rows))
        .collect();
    let overall = by_dataset
        .iter()
        .map(|(d, rows)| {
            let mut s = summarize(d, "*", None, rows);
            s.gain_percent = Some(if *d == reference {
                0.0
            } else {
                (ref_mse - s.mse_mean) / s.mse_mean * 100.0
            });
            s
        })
        .collect();

    let mut comparisons = Vec::new();
    let per_g = |rows: &[&MetricRecord]| {
        let mut m: BTreeMap<i64, (f64, Vec<f64>)> = BTreeMap::new();
        for r in rows {
            m.entry(g_key(r.g)).or_insert((r.g, Vec::new())).1.push(r.mse);
        }
        m
    };
    let ref_by_g = per_g(ref_rows);
    for (d, rows) in &by_dataset {
        if *d == reference {
            continue;
        }
        for (key, (g, mse)) in per_g(rows) {
            if let Some((_, ref_mse)) = ref_by_g.get(&key) {
                comparisons.push(Comparison {
                    dataset: d.to_string(),
                    reference: reference.to_string(),
                    g,
                    p_value: rank_sum_test(&mse, ref_mse)?,
                });
            }
        }
    }

    Ok(MetricSummary {
        groups,
        overall,
        comparisons,
    })
}

impl MetricSummary {
    /// CSV with one row per group followed by the overall rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "dataset,tissue,g,count,mse_mean,mse_sd,rel_error_mean,rel_error_sd,gain_percent\n",
        );
        for s in self.groups.iter().chain(&self.overall) {
            let g = s.g.map(|g| format!("{g:.2}")).unwrap_or_else(|| "*".into());
            let gain = s.gain_percent.map(|v| format!("{v:.1}")).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{:.6e},{:.6e},{:.4},{:.4},{}\n",
                s.dataset,
                quote(&s.tissue),
                g,
                s.count,
                s.mse_mean,
                s.mse_sd,
                s.rel_error_mean,
                s.rel_error_sd,
                gain
            ));
        }
        out
    }

    /// CSV of the per-g rank-sum p-values against the reference.
    pub fn comparisons_csv(&self) -> String {
        let mut out = String::from("dataset,reference,g,p_value\n");
        for c in &self.comparisons {
            out.push_str(&format!("{},{},{:.2},{:.6e}\n", c.dataset, c.reference, c.g, c.p_value));
        }
        out
    }
}

fn quote(s: &str) -> String {
    if s.contains(',') || s.contains('"') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Reads an estimator metrics CSV; `dataset` fills rows that lack one.
pub fn read_metrics_csv(path: &Path, dataset: &str) -> Result<Vec<MetricRecord>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let mut rec: MetricRecord = row.map_err(|e| csv_error(path, e))?;
        if rec.dataset.is_empty() {
            rec.dataset = dataset.to_string();
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_metrics_csv(path: &Path, records: &[MetricRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in records {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Feature CSV: an `image_id` column followed by numeric feature columns.
pub fn read_features_csv(path: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let mut it = row.iter();
        let id = it
            .next()
            .ok_or_else(|| Error::format("feature CSV", format!("row {} is empty", i + 2)))?
            .to_string();
        let feats = it
            .map(|s| {
                s.trim().parse::<f64>().map_err(|_| {
                    Error::format("feature CSV", format!("row {}: bad number `{s}`", i + 2))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        out.push((id, feats));
    }
    Ok(out)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::format("CSV", format!("{}: {e}", path.display()))
}
