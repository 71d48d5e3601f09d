//! Correlation metrics and the split-based evaluation protocol.
//!
//! Metrics take any [`Scalar`] slice and compute in `f64`. Constant inputs
//! make every coefficient undefined and are reported as errors, never as 0.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, Scalar};

fn to_f64<T: Scalar>(xs: &[T]) -> Result<Vec<f64>> {
    let v: Vec<f64> = xs.iter().map(|x| x.as_f64()).collect();
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Invalid("metric input contains non-finite values".into()));
    }
    Ok(v)
}

fn paired<T: Scalar>(a: &[T], b: &[T]) -> Result<(Vec<f64>, Vec<f64>)> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("metric inputs have lengths {} and {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::Undefined(format!("correlation needs n >= 2, got {}", a.len())));
    }
    Ok((to_f64(a)?, to_f64(b)?))
}

fn pearson_f64(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined("correlation of a constant series".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based fractional ranks; tied values share the mean of their ranks.
pub fn fractional_ranks<T: Scalar>(xs: &[T]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].as_f64().total_cmp(&xs[b].as_f64()));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && xs[order[j]] == xs[order[i]] {
            j += 1;
        }
        let mid = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = mid;
        }
        i = j;
    }
    ranks
}

/// Sample Pearson correlation of the raw scores.
pub fn plcc<T: Scalar>(pred: &[T], gt: &[T]) -> Result<f64> {
    let (x, y) = paired(pred, gt)?;
    pearson_f64(&x, &y)
}

/// Spearman: Pearson correlation of mid-ranks.
pub fn srocc<T: Scalar>(pred: &[T], gt: &[T]) -> Result<f64> {
    let (x, y) = paired(pred, gt)?;
    pearson_f64(&fractional_ranks(&x), &fractional_ranks(&y))
}

/// Kendall tau-b in O(n log n) (Knight's merge-sort method).
pub fn krocc<T: Scalar>(pred: &[T], gt: &[T]) -> Result<f64> {
    let (x, y) = paired(pred, gt)?;
    let n = x.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));

    let pairs = |run: u64| run * (run.saturating_sub(1)) / 2;
    let total = pairs(n as u64);
    // ties in x, and joint ties in (x, y)
    let (mut tie_x, mut tie_xy) = (0u64, 0u64);
    let (mut run_x, mut run_xy) = (1u64, 1u64);
    for w in idx.windows(2) {
        let (a, b) = (w[0], w[1]);
        if x[a] == x[b] {
            run_x += 1;
            if y[a] == y[b] {
                run_xy += 1;
            } else {
                tie_xy += pairs(run_xy);
                run_xy = 1;
            }
        } else {
            tie_x += pairs(run_x);
            tie_xy += pairs(run_xy);
            run_x = 1;
            run_xy = 1;
        }
    }
    tie_x += pairs(run_x);
    tie_xy += pairs(run_xy);

    let mut ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let swaps = merge_count(&mut ys);

    let mut tie_y = 0u64;
    let mut run = 1u64;
    for w in ys.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            tie_y += pairs(run);
            run = 1;
        }
    }
    tie_y += pairs(run);

    let denom = ((total - tie_x) as f64 * (total - tie_y) as f64).sqrt();
    if denom == 0.0 {
        return Err(Error::Undefined("Kendall tau of an all-tied series".into()));
    }
    let s = total as f64 - tie_x as f64 - tie_y as f64 + tie_xy as f64 - 2.0 * swaps as f64;
    Ok((s / denom).clamp(-1.0, 1.0))
}

/// Stable merge sort; returns the number of inversions (strictly greater
/// pairs) removed.
fn merge_count(v: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid]) + merge_count(&mut v[mid..]);
    let mut merged = Vec::with_capacity(n);
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            swaps += (mid - i) as u64;
            merged.push(v[j]);
            j += 1;
        } else {
            merged.push(v[i]);
            i += 1;
        }
    }
    merged.extend_from_slice(&v[i..mid]);
    merged.extend_from_slice(&v[j..n]);
    v.copy_from_slice(&merged);
    swaps
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split_id: usize,
    pub n: usize,
    pub srocc: f64,
    pub plcc: f64,
    pub krocc: f64,
}

pub fn evaluate<T: Scalar>(pred: &[T], gt: &[T], split_id: usize) -> Result<EvalReport> {
    Ok(EvalReport {
        split_id,
        n: pred.len(),
        srocc: srocc(pred, gt)?,
        plcc: plcc(pred, gt)?,
        krocc: krocc(pred, gt)?,
    })
}

/// One train/test partition of dataset indices (both sorted).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub id: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

pub const MIN_SPLIT_DATASET: usize = 10;

/// `k` seeded random partitions with `round(n · train_frac)` training items.
pub fn plan_splits(n: usize, k: usize, train_frac: f64, seed: u64) -> Result<Vec<Split>> {
    if k == 0 {
        return Err(Error::Invalid("at least one split is required".into()));
    }
    if !(train_frac > 0.0 && train_frac <= 1.0) {
        return Err(Error::Invalid(format!("train_frac {train_frac} outside (0, 1]")));
    }
    let n_train = (n as f64 * train_frac).round() as usize;
    if n_train >= n {
        return Err(Error::Invalid("empty test split".into()));
    }
    if n < MIN_SPLIT_DATASET {
        return Err(Error::Invalid(format!(
            "dataset too small: {n} entries, splits need at least {MIN_SPLIT_DATASET}"
        )));
    }
    if n_train < 2 || n - n_train < 2 {
        return Err(Error::Invalid(format!("split {n_train}/{} leaves a side with fewer than 2 items", n - n_train)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..k)
        .map(|id| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            let mut train = idx[..n_train].to_vec();
            let mut test = idx[n_train..].to_vec();
            train.sort_unstable();
            test.sort_unstable();
            Split { id, train, test }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub srocc: f64,
    pub plcc: f64,
    pub krocc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitsReport {
    pub splits: Vec<EvalReport>,
    pub mean: MetricSummary,
    pub median: MetricSummary,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

impl SplitsReport {
    pub fn from_reports(splits: Vec<EvalReport>) -> Result<Self> {
        if splits.is_empty() {
            return Err(Error::Invalid("no split reports to summarize".into()));
        }
        let col = |f: fn(&EvalReport) -> f64| splits.iter().map(f).collect::<Vec<_>>();
        let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
        let (s, p, k) = (col(|r| r.srocc), col(|r| r.plcc), col(|r| r.krocc));
        Ok(SplitsReport {
            mean: MetricSummary { srocc: mean(s.clone()), plcc: mean(p.clone()), krocc: mean(k.clone()) },
            median: MetricSummary { srocc: median(s), plcc: median(p), krocc: median(k) },
            splits,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per split, then `mean` and `median` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("split,n,srocc,plcc,krocc\n");
        for r in &self.splits {
            out.push_str(&format!("{},{},{},{},{}\n", r.split_id, r.n, r.srocc, r.plcc, r.krocc));
        }
        for (name, m) in [("mean", &self.mean), ("median", &self.median)] {
            out.push_str(&format!("{name},,{},{},{}\n", m.srocc, m.plcc, m.krocc));
        }
        out
    }
}

/// Evaluate every split with `train_and_predict`, which fits on `split.train`
/// and returns `(predictions, ground truth)` for `split.test`. Splits run in
/// parallel; each caller should derive its seed from `split.id`.
pub fn run_splits<F>(splits: &[Split], train_and_predict: F) -> Result<SplitsReport>
where
    F: Fn(&Split) -> Result<(Vec<f64>, Vec<f64>)> + Sync,
{
    let reports = splits
        .par_iter()
        .map(|s| {
            let (pred, gt) = train_and_predict(s)?;
            evaluate(&pred, &gt, s.id)
        })
        .collect::<Result<Vec<_>>>()?;
    SplitsReport::from_reports(reports)
}
