//! Summary statistics over suboptimality records.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::net::SuboptimalityRecord;

/// Nearest-rank percentile of ascending `sorted`; `None` when empty.
pub fn nearest_rank(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

/// Statistics that depend on the record set alone, so re-parsing a record
/// CSV reproduces them exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordStats {
    pub flows: u64,
    pub scored: u64,
    pub rejected: u64,
    /// Live admissions the serialised replay would have refused.
    pub divergent: u64,
    /// Divergent admissions with no serialised alternative; not scored.
    pub divergent_unscored: u64,
    pub suboptimal: u64,
    /// Of `1 - d_subopt` over scored records.
    pub mean: Option<f64>,
    pub p50: Option<f64>,
    pub p95: Option<f64>,
    pub p99: Option<f64>,
    pub fraction_suboptimal: Option<f64>,
}

impl RecordStats {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a SuboptimalityRecord>) -> Self {
        let mut values = Vec::new();
        let (mut flows, mut rejected, mut divergent, mut unscored, mut suboptimal) = (0, 0, 0, 0, 0);
        for r in records {
            flows += 1;
            rejected += r.rejected as u64;
            divergent += r.divergent as u64;
            if let Some(s) = r.suboptimality() {
                values.push(s);
                suboptimal += r.is_suboptimal() as u64;
            } else if r.divergent {
                unscored += 1;
            }
        }
        let scored = values.len() as u64;
        let mean = (scored > 0).then(|| values.iter().sum::<f64>() / scored as f64);
        values.sort_by(f64::total_cmp);
        RecordStats {
            flows,
            scored,
            rejected,
            divergent,
            divergent_unscored: unscored,
            suboptimal,
            mean,
            p50: nearest_rank(&values, 50.0),
            p95: nearest_rank(&values, 95.0),
            p99: nearest_rank(&values, 99.0),
            fraction_suboptimal: (scored > 0).then(|| suboptimal as f64 / scored as f64),
        }
    }
}

/// Ranks with ties sharing their average rank (1-based).
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            out[idx[k]] = avg;
        }
        i = j + 1;
    }
    out
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub rho: f64,
    /// Two-sided, from the t approximation with n - 2 degrees of freedom.
    pub p_value: f64,
    pub n: usize,
}

/// Spearman rank correlation. `None` below three points or when either
/// sample is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<Correlation> {
    assert_eq!(x.len(), y.len());
    let n = x.len();
    if n < 3 {
        return None;
    }
    let rho = pearson(&ranks(x), &ranks(y))?;
    let df = (n - 2) as f64;
    let p_value = if rho.abs() >= 1.0 {
        0.0
    } else {
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
        2.0 * (1.0 - dist.cdf(t.abs()))
    };
    Some(Correlation { rho, p_value, n })
}
