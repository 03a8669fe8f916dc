use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::DECISION_THRESHOLD;
use crate::signal::Label;

fn check_pairs(labels: usize, values: usize, what: &str) -> Result<()> {
    if labels != values {
        return Err(Error::Stats(format!("{what}: {labels} labels but {values} scores")));
    }
    if labels == 0 {
        return Err(Error::Stats(format!("{what}: no samples")));
    }
    Ok(())
}

/// Percentage of correct decisions; probabilities at or above `threshold`
/// count as attended.
pub fn accuracy(labels: &[Label], probs: &[f64], threshold: f64) -> Result<f64> {
    check_pairs(labels.len(), probs.len(), "accuracy")?;
    let correct = labels
        .iter()
        .zip(probs)
        .filter(|(&l, &p)| (p >= threshold) == (l == Label::Attended))
        .count();
    Ok(100.0 * correct as f64 / labels.len() as f64)
}

/// [`accuracy`] at the default 0.5 threshold.
pub fn accuracy_default(labels: &[Label], probs: &[f64]) -> Result<f64> {
    accuracy(labels, probs, DECISION_THRESHOLD)
}

/// Twice the average 1-based rank of every score, so tied groups stay
/// integral.
fn doubled_ranks(scores: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // positions i+1 ..= j+1 share the mean rank (i + j + 2) / 2
        for &k in &order[i..=j] {
            ranks[k] = (i + j + 2) as u64;
        }
        i = j + 1;
    }
    ranks
}

/// Mann–Whitney area under the ROC curve in percent, ties sharing average
/// ranks.
pub fn roc_auc(labels: &[Label], scores: &[f64]) -> Result<f64> {
    check_pairs(labels.len(), scores.len(), "roc_auc")?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Stats("roc_auc: NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l == Label::Attended).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Stats("roc_auc needs both classes".into()));
    }
    let ranks = doubled_ranks(scores);
    let rank_sum: u64 = labels
        .iter()
        .zip(&ranks)
        .filter(|(&l, _)| l == Label::Attended)
        .map(|(_, &r)| r)
        .sum();
    // 2U = 2 R_pos - P (P + 1); AUC = U / (P N)
    let twice_u = rank_sum - pos * (pos + 1);
    Ok(twice_u as f64 / (2 * pos * neg) as f64 * 100.0)
}

/// ROC curve points `(false positive rate, true positive rate)` from the
/// strictest threshold down, starting at `(0, 0)` and ending at `(1, 1)`.
pub fn roc_curve(labels: &[Label], scores: &[f64]) -> Result<Vec<(f64, f64)>> {
    check_pairs(labels.len(), scores.len(), "roc_curve")?;
    let pos = labels.iter().filter(|&&l| l == Label::Attended).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Stats("roc_curve needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    for (k, &i) in order.iter().enumerate() {
        if labels[i] == Label::Attended {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_tie = order.get(k + 1).is_none_or(|&n| scores[n] != scores[i]);
        if last_of_tie {
            points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
        }
    }
    Ok(points)
}

/// Below this many nonzero pairs the signed-rank test refuses to run.
pub const WILCOXON_MIN_PAIRS: usize = 5;
/// Largest sample size with an exact null distribution.
pub const WILCOXON_EXACT_MAX: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Wilcoxon {
    /// `min(W+, W-)`.
    pub statistic: f64,
    pub w_plus: f64,
    pub w_minus: f64,
    /// Nonzero pairs used.
    pub n: usize,
    pub p_value: f64,
    pub exact: bool,
}

struct SignedRanks {
    /// Doubled average ranks of `|d|`.
    ranks: Vec<u64>,
    positive: Vec<bool>,
}

fn signed_ranks(a: &[f64], b: &[f64]) -> Result<SignedRanks> {
    if a.len() != b.len() {
        return Err(Error::Stats(format!("wilcoxon: samples of {} and {} are not paired", a.len(), b.len())));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    if d.iter().any(|d| d.is_nan()) {
        return Err(Error::Stats("wilcoxon: NaN difference".into()));
    }
    if d.len() < WILCOXON_MIN_PAIRS {
        return Err(Error::Stats(format!(
            "wilcoxon: {} nonzero differences, need at least {WILCOXON_MIN_PAIRS}",
            d.len()
        )));
    }
    let abs: Vec<f64> = d.iter().map(|d| d.abs()).collect();
    Ok(SignedRanks {
        ranks: doubled_ranks(&abs),
        positive: d.iter().map(|&d| d > 0.0).collect(),
    })
}

/// Number of sign assignments whose doubled positive rank sum is at most
/// `bound`, by subset-sum counting.
fn count_at_most(ranks: &[u64], bound: u64) -> u64 {
    let total: u64 = ranks.iter().sum();
    let mut ways = vec![0u64; total as usize + 1];
    ways[0] = 1;
    let mut reach = 0usize;
    for &r in ranks {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if ways[s] > 0 {
                ways[s + r] += ways[s];
            }
        }
        reach += r;
    }
    ways[..=(bound as usize).min(total as usize)].iter().sum()
}

/// Normal approximation with tie and continuity corrections, from doubled
/// ranks.
fn normal_p(ranks: &[u64], w_plus2: u64) -> f64 {
    let n = ranks.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut sorted = ranks.to_vec();
    sorted.sort_unstable();
    let mut tie_term = 0.0;
    for group in sorted.chunk_by(|a, b| a == b) {
        let t = group.len() as f64;
        tie_term += t * t * t - t;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let w_plus = w_plus2 as f64 / 2.0;
    let z = ((w_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
    statrs::function::erf::erfc(z / std::f64::consts::SQRT_2).min(1.0)
}

/// Two-sided Wilcoxon signed-rank test of paired samples. Zero differences
/// are dropped; tied magnitudes share average ranks. Exact for up to
/// [`WILCOXON_EXACT_MAX`] pairs, normal approximation beyond.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<Wilcoxon> {
    let sr = signed_ranks(a, b)?;
    let n = sr.ranks.len();
    let total2: u64 = sr.ranks.iter().sum();
    let plus2: u64 = sr.ranks.iter().zip(&sr.positive).filter(|(_, &p)| p).map(|(&r, _)| r).sum();
    let minus2 = total2 - plus2;
    let exact = n <= WILCOXON_EXACT_MAX;
    let p_value = if exact {
        let count = count_at_most(&sr.ranks, plus2.min(minus2));
        ((2 * count) as f64 / (1u64 << n) as f64).min(1.0)
    } else {
        normal_p(&sr.ranks, plus2)
    };
    Ok(Wilcoxon {
        statistic: plus2.min(minus2) as f64 / 2.0,
        w_plus: plus2 as f64 / 2.0,
        w_minus: minus2 as f64 / 2.0,
        n,
        p_value,
        exact,
    })
}

/// The normal-approximation p-value regardless of sample size.
pub fn wilcoxon_normal_p(a: &[f64], b: &[f64]) -> Result<f64> {
    let sr = signed_ranks(a, b)?;
    let plus2: u64 = sr.ranks.iter().zip(&sr.positive).filter(|(_, &p)| p).map(|(&r, _)| r).sum();
    Ok(normal_p(&sr.ranks, plus2))
}

/// Raw epoch values over latent size: `window · rate · channels / latent`.
pub fn compression_ratio(window_s: f64, rate: f64, channels: usize, latent: usize) -> Result<f64> {
    if !(window_s > 0.0 && rate > 0.0) || channels == 0 || latent == 0 {
        return Err(Error::Stats("compression ratio needs positive arguments".into()));
    }
    Ok(window_s * rate * channels as f64 / latent as f64)
}

/// Compression ratio of the default 0.4 s, 250 Hz, 35-channel epoch into a
/// 512-value latent.
pub fn default_compression_ratio() -> f64 {
    compression_ratio(0.4, 250.0, 35, 512).expect("positive constants")
}

/// Mean with standard error `s / sqrt(n)` (sample standard deviation).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl MeanSe {
    pub fn of(values: &[f64]) -> Result<Self> {
        let n = values.len();
        if n == 0 {
            return Err(Error::Stats("mean of no values".into()));
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let se = if n > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Ok(Self { mean, se, n })
    }
}

impl std::fmt::Display for MeanSe {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.4} ± {:.4}", self.mean, self.se)
    }
}
