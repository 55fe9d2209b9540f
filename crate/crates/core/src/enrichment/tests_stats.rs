//! Rank correlation, signed Kolmogorov-Smirnov and hypergeometric enrichment.

use serde::{Deserialize, Serialize};

use crate::error::{PrlError, Result};
use crate::stats::special::t_two_sided;

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpearmanResult {
    pub rho: f64,
    pub p_value: f64,
    pub significant: bool,
    pub n: usize,
}

/// Pearson correlation of average ranks with a t-approximation p-value on
/// `n - 2` degrees of freedom.
pub fn spearman(x: &[f64], y: &[f64], alpha: f64) -> Result<SpearmanResult> {
    if x.len() != y.len() {
        return Err(PrlError::Dimension(format!("{} vs {} observations", x.len(), y.len())));
    }
    let n = x.len();
    if n < 3 {
        return Err(PrlError::Precondition(format!("spearman needs at least 3 pairs, got {n}")));
    }
    let rho = pearson(&average_ranks(x), &average_ranks(y))
        .ok_or_else(|| PrlError::Precondition("spearman undefined for a constant variable".into()))?;
    let df = (n - 2) as f64;
    let p_value = if rho.abs() >= 1.0 {
        0.0
    } else {
        t_two_sided(rho * (df / (1.0 - rho * rho)).sqrt(), df)
    };
    Ok(SpearmanResult {
        rho,
        p_value,
        significant: p_value < alpha,
        n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignedKsResult {
    pub statistic: f64,
    /// +1 when the first sample sits to the right of the second (its CDF is
    /// lower) at the point achieving the supremum, -1 otherwise.
    pub sign: i8,
    pub significant: bool,
    pub alpha: f64,
    pub n: usize,
    pub m: usize,
}

impl SignedKsResult {
    pub fn signed(&self) -> f64 {
        f64::from(self.sign) * self.statistic
    }
}

/// `c(alpha) = sqrt(-0.5 ln(alpha/2))`.
pub fn ks_critical_value(alpha: f64) -> f64 {
    (-0.5 * (alpha / 2.0).ln()).sqrt()
}

/// Two-sample Kolmogorov-Smirnov distance with a direction. The sign is read
/// at the first pooled point where the supremum is reached.
pub fn ks_two_sample_signed(sample: &[f64], population: &[f64], alpha: f64) -> Result<SignedKsResult> {
    if sample.is_empty() || population.is_empty() {
        return Err(PrlError::Precondition("K-S needs two non-empty samples".into()));
    }
    let mut a = sample.to_vec();
    let mut b = population.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut best = 0.0;
    let mut sign = -1i8;
    while i < n || j < m {
        let x = match (a.get(i), b.get(j)) {
            (Some(&p), Some(&q)) => p.min(q),
            (Some(&p), None) => p,
            (None, Some(&q)) => q,
            (None, None) => unreachable!(),
        };
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        let diff = i as f64 / n as f64 - j as f64 / m as f64;
        if diff.abs() > best {
            best = diff.abs();
            sign = if diff < 0.0 { 1 } else { -1 };
        }
    }
    let threshold = ks_critical_value(alpha) * (((n + m) as f64) / ((n * m) as f64)).sqrt();
    Ok(SignedKsResult {
        statistic: best,
        sign,
        significant: best > threshold,
        alpha,
        n,
        m,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sidedness {
    #[default]
    TwoSided,
    /// Upper tail when the fold exceeds one, lower tail otherwise.
    OneSided,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub k: u64,
    pub n: u64,
    pub big_k: u64,
    pub big_n: u64,
    /// Observed over expected successes; 1 when nothing is expected.
    pub fold: f64,
    pub p_value: f64,
    pub significant: bool,
}

fn binom_u128(n: u64, k: u64) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        c = c.checked_mul((n - i) as u128)? / (i + 1) as u128;
    }
    Some(c)
}

fn support(n: u64, big_k: u64, big_n: u64) -> (u64, u64) {
    ((n + big_k).saturating_sub(big_n), n.min(big_k))
}

const EXACT_LIMIT: u128 = 1 << 53;

/// Exact rational tail when every count fits an f64 mantissa.
fn exact_tail(range: std::ops::RangeInclusive<u64>, n: u64, big_k: u64, big_n: u64) -> Option<f64> {
    let total = binom_u128(big_n, n)?;
    let mut num: u128 = 0;
    for i in range {
        let term = binom_u128(big_k, i)?.checked_mul(binom_u128(big_n - big_k, n - i)?)?;
        num = num.checked_add(term)?;
    }
    (total < EXACT_LIMIT && num < EXACT_LIMIT).then(|| num as f64 / total as f64)
}

/// Whole distribution, normalized, built by the ratio recurrence
/// `p(x+1)/p(x) = (K-x)(n-x) / ((x+1)(N-K-n+x+1))` outward from the mode.
fn distribution(n: u64, big_k: u64, big_n: u64) -> (u64, Vec<f64>) {
    let (lo, hi) = support(n, big_k, big_n);
    let mode = (((n + 1) as f64 * (big_k + 1) as f64 / (big_n + 2) as f64).floor() as u64).clamp(lo, hi);
    let ratio = |x: u64| {
        ((big_k - x) as f64 * (n - x) as f64) / ((x + 1) as f64 * (big_n - big_k - n + x + 1) as f64)
    };
    let mut w = vec![0.0; (hi - lo + 1) as usize];
    w[(mode - lo) as usize] = 1.0;
    for x in mode..hi {
        w[(x + 1 - lo) as usize] = w[(x - lo) as usize] * ratio(x);
    }
    for x in (lo..mode).rev() {
        w[(x - lo) as usize] = w[(x + 1 - lo) as usize] / ratio(x);
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    (lo, w)
}

/// `P[X = x]` for `X ~ Hypergeometric(N, K, n)`.
pub fn hypergeom_pmf(x: u64, n: u64, big_k: u64, big_n: u64) -> f64 {
    let (lo, hi) = support(n, big_k, big_n);
    if x < lo || x > hi {
        return 0.0;
    }
    exact_tail(x..=x, n, big_k, big_n).unwrap_or_else(|| {
        let (lo, w) = distribution(n, big_k, big_n);
        w[(x - lo) as usize]
    })
}

fn tail(range: std::ops::RangeInclusive<u64>, n: u64, big_k: u64, big_n: u64) -> f64 {
    exact_tail(range.clone(), n, big_k, big_n)
        .unwrap_or_else(|| {
            let (lo, w) = distribution(n, big_k, big_n);
            range.map(|x| w[(x - lo) as usize]).sum::<f64>()
        })
        .min(1.0)
}

/// Fold enrichment of `k` successes in `n` draws against `K` of `N`, with a
/// hypergeometric p-value.
pub fn hypergeom_fold(k: u64, n: u64, big_k: u64, big_n: u64, alpha: f64, sided: Sidedness) -> Result<FoldResult> {
    if k > n || n > big_n || k > big_k || big_k > big_n || n - k > big_n - big_k {
        return Err(PrlError::Validation(format!(
            "impossible counts k={k}, n={n}, K={big_k}, N={big_n}"
        )));
    }
    let expected = n as f64 * big_k as f64 / big_n.max(1) as f64;
    let fold = if expected > 0.0 { k as f64 / expected } else { 1.0 };
    let (lo, hi) = support(n, big_k, big_n);
    let lower = tail(lo..=k, n, big_k, big_n);
    let upper = tail(k..=hi, n, big_k, big_n);
    let p_value = match sided {
        Sidedness::TwoSided => (2.0 * lower.min(upper)).min(1.0),
        Sidedness::OneSided if fold >= 1.0 => upper,
        Sidedness::OneSided => lower,
    };
    Ok(FoldResult {
        k,
        n,
        big_k,
        big_n,
        fold,
        p_value,
        significant: p_value < alpha,
    })
}
