//! Kaplan-Meier curves, the logrank test, concordance and risk groups.

use serde::{Deserialize, Serialize};

use super::special::chi2_1_sf;
use crate::error::{PrlError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmStep {
    pub time: f64,
    /// Survival just after `time`.
    pub survival: f64,
    pub at_risk: usize,
    pub events: usize,
    pub censored: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmCurve {
    /// One entry per distinct observed time, preceded by `(0, 1.0)`.
    pub steps: Vec<KmStep>,
}

impl KmCurve {
    /// Survival probability at `t` (right-continuous step function).
    pub fn at(&self, t: f64) -> f64 {
        self.steps
            .iter()
            .take_while(|s| s.time <= t)
            .last()
            .map_or(1.0, |s| s.survival)
    }

    /// `(time, survival)` for every censored observation, for plotting marks.
    pub fn censor_marks(&self) -> Vec<(f64, f64)> {
        self.steps
            .iter()
            .filter(|s| s.censored > 0)
            .map(|s| (s.time, s.survival))
            .collect()
    }
}

fn grouped(times: &[f64], events: &[bool]) -> Vec<(f64, usize, usize)> {
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let mut out: Vec<(f64, usize, usize)> = Vec::new();
    for i in order {
        match out.last_mut() {
            Some(last) if last.0 == times[i] => {
                if events[i] {
                    last.1 += 1;
                } else {
                    last.2 += 1;
                }
            }
            _ => out.push((times[i], usize::from(events[i]), usize::from(!events[i]))),
        }
    }
    out
}

fn check_times(times: &[f64], events: &[bool]) -> Result<()> {
    if times.len() != events.len() {
        return Err(PrlError::Dimension(format!("{} times, {} events", times.len(), events.len())));
    }
    if let Some(t) = times.iter().find(|t| !(**t > 0.0) || !t.is_finite()) {
        return Err(PrlError::Validation(format!("survival time {t} is not positive")));
    }
    Ok(())
}

/// Product-limit estimator.
pub fn kaplan_meier(times: &[f64], events: &[bool]) -> Result<KmCurve> {
    check_times(times, events)?;
    if times.is_empty() {
        return Err(PrlError::Precondition("kaplan-meier needs at least one observation".into()));
    }
    let mut at_risk = times.len();
    let mut s = 1.0;
    let mut steps = vec![KmStep {
        time: 0.0,
        survival: 1.0,
        at_risk,
        events: 0,
        censored: 0,
    }];
    for (t, d, c) in grouped(times, events) {
        s *= 1.0 - d as f64 / at_risk as f64;
        steps.push(KmStep {
            time: t,
            survival: s,
            at_risk,
            events: d,
            censored: c,
        });
        at_risk -= d + c;
    }
    Ok(KmCurve { steps })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogrankResult {
    pub chi2: f64,
    pub p_value: f64,
    pub observed_a: f64,
    pub expected_a: f64,
}

/// One-degree-of-freedom logrank comparison of two groups.
pub fn logrank_test(a: (&[f64], &[bool]), b: (&[f64], &[bool])) -> Result<LogrankResult> {
    check_times(a.0, a.1)?;
    check_times(b.0, b.1)?;
    if a.0.is_empty() || b.0.is_empty() {
        return Err(PrlError::Precondition("both logrank groups must be non-empty".into()));
    }
    let times: Vec<f64> = a.0.iter().chain(b.0).copied().collect();
    let events: Vec<bool> = a.1.iter().chain(b.1).copied().collect();
    let in_a: Vec<bool> = (0..times.len()).map(|i| i < a.0.len()).collect();
    if !events.iter().any(|e| *e) {
        return Err(PrlError::NoEvents("logrank needs at least one event".into()));
    }
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&x, &y| times[x].total_cmp(&times[y]));
    let (mut na, mut n) = (a.0.len() as f64, times.len() as f64);
    let (mut obs, mut exp, mut var) = (0.0, 0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let t = times[order[i]];
        let (mut d, mut da, mut leave, mut leave_a) = (0.0, 0.0, 0.0, 0.0);
        while i < order.len() && times[order[i]] == t {
            let k = order[i];
            leave += 1.0;
            if in_a[k] {
                leave_a += 1.0;
            }
            if events[k] {
                d += 1.0;
                if in_a[k] {
                    da += 1.0;
                }
            }
            i += 1;
        }
        if d > 0.0 {
            obs += da;
            exp += d * na / n;
            if n > 1.0 {
                var += d * (na / n) * (1.0 - na / n) * (n - d) / (n - 1.0);
            }
        }
        n -= leave;
        na -= leave_a;
    }
    let chi2 = if var > 0.0 { (obs - exp).powi(2) / var } else { 0.0 };
    Ok(LogrankResult {
        chi2,
        p_value: chi2_1_sf(chi2),
        observed_a: obs,
        expected_a: exp,
    })
}

/// Harrell's concordance. A pair is comparable when the shorter time ends in
/// an event (a censored time equal to an event time counts as longer); score
/// ties count one half.
pub fn concordance_index(scores: &[f64], times: &[f64], events: &[bool]) -> Result<f64> {
    if scores.len() != times.len() || times.len() != events.len() {
        return Err(PrlError::Dimension("scores, times and events differ in length".into()));
    }
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]).then(events[b].cmp(&events[a])));
    let (mut num, mut den) = (0.0, 0.0);
    for (pos, &i) in order.iter().enumerate() {
        if !events[i] {
            continue;
        }
        for &j in &order[pos + 1..] {
            if times[j] == times[i] && events[j] {
                continue;
            }
            den += 1.0;
            if scores[i] > scores[j] {
                num += 1.0;
            } else if scores[i] == scores[j] {
                num += 0.5;
            }
        }
    }
    if den == 0.0 {
        return Err(PrlError::Precondition("no comparable pairs".into()));
    }
    Ok(num / den)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RiskGroup {
    High,
    Low,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskGroups {
    pub threshold: f64,
    pub assignment: Vec<RiskGroup>,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Threshold at the training median; strictly larger scores are high risk.
pub fn split_risk_groups(train: &[f64], eval: &[f64]) -> Result<RiskGroups> {
    let threshold = median(train).ok_or_else(|| PrlError::Precondition("no training scores".into()))?;
    Ok(RiskGroups {
        threshold,
        assignment: apply_threshold(threshold, eval),
    })
}

pub fn apply_threshold(threshold: f64, eval: &[f64]) -> Vec<RiskGroup> {
    eval.iter()
        .map(|&s| if s > threshold { RiskGroup::High } else { RiskGroup::Low })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn km_examples() {
        let c = kaplan_meier(&[1.0, 2.0, 3.0], &[false; 3]).unwrap();
        assert!(c.steps.iter().all(|s| s.survival == 1.0));
        let c = kaplan_meier(&[1.0, 2.0, 3.0], &[true; 3]).unwrap();
        let s: Vec<f64> = c.steps.iter().map(|s| s.survival).collect();
        assert!((s[1] - 2.0 / 3.0).abs() < 1e-15 && (s[2] - 1.0 / 3.0).abs() < 1e-15 && s[3] == 0.0);
        // two events at t=2 among four at risk
        let c = kaplan_meier(&[1.0, 2.0, 2.0, 3.0, 4.0], &[true, true, true, false, true]).unwrap();
        assert!((c.at(2.0) - 0.8 * 0.5).abs() < 1e-15);
        assert_eq!(c.censor_marks(), vec![(3.0, 0.4)]);
        assert!(kaplan_meier(&[], &[]).is_err());
    }

    #[test]
    fn logrank_examples() {
        let t = [1.0, 2.0, 3.0, 5.0];
        let e = [true, false, true, true];
        let r = logrank_test((&t, &e), (&t, &e)).unwrap();
        assert!(r.chi2.abs() < 1e-15 && r.p_value == 1.0);
        let r = logrank_test((&[1.0, 2.0], &[true, false]), (&[3.0], &[false])).unwrap();
        assert!(r.p_value > 0.0 && r.p_value <= 1.0);
    }

    #[test]
    fn concordance_examples() {
        let t = [1.0, 2.0, 3.0, 4.0];
        let neg: Vec<f64> = t.iter().map(|x| -x).collect();
        assert_eq!(concordance_index(&neg, &t, &[true; 4]).unwrap(), 1.0);
        assert_eq!(concordance_index(&[1.0; 4], &t, &[true; 4]).unwrap(), 0.5);
        assert!(concordance_index(&[1.0, 2.0], &[1.0, 2.0], &[false, false]).is_err());
    }

    #[test]
    fn risk_split() {
        let r = split_risk_groups(&[1.0, 2.0, 3.0], &[2.0, 2.5]).unwrap();
        assert_eq!(r.threshold, 2.0);
        assert_eq!(r.assignment, vec![RiskGroup::Low, RiskGroup::High]);
        assert_eq!(apply_threshold(r.threshold, &[1.9]), vec![RiskGroup::Low]);
    }
}
