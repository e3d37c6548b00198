//! Alignment scores between predicted and target flow, and the one-sided
//! Wilcoxon signed-rank test used to compare score distributions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::field::FlowField;
use crate::par::blocked_sum;

/// Norms below this make the correlation undefined.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// Which pixels take part in a score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskPolicy {
    /// Pixels valid in both fields.
    Intersection,
    /// Pixels valid in the target; invalid predictions count as zero vectors.
    #[default]
    TargetDisk,
    /// Every pixel; invalid vectors count as zero.
    FullFrame,
}

/// Pixel selection shared by all metrics.
struct Pairs<'a> {
    p: &'a FlowField,
    r: &'a FlowField,
    policy: MaskPolicy,
}

impl<'a> Pairs<'a> {
    fn new(p: &'a FlowField, r: &'a FlowField, policy: MaskPolicy) -> Result<Self> {
        p.check_consistent()?;
        r.check_consistent()?;
        ensure!(
            p.width == r.width && p.height == r.height,
            Data,
            "dimension mismatch: {}x{} vs {}x{}",
            p.width,
            p.height,
            r.width,
            r.height
        );
        Ok(Self { p, r, policy })
    }

    #[inline]
    fn get(&self, i: usize) -> Option<[f64; 4]> {
        let (pv, rv) = (self.p.valid[i], self.r.valid[i]);
        let take = match self.policy {
            MaskPolicy::Intersection => pv && rv,
            MaskPolicy::TargetDisk => rv,
            MaskPolicy::FullFrame => true,
        };
        if !take {
            return None;
        }
        let (pu, pvv) = if pv {
            (self.p.u[i], self.p.v[i])
        } else {
            (0.0, 0.0)
        };
        let (ru, rvv) = if rv {
            (self.r.u[i], self.r.v[i])
        } else {
            (0.0, 0.0)
        };
        Some([pu, pvv, ru, rvv])
    }

    fn sum<F: Fn([f64; 4]) -> f64 + Sync + Send>(&self, f: F) -> f64 {
        blocked_sum(self.p.len(), |i| self.get(i).map_or(0.0, &f))
    }

    fn count(&self) -> usize {
        (0..self.p.len()).filter(|&i| self.get(i).is_some()).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub rho: f64,
    /// Either field had a Frobenius norm below [`DEGENERATE_NORM`]; `rho` is 0.
    pub degenerate: bool,
}

fn corr_pairs(pairs: &Pairs) -> Correlation {
    let dot = pairs.sum(|[pu, pv, ru, rv]| pu * ru + pv * rv);
    let np = pairs.sum(|[pu, pv, _, _]| pu * pu + pv * pv).sqrt();
    let nr = pairs.sum(|[_, _, ru, rv]| ru * ru + rv * rv).sqrt();
    if np < DEGENERATE_NORM || nr < DEGENERATE_NORM {
        return Correlation {
            rho: 0.0,
            degenerate: true,
        };
    }
    Correlation {
        rho: (dot / (np * nr)).clamp(-1.0, 1.0),
        degenerate: false,
    }
}

fn epe_pairs(pairs: &Pairs) -> Result<f64> {
    let n = pairs.count();
    ensure!(n > 0, Data, "no valid pixels to score");
    Ok(pairs.sum(|[pu, pv, ru, rv]| (pu - ru).hypot(pv - rv)) / n as f64)
}

/// Angle between (1, u, v) and (1, u*, v*), argument clamped to [-1, 1].
#[inline]
pub fn angular_error(u: f64, v: f64, ur: f64, vr: f64) -> f64 {
    let num = 1.0 + u * ur + v * vr;
    let den = (1.0 + u * u + v * v).sqrt() * (1.0 + ur * ur + vr * vr).sqrt();
    (num / den).clamp(-1.0, 1.0).acos()
}

fn ae_pairs(pairs: &Pairs) -> Result<f64> {
    let n = pairs.count();
    ensure!(n > 0, Data, "no valid pixels to score");
    Ok(pairs.sum(|[pu, pv, ru, rv]| angular_error(pu, pv, ru, rv)) / n as f64)
}

/// Normalized correlation over pixels valid in both fields.
pub fn corr(p: &FlowField, r: &FlowField) -> Result<Correlation> {
    Ok(corr_pairs(&Pairs::new(p, r, MaskPolicy::Intersection)?))
}

/// Mean endpoint error over pixels valid in both fields.
pub fn epe(p: &FlowField, r: &FlowField) -> Result<f64> {
    epe_pairs(&Pairs::new(p, r, MaskPolicy::Intersection)?)
}

/// Mean angular error (radians) over pixels valid in both fields.
pub fn ae(p: &FlowField, r: &FlowField) -> Result<f64> {
    ae_pairs(&Pairs::new(p, r, MaskPolicy::Intersection)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    /// Aggregation keys; always includes `model`, `stimulus` and `condition`.
    pub keys: BTreeMap<String, String>,
    pub rho: f64,
    pub rho_degenerate: bool,
    pub mean_epe: f64,
    pub mean_ae: f64,
    pub n_valid: usize,
}

impl ScoreReport {
    pub fn key(&self, k: &str) -> Option<&str> {
        self.keys.get(k).map(String::as_str)
    }
}

/// All three metrics under one mask policy.
pub fn score(
    p: &FlowField,
    r: &FlowField,
    policy: MaskPolicy,
    keys: BTreeMap<String, String>,
) -> Result<ScoreReport> {
    let pairs = Pairs::new(p, r, policy)?;
    let c = corr_pairs(&pairs);
    Ok(ScoreReport {
        keys,
        rho: c.rho,
        rho_degenerate: c.degenerate,
        mean_epe: epe_pairs(&pairs)?,
        mean_ae: ae_pairs(&pairs)?,
        n_valid: pairs.count(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    Greater,
    Less,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Sum of ranks of the positive samples.
    pub w_plus: f64,
    /// Sample count after dropping zeros.
    pub n: usize,
    pub p_value: f64,
    pub exact: bool,
}

/// Largest sample size evaluated with the exact null distribution.
pub const WILCOXON_EXACT_MAX_N: usize = 25;

/// Tie-averaged ranks of `|x|`, doubled so they are integers.
pub fn doubled_ranks(abs: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..abs.len()).collect();
    order.sort_by(|&a, &b| abs[a].total_cmp(&abs[b]));
    let mut ranks = vec![0u64; abs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && abs[order[j + 1]] == abs[order[i]] {
            j += 1;
        }
        // average of ranks i+1..=j+1, doubled
        let doubled = (i + 1 + j + 1) as u64;
        for &k in &order[i..=j] {
            ranks[k] = doubled;
        }
        i = j + 1;
    }
    ranks
}

/// One-sample signed-rank test of `samples` against zero. Zeros are dropped,
/// ties get averaged ranks. `Greater` tests for a positive location shift.
pub fn wilcoxon_one_sided(samples: &[f64], alternative: Alternative) -> Result<WilcoxonResult> {
    ensure!(
        samples.iter().all(|x| x.is_finite()),
        Parameter,
        "samples must be finite"
    );
    let nonzero: Vec<f64> = samples.iter().copied().filter(|&x| x != 0.0).collect();
    ensure!(!nonzero.is_empty(), Data, "all samples are zero");
    ensure!(
        nonzero.len() >= 5,
        Parameter,
        "need at least 5 nonzero samples, got {}",
        nonzero.len()
    );
    let n = nonzero.len();
    let abs: Vec<f64> = nonzero.iter().map(|x| x.abs()).collect();
    let ranks = doubled_ranks(&abs);
    let w2: u64 = ranks
        .iter()
        .zip(&nonzero)
        .filter(|(_, &x)| x > 0.0)
        .map(|(&r, _)| r)
        .sum();
    let w_plus = w2 as f64 / 2.0;

    if n <= WILCOXON_EXACT_MAX_N {
        let total: u64 = ranks.iter().sum();
        let mut counts = vec![0u64; total as usize + 1];
        counts[0] = 1;
        let mut reach = 0usize;
        for &r in &ranks {
            let r = r as usize;
            for s in (0..=reach).rev() {
                if counts[s] > 0 {
                    counts[s + r] += counts[s];
                }
            }
            reach += r;
        }
        let hits: u64 = match alternative {
            Alternative::Greater => counts[w2 as usize..].iter().sum(),
            Alternative::Less => counts[..=w2 as usize].iter().sum(),
        };
        return Ok(WilcoxonResult {
            w_plus,
            n,
            p_value: hits as f64 / 2f64.powi(n as i32),
            exact: true,
        });
    }

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut tie_term = 0.0;
    let mut sorted = abs.clone();
    sorted.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    ensure!(var > 0.0, Data, "zero variance in signed-rank statistic");
    let sd = var.sqrt();
    let p_value = match alternative {
        Alternative::Greater => upper_tail((w_plus - mean - 0.5) / sd),
        Alternative::Less => upper_tail(-(w_plus - mean + 0.5) / sd),
    };
    Ok(WilcoxonResult {
        w_plus,
        n,
        p_value,
        exact: false,
    })
}

/// Paired variant on `x - y`.
pub fn wilcoxon_paired(x: &[f64], y: &[f64], alternative: Alternative) -> Result<WilcoxonResult> {
    ensure!(
        x.len() == y.len(),
        Parameter,
        "paired samples differ in length: {} vs {}",
        x.len(),
        y.len()
    );
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    wilcoxon_one_sided(&d, alternative)
}

/// P(Z >= z) for a standard normal, accurate far into the tail.
fn upper_tail(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(z / std::f64::consts::SQRT_2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub group: Vec<(String, String)>,
    pub count: usize,
    pub mean_rho: f64,
    pub mean_epe: f64,
    pub mean_ae: f64,
    pub n_degenerate: usize,
}

/// Grouped means, ordered by group key values.
pub fn aggregate(reports: &[ScoreReport], group_by: &[&str]) -> Result<Vec<AggregateRow>> {
    ensure!(!reports.is_empty(), Data, "nothing to aggregate");
    let schema: Vec<&String> = reports[0].keys.keys().collect();
    for r in reports {
        if r.keys.keys().ne(schema.iter().copied()) {
            return Err(Error::Data(format!(
                "inconsistent key schema: {:?} vs {:?}",
                r.keys.keys().collect::<Vec<_>>(),
                schema
            )));
        }
    }
    for k in group_by {
        ensure!(
            reports[0].keys.contains_key(*k),
            Data,
            "unknown group key {k:?}"
        );
    }
    let mut groups: BTreeMap<Vec<String>, Vec<&ScoreReport>> = BTreeMap::new();
    for r in reports {
        let key = group_by.iter().map(|k| r.keys[*k].clone()).collect();
        groups.entry(key).or_default().push(r);
    }
    Ok(groups
        .into_iter()
        .map(|(values, members)| {
            let n = members.len() as f64;
            AggregateRow {
                group: group_by
                    .iter()
                    .map(|k| k.to_string())
                    .zip(values)
                    .collect(),
                count: members.len(),
                mean_rho: members.iter().map(|r| r.rho).sum::<f64>() / n,
                mean_epe: members.iter().map(|r| r.mean_epe).sum::<f64>() / n,
                mean_ae: members.iter().map(|r| r.mean_ae).sum::<f64>() / n,
                n_degenerate: members.iter().filter(|r| r.rho_degenerate).count(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field(vals: &[(f64, f64)], w: usize) -> FlowField {
        let mut f = FlowField::zeros(w, vals.len() / w);
        for (i, &(u, v)) in vals.iter().enumerate() {
            f.u[i] = u;
            f.v[i] = v;
        }
        f
    }

    #[test]
    fn constant_offset_gives_epe_five() {
        let r = field(&[(1.0, 2.0), (-1.0, 0.5), (0.0, 0.0), (3.0, 3.0)], 2);
        let mut p = r.clone();
        p.u.iter_mut().for_each(|u| *u += 3.0);
        p.v.iter_mut().for_each(|v| *v += 4.0);
        assert!((epe(&p, &r).unwrap() - 5.0).abs() < 1e-12);
        assert_eq!(epe(&r, &r).unwrap(), 0.0);
    }

    #[test]
    fn unit_vs_zero_angular_error_is_quarter_pi() {
        let p = field(&[(1.0, 0.0)], 1);
        let r = field(&[(0.0, 0.0)], 1);
        assert!((ae(&p, &r).unwrap() - std::f64::consts::FRAC_PI_4).abs() < 1e-15);
    }

    #[test]
    fn degenerate_norm_flagged() {
        let p = FlowField::zeros(3, 3);
        let r = field(&[(1.0, 0.0); 9], 3);
        let c = corr(&p, &r).unwrap();
        assert!(c.degenerate);
        assert_eq!(c.rho, 0.0);
    }

    #[test]
    fn empty_mask_errors_for_epe_and_ae() {
        let mut p = FlowField::zeros(2, 2);
        p.valid.iter_mut().for_each(|b| *b = false);
        let r = FlowField::zeros(2, 2);
        assert!(matches!(epe(&p, &r), Err(Error::Data(_))));
        assert!(matches!(ae(&p, &r), Err(Error::Data(_))));
    }

    #[test]
    fn target_disk_policy_counts_invalid_prediction_as_zero() {
        let mut p = field(&[(1.0, 0.0), (1.0, 0.0)], 2);
        p.valid[1] = false;
        let r = field(&[(1.0, 0.0), (1.0, 0.0)], 2);
        let s = score(&p, &r, MaskPolicy::TargetDisk, BTreeMap::new()).unwrap();
        assert_eq!(s.n_valid, 2);
        assert!((s.mean_epe - 0.5).abs() < 1e-15);
        let s = score(&p, &r, MaskPolicy::Intersection, BTreeMap::new()).unwrap();
        assert_eq!(s.n_valid, 1);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        assert!(corr(&FlowField::zeros(2, 2), &FlowField::zeros(2, 3)).is_err());
    }

    #[test]
    fn all_positive_ten_gives_one_over_1024() {
        let x: Vec<f64> = (1..=10).map(|i| i as f64 * 0.3).collect();
        let r = wilcoxon_one_sided(&x, Alternative::Greater).unwrap();
        assert_eq!(r.p_value, 1.0 / 1024.0);
        assert!(r.exact);
        assert_eq!(r.w_plus, 55.0);
    }

    #[test]
    fn wilcoxon_rejects_small_and_zero_samples() {
        assert!(matches!(
            wilcoxon_one_sided(&[0.0; 8], Alternative::Greater),
            Err(Error::Data(_))
        ));
        assert!(matches!(
            wilcoxon_one_sided(&[1.0, 2.0, 0.0, 3.0], Alternative::Greater),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn tied_ranks_are_averaged() {
        assert_eq!(doubled_ranks(&[1.0, 2.0, 2.0, 3.0]), vec![2, 5, 5, 8]);
    }

    #[test]
    fn normal_branch_is_continuous_with_exact_branch() {
        // n = 26 just beyond the exact cutoff: compare to n = 25 exact on a
        // shifted sample; both should agree to within a few percent.
        let x: Vec<f64> = (0..26).map(|i| i as f64 - 8.5).collect();
        let approx = wilcoxon_one_sided(&x, Alternative::Greater).unwrap();
        let exact = wilcoxon_one_sided(&x[1..], Alternative::Greater).unwrap();
        assert!(!approx.exact && exact.exact);
        assert!(approx.p_value > 0.0 && approx.p_value < 0.05);
        assert!(exact.p_value < 0.05);
    }

    #[test]
    fn normal_tail_does_not_underflow_early() {
        let x: Vec<f64> = (1..=400).map(|i| i as f64).collect();
        let r = wilcoxon_one_sided(&x, Alternative::Greater).unwrap();
        assert!(r.p_value > 0.0 && r.p_value < 1e-60);
    }

    #[test]
    fn aggregate_means_and_schema() {
        let mk = |rho: f64, model: &str| ScoreReport {
            keys: [("model", model), ("stimulus", "s"), ("condition", "c")]
                .into_iter()
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .collect(),
            rho,
            rho_degenerate: false,
            mean_epe: 1.0,
            mean_ae: 0.5,
            n_valid: 4,
        };
        let rows = aggregate(&[mk(0.2, "a"), mk(0.4, "a")], &["model"]).unwrap();
        assert_eq!(rows.len(), 1);
        assert!((rows[0].mean_rho - 0.3).abs() < 1e-15);
        let single = aggregate(&[mk(0.7, "b")], &["model", "stimulus", "condition"]).unwrap();
        assert_eq!(single[0].mean_rho, 0.7);
        assert_eq!(single[0].count, 1);

        let mut odd = mk(0.1, "a");
        odd.keys.insert("extra".into(), "x".into());
        assert!(aggregate(&[mk(0.2, "a"), odd], &["model"]).is_err());
        assert!(aggregate(&[mk(0.2, "a")], &["nope"]).is_err());
    }
}
