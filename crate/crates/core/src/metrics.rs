//! Ranking metrics and the significance machinery used to compare runs.
//!
//! AUROC uses the midrank Mann-Whitney formulation, AUPRC is average
//! precision with tie groups collapsed, confidence intervals come from a
//! percentile bootstrap, and run-to-run comparisons use a pooled two-sample
//! t-test whose p-value is evaluated through the regularized incomplete beta
//! function (continued-fraction expansion, Lentz's method).

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mathx;

fn check_inputs(scores: &[f32], labels: &[f32], op: &'static str) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::shape(
            op,
            format!("{} scores vs {} labels", scores.len(), labels.len()),
        ));
    }
    if scores.is_empty() {
        return Err(Error::Contract(format!("{op}: empty input")));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("{op}: non-finite score")));
    }
    if labels.iter().any(|&l| l != 0.0 && l != 1.0) {
        return Err(Error::Contract(format!("{op}: labels must be 0 or 1")));
    }
    Ok(())
}

/// Midrank-based AUROC. Returns an error when either class is absent.
pub fn auroc(scores: &[f32], labels: &[f32]) -> Result<f64> {
    check_inputs(scores, labels, "auroc")?;
    let n_pos = labels.iter().filter(|&&l| l == 1.0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Contract(format!(
            "auroc undefined: {n_pos} positives, {n_neg} negatives"
        )));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    // midranks: tied scores all get the average of the ranks they span
    let mut ranks = alloc::vec![0.0f64; scores.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = midrank;
        }
        i = j + 1;
    }
    let rank_sum_pos: f64 = labels
        .iter()
        .zip(&ranks)
        .filter(|(&l, _)| l == 1.0)
        .map(|(_, &r)| r)
        .sum();
    let u = rank_sum_pos - (n_pos as f64) * (n_pos as f64 + 1.0) / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Average precision with ties collapsed into score groups: within a group
/// of equal scores, recall advances by the whole group before precision is
/// sampled, so permuting equal-scored items cannot change the result.
pub fn auprc(scores: &[f32], labels: &[f32]) -> Result<f64> {
    check_inputs(scores, labels, "auprc")?;
    let n_pos = labels.iter().filter(|&&l| l == 1.0).count();
    if n_pos == 0 {
        return Err(Error::Contract("auprc undefined: no positives".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let mut tp = 0.0f64;
    let mut seen = 0.0f64;
    let mut ap = 0.0f64;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        let mut group_pos = 0.0f64;
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            if labels[idx[j]] == 1.0 {
                group_pos += 1.0;
            }
            j += 1;
        }
        tp += group_pos;
        seen += (j - i) as f64;
        let precision = tp / seen;
        ap += precision * group_pos;
        i = j;
    }
    Ok(ap / n_pos as f64)
}

/// Percentile bootstrap confidence interval around a metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
    pub resamples: usize,
}

/// Percentile bootstrap over cases: resample (score, label) pairs with
/// replacement `n_resamples` times, recompute the metric, and take the
/// empirical 2.5%/97.5% percentiles. Resamples on which the metric is
/// undefined (single-class draws) are redrawn; if more than half of the
/// attempts are undefined the interval is reported as an error instead.
pub fn bootstrap_ci<F>(
    scores: &[f32],
    labels: &[f32],
    metric: F,
    n_resamples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<BootstrapCi>
where
    F: Fn(&[f32], &[f32]) -> Result<f64>,
{
    if n_resamples == 0 {
        return Err(Error::Contract("bootstrap needs at least one resample".into()));
    }
    let point = metric(scores, labels)?;
    let n = scores.len();
    let mut stats = Vec::with_capacity(n_resamples);
    let mut failures = 0usize;
    let mut s_buf = alloc::vec![0.0f32; n];
    let mut l_buf = alloc::vec![0.0f32; n];
    while stats.len() < n_resamples {
        for i in 0..n {
            let j = rng.gen_range(0..n);
            s_buf[i] = scores[j];
            l_buf[i] = labels[j];
        }
        match metric(&s_buf, &l_buf) {
            Ok(v) => stats.push(v),
            Err(_) => {
                failures += 1;
                if failures > (n_resamples + failures) / 2 {
                    return Err(Error::Contract(format!(
                        "bootstrap degenerate: {failures} undefined resamples"
                    )));
                }
            }
        }
    }
    stats.sort_by(|a, b| a.partial_cmp(b).unwrap());
    // ceil(0.025 n)-th and ceil(0.975 n)-th order statistics (1-indexed)
    let lo_idx = ceil_frac(n_resamples, 25, 1000) - 1;
    let hi_idx = ceil_frac(n_resamples, 975, 1000) - 1;
    Ok(BootstrapCi {
        point,
        lo: stats[lo_idx],
        hi: stats[hi_idx],
        resamples: n_resamples,
    })
}

/// ceil(n * num / den) in exact integer arithmetic.
fn ceil_frac(n: usize, num: usize, den: usize) -> usize {
    (n * num + den - 1) / den
}

/// Result of a pooled two-sample t-test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    /// Two-sided p-value.
    pub p: f64,
    pub mean_a: f64,
    pub mean_b: f64,
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Pooled-variance (Student) two-sample t-test, two-sided.
pub fn two_sample_ttest(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Contract(format!(
            "t-test needs >=2 samples per group, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("t-test input".into()));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let na = a.len() as f64;
    let nb = b.len() as f64;
    let df = na + nb - 2.0;
    let pooled = ((na - 1.0) * va + (nb - 1.0) * vb) / df;
    if pooled <= 0.0 {
        // both groups constant: identical means -> p = 1, else p = 0
        let p = if ma == mb { 1.0 } else { 0.0 };
        let t = if ma == mb { 0.0 } else { f64::INFINITY * (ma - mb).signum() };
        return Ok(TTest {
            t,
            df,
            p,
            mean_a: ma,
            mean_b: mb,
        });
    }
    let se = mathx::sqrt(pooled * (1.0 / na + 1.0 / nb));
    let t = (ma - mb) / se;
    let p = student_t_two_sided_p(t, df);
    Ok(TTest {
        t,
        df,
        p,
        mean_a: ma,
        mean_b: mb,
    })
}

/// Two-sided p-value of Student's t: P(|T| >= |t|) = I_{df/(df+t^2)}(df/2, 1/2).
pub fn student_t_two_sided_p(t: f64, df: f64) -> f64 {
    let x = df / (df + t * t);
    reg_inc_beta(df / 2.0, 0.5, x)
}

/// Regularized incomplete beta function I_x(a, b) via the Lentz continued
/// fraction, using the symmetry I_x(a,b) = 1 - I_{1-x}(b,a) to stay in the
/// rapidly converging region.
pub fn reg_inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front =
        mathx::ln_gamma(a + b) - mathx::ln_gamma(a) - mathx::ln_gamma(b) + a * mathx::ln(x)
            + b * mathx::ln(1.0 - x);
    let front = mathx::exp(ln_front);
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const EPS: f64 = 1e-14;
    const TINY: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        // even step
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        // odd step
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Per-class and macro metric summary for one evaluation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub split: String,
    pub class_auroc: Vec<f64>,
    pub class_auprc: Vec<f64>,
    pub macro_auroc: f64,
    pub macro_auprc: f64,
    pub auroc_ci: Option<Vec<BootstrapCi>>,
    pub auprc_ci: Option<Vec<BootstrapCi>>,
}

/// Compute per-class AUROC/AUPRC (and optional bootstrap CIs) for multi-hot
/// predictions laid out as `scores[case][class]`.
pub fn eval_report(
    model: &str,
    split: &str,
    scores: &[Vec<f32>],
    labels: &[Vec<f32>],
    bootstrap: Option<(usize, &mut ChaCha8Rng)>,
) -> Result<EvalReport> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::Contract(format!(
            "eval: {} score rows vs {} label rows",
            scores.len(),
            labels.len()
        )));
    }
    let classes = scores[0].len();
    if classes == 0 || labels[0].len() != classes {
        return Err(Error::Contract("eval: class-count mismatch".into()));
    }
    let mut class_auroc = Vec::with_capacity(classes);
    let mut class_auprc = Vec::with_capacity(classes);
    let mut auroc_ci = Vec::new();
    let mut auprc_ci = Vec::new();
    let mut boot = bootstrap;
    for c in 0..classes {
        let s: Vec<f32> = scores.iter().map(|row| row[c]).collect();
        let l: Vec<f32> = labels.iter().map(|row| row[c]).collect();
        class_auroc.push(auroc(&s, &l)?);
        class_auprc.push(auprc(&s, &l)?);
        if let Some((n, rng)) = boot.as_mut() {
            auroc_ci.push(bootstrap_ci(&s, &l, auroc, *n, rng)?);
            auprc_ci.push(bootstrap_ci(&s, &l, auprc, *n, rng)?);
        }
    }
    let macro_auroc = class_auroc.iter().sum::<f64>() / classes as f64;
    let macro_auprc = class_auprc.iter().sum::<f64>() / classes as f64;
    Ok(EvalReport {
        model: String::from(model),
        split: String::from(split),
        class_auroc,
        class_auprc,
        macro_auroc,
        macro_auprc,
        auroc_ci: if auroc_ci.is_empty() { None } else { Some(auroc_ci) },
        auprc_ci: if auprc_ci.is_empty() { None } else { Some(auprc_ci) },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn auroc_matches_pair_counting_oracle() {
        // oracle: count concordant pairs + half ties over all pos/neg pairs
        let scores = [0.1f32, 0.4, 0.35, 0.8, 0.4, 0.9];
        let labels = [0.0f32, 0.0, 1.0, 1.0, 1.0, 0.0];
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for (i, &li) in labels.iter().enumerate() {
            if li != 1.0 {
                continue;
            }
            for (j, &lj) in labels.iter().enumerate() {
                if lj != 0.0 {
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
        let got = auroc(&scores, &labels).unwrap();
        assert!((got - num / den).abs() < 1e-12, "{got} vs {}", num / den);
    }

    #[test]
    fn auroc_perfect_and_inverted() {
        let labels = [0.0f32, 0.0, 1.0, 1.0];
        assert_eq!(auroc(&[0.1, 0.2, 0.3, 0.4], &labels).unwrap(), 1.0);
        assert_eq!(auroc(&[0.4, 0.3, 0.2, 0.1], &labels).unwrap(), 0.0);
        // constant scores: all pairs tied -> 0.5
        assert_eq!(auroc(&[0.5, 0.5, 0.5, 0.5], &labels).unwrap(), 0.5);
    }

    #[test]
    fn auroc_invariant_to_monotone_transform() {
        let scores = [0.11f32, 0.52, 0.37, 0.81, 0.44, 0.93, 0.2];
        let labels = [0.0f32, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0];
        let base = auroc(&scores, &labels).unwrap();
        let warped: Vec<f32> = scores.iter().map(|&s| mathx::expf(3.0 * s) - 2.0).collect();
        let got = auroc(&warped, &labels).unwrap();
        assert!((base - got).abs() < 1e-12);
    }

    #[test]
    fn auroc_single_class_is_error() {
        assert!(auroc(&[0.1, 0.2], &[1.0, 1.0]).is_err());
        assert!(auroc(&[0.1, 0.2], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn auprc_hand_oracle() {
        // descending: (0.9,1) (0.8,0) (0.7,1) (0.6,0)
        // AP = (1/1 * 1 + 2/3 * 1) / 2 = 5/6
        let got = auprc(&[0.9, 0.8, 0.7, 0.6], &[1.0, 0.0, 1.0, 0.0]).unwrap();
        assert!((got - 5.0 / 6.0).abs() < 1e-12, "{got}");
    }

    #[test]
    fn auprc_tie_group_is_permutation_invariant() {
        // two items share score 0.5, one pos one neg; both orders identical
        let a = auprc(&[0.9, 0.5, 0.5], &[1.0, 1.0, 0.0]).unwrap();
        let b = auprc(&[0.9, 0.5, 0.5], &[1.0, 0.0, 1.0]).unwrap();
        assert_eq!(a, b);
        // collapsed group: after rank 3 tp=2 seen=3, AP=(1 + 2/3)/2
        assert!((a - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn auprc_all_positives_ranked_first_is_one() {
        let got = auprc(&[0.9, 0.8, 0.2, 0.1], &[1.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(got, 1.0);
    }

    #[test]
    fn bootstrap_percentile_indices() {
        // n=1000: lo = ceil(25)=25 -> index 24, hi = ceil(975)=975 -> index 974
        assert_eq!(ceil_frac(1000, 25, 1000), 25);
        assert_eq!(ceil_frac(1000, 975, 1000), 975);
        // n=100: lo = ceil(2.5)=3 -> index 2, hi = ceil(97.5)=98 -> index 97
        assert_eq!(ceil_frac(100, 25, 1000), 3);
        assert_eq!(ceil_frac(100, 975, 1000), 98);
    }

    #[test]
    fn bootstrap_interval_brackets_point_on_clean_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 200;
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let l = (i % 2) as f32;
            scores.push(0.3 * l + 0.35 + ((i * 37 % 100) as f32) / 500.0);
            labels.push(l);
        }
        let ci = bootstrap_ci(&scores, &labels, auroc, 500, &mut rng).unwrap();
        assert!(ci.lo <= ci.point && ci.point <= ci.hi, "{ci:?}");
        assert!(ci.hi - ci.lo < 0.3);
    }

    #[test]
    fn bootstrap_is_deterministic_per_seed() {
        let scores = [0.2f32, 0.9, 0.4, 0.7, 0.1, 0.8];
        let labels = [0.0f32, 1.0, 0.0, 1.0, 0.0, 1.0];
        let a = bootstrap_ci(&scores, &labels, auroc, 200, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = bootstrap_ci(&scores, &labels, auroc, 200, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ttest_matches_reference_values() {
        // {1,2,3} vs {2,3,4}: t = -1.224745, p = 0.287940 at df=4
        let r = two_sample_ttest(&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0]).unwrap();
        assert!((r.t - (-1.224_744_871)).abs() < 1e-6, "t={}", r.t);
        assert!((r.p - 0.287_939_6).abs() < 1e-4, "p={}", r.p);
        assert_eq!(r.df, 4.0);
    }

    #[test]
    fn ttest_identical_groups_p_one() {
        let r = two_sample_ttest(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(r.t, 0.0);
        assert!((r.p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ttest_constant_groups() {
        let same = two_sample_ttest(&[2.0, 2.0], &[2.0, 2.0]).unwrap();
        assert_eq!(same.p, 1.0);
        let diff = two_sample_ttest(&[1.0, 1.0], &[2.0, 2.0]).unwrap();
        assert_eq!(diff.p, 0.0);
    }

    #[test]
    fn inc_beta_reference_points() {
        // I_0.5(0.5, 0.5) = 0.5 by symmetry
        assert!((reg_inc_beta(0.5, 0.5, 0.5) - 0.5).abs() < 1e-10);
        // I_x(1, 1) = x
        assert!((reg_inc_beta(1.0, 1.0, 0.3) - 0.3).abs() < 1e-12);
        // I_x(2, 1) = x^2
        assert!((reg_inc_beta(2.0, 1.0, 0.7) - 0.49).abs() < 1e-12);
    }

    #[test]
    fn eval_report_macro_average() {
        let scores = alloc::vec![
            alloc::vec![0.9f32, 0.1],
            alloc::vec![0.8, 0.7],
            alloc::vec![0.2, 0.4],
            alloc::vec![0.1, 0.9],
        ];
        let labels = alloc::vec![
            alloc::vec![1.0f32, 0.0],
            alloc::vec![1.0, 1.0],
            alloc::vec![0.0, 0.0],
            alloc::vec![0.0, 1.0],
        ];
        let rep = eval_report("m", "test", &scores, &labels, None).unwrap();
        assert_eq!(rep.class_auroc.len(), 2);
        let expect = (rep.class_auroc[0] + rep.class_auroc[1]) / 2.0;
        assert_eq!(rep.macro_auroc, expect);
    }
}
