//! Dataset ranking statistics, zero-shot transfer and compute accounting.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::curvefit::FittedCurve;
use crate::scoring::Orientation;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetScore {
    pub dataset: String,
    pub proxy_value: f64,
    pub proxy_orientation: Orientation,
    /// Target metric, always higher-better.
    pub target_value: f64,
}

impl DatasetScore {
    pub fn new(
        dataset: impl Into<String>,
        proxy_value: f64,
        proxy_orientation: Orientation,
        target_value: f64,
    ) -> Self {
        Self {
            dataset: dataset.into(),
            proxy_value,
            proxy_orientation,
            target_value,
        }
    }
}

fn check_scores(scores: &[DatasetScore]) -> Result<()> {
    if scores.len() < 2 {
        return Err(Error::invalid(format!(
            "ranking needs at least 2 datasets, got {}",
            scores.len()
        )));
    }
    if scores
        .iter()
        .any(|s| !(s.proxy_value.is_finite() && s.target_value.is_finite()))
    {
        return Err(Error::invalid("non-finite dataset score"));
    }
    if scores
        .windows(2)
        .any(|w| w[0].proxy_orientation != w[1].proxy_orientation)
    {
        return Err(Error::invalid("mixed proxy orientations"));
    }
    Ok(())
}

fn sign(o: Ordering) -> i8 {
    match o {
        Ordering::Less => -1,
        Ordering::Equal => 0,
        Ordering::Greater => 1,
    }
}

/// Orientation-adjusted comparison of the proxy for datasets `a` and `b`.
fn proxy_cmp(a: &DatasetScore, b: &DatasetScore) -> Ordering {
    let ord = a.proxy_value.partial_cmp(&b.proxy_value).unwrap_or(Ordering::Equal);
    match a.proxy_orientation {
        Orientation::HigherBetter => ord,
        Orientation::LowerBetter => ord.reverse(),
    }
}

fn target_cmp(a: &DatasetScore, b: &DatasetScore) -> Ordering {
    a.target_value.partial_cmp(&b.target_value).unwrap_or(Ordering::Equal)
}

/// Outcome for one unordered pair of datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDecision {
    pub a: String,
    pub b: String,
    /// +1 if the proxy prefers `a`, -1 if `b`, 0 if tied.
    pub proxy_prefers: i8,
    pub target_prefers: i8,
    pub correct: bool,
}

/// Every unordered pair with its decision, in `(i, j)` lexicographic order.
pub fn pair_decisions(scores: &[DatasetScore]) -> Result<Vec<PairDecision>> {
    check_scores(scores)?;
    let mut out = Vec::with_capacity(scores.len() * (scores.len() - 1) / 2);
    for i in 0..scores.len() {
        for j in i + 1..scores.len() {
            let p = sign(proxy_cmp(&scores[i], &scores[j]));
            let t = sign(target_cmp(&scores[i], &scores[j]));
            out.push(PairDecision {
                a: scores[i].dataset.clone(),
                b: scores[j].dataset.clone(),
                proxy_prefers: p,
                target_prefers: t,
                // proxy ties with distinct targets count as wrong
                correct: p == t,
            });
        }
    }
    Ok(out)
}

/// Fraction of dataset pairs the proxy orders the same way as the target.
pub fn decision_accuracy(scores: &[DatasetScore]) -> Result<f64> {
    let pairs = pair_decisions(scores)?;
    let correct = pairs.iter().filter(|p| p.correct).count();
    Ok(correct as f64 / pairs.len() as f64)
}

/// Kendall's tau-b between orientation-adjusted proxy values and targets.
pub fn kendall_tau(scores: &[DatasetScore]) -> Result<f64> {
    check_scores(scores)?;
    let (mut concordant, mut discordant) = (0i64, 0i64);
    let (mut only_x, mut only_y) = (0i64, 0i64);
    for i in 0..scores.len() {
        for j in i + 1..scores.len() {
            let dx = sign(proxy_cmp(&scores[i], &scores[j]));
            let dy = sign(target_cmp(&scores[i], &scores[j]));
            match (dx, dy) {
                (0, 0) => {}
                (0, _) => only_x += 1,
                (_, 0) => only_y += 1,
                _ if dx == dy => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let denom_x = concordant + discordant + only_y;
    let denom_y = concordant + discordant + only_x;
    if denom_x == 0 || denom_y == 0 {
        return Err(Error::UndefinedCorrelation(
            "all values tied in the proxy or the target".into(),
        ));
    }
    Ok((concordant - discordant) as f64 / ((denom_x as f64) * (denom_y as f64)).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferPrediction {
    pub proxy_value: f64,
    pub predicted: f64,
    /// Set when the proxy value lies outside twice the training x-range.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// Applies a curve fitted on one pre-training dataset to a proxy value from
/// another, without refitting.
pub fn zero_shot_transfer(curve: &FittedCurve, proxy_value: f64) -> Result<TransferPrediction> {
    if !proxy_value.is_finite() {
        return Err(Error::invalid("non-finite proxy value"));
    }
    let predicted = curve.predict(proxy_value);
    if !predicted.is_finite() {
        return Err(Error::Data(format!(
            "{} curve is not finite at x = {proxy_value}",
            curve.family.name()
        )));
    }
    let half = (curve.x_max - curve.x_min) / 2.0;
    let centre = (curve.x_max + curve.x_min) / 2.0;
    let warning = ((proxy_value - centre).abs() > 2.0 * half).then(|| {
        format!(
            "proxy value {proxy_value} outside twice the training range [{}, {}]",
            curve.x_min, curve.x_max
        )
    });
    Ok(TransferPrediction {
        proxy_value,
        predicted,
        warning,
    })
}

/// Conventional training compute: `6 * params * tokens`.
pub fn flops_estimate(params: u64, tokens: u64) -> f64 {
    6.0 * params as f64 * tokens as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComputePoint {
    pub model_params: u64,
    pub trained_tokens: u64,
    pub flops: f64,
    pub dacc: f64,
}

impl ComputePoint {
    pub fn new(model_params: u64, trained_tokens: u64, dacc: f64) -> Self {
        Self {
            model_params,
            trained_tokens,
            flops: flops_estimate(model_params, trained_tokens),
            dacc,
        }
    }

    /// At most the compute and at least the accuracy, strictly better in one.
    pub fn dominates(&self, other: &ComputePoint) -> bool {
        self.flops <= other.flops && self.dacc >= other.dacc && (self.flops < other.flops || self.dacc > other.dacc)
    }
}

/// Indices of the non-dominated points, sorted by FLOPs ascending (ties by
/// accuracy descending, then input order).
pub fn pareto_indices(points: &[ComputePoint]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..points.len())
        .filter(|&i| !points.iter().any(|q| q.dominates(&points[i])))
        .collect();
    idx.sort_by(|&a, &b| {
        points[a]
            .flops
            .total_cmp(&points[b].flops)
            .then(points[b].dacc.total_cmp(&points[a].dacc))
            .then(a.cmp(&b))
    });
    idx
}

pub fn pareto_frontier(points: &[ComputePoint]) -> Vec<ComputePoint> {
    pareto_indices(points).into_iter().map(|i| points[i].clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curvefit::FamilyKind;
    use proptest::prelude::*;

    fn hi(d: &str, p: f64, t: f64) -> DatasetScore {
        DatasetScore::new(d, p, Orientation::HigherBetter, t)
    }

    #[test]
    fn one_swapped_pair() {
        let s = [hi("A", 3.0, 3.0), hi("B", 2.0, 1.0), hi("C", 1.0, 2.0)];
        assert!((decision_accuracy(&s).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((kendall_tau(&s).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn identical_and_reversed() {
        let same = [hi("A", 1.0, 10.0), hi("B", 2.0, 20.0), hi("C", 3.0, 30.0)];
        assert_eq!(decision_accuracy(&same).unwrap(), 1.0);
        assert_eq!(kendall_tau(&same).unwrap(), 1.0);
        let rev = [hi("A", 3.0, 10.0), hi("B", 2.0, 20.0), hi("C", 1.0, 30.0)];
        assert_eq!(kendall_tau(&rev).unwrap(), -1.0);
        assert_eq!(decision_accuracy(&rev).unwrap(), 0.0);
    }

    #[test]
    fn lower_better_orientation() {
        let s: Vec<_> = (0..5)
            .map(|i| DatasetScore::new(format!("d{i}"), 5.0 - i as f64, Orientation::LowerBetter, i as f64))
            .collect();
        assert_eq!(decision_accuracy(&s).unwrap(), 1.0);
        assert_eq!(kendall_tau(&s).unwrap(), 1.0);
    }

    #[test]
    fn ties() {
        // proxy tie with distinct targets is wrong; double tie is right
        let s = [hi("A", 1.0, 1.0), hi("B", 1.0, 2.0)];
        assert_eq!(decision_accuracy(&s).unwrap(), 0.0);
        let s = [hi("A", 1.0, 1.0), hi("B", 1.0, 1.0), hi("C", 2.0, 3.0)];
        assert_eq!(decision_accuracy(&s).unwrap(), 1.0);
        assert!(matches!(
            kendall_tau(&[hi("A", 1.0, 1.0), hi("B", 1.0, 2.0)]),
            Err(Error::UndefinedCorrelation(_))
        ));
    }

    #[test]
    fn too_few_datasets() {
        assert!(decision_accuracy(&[hi("A", 1.0, 1.0)]).is_err());
        assert!(kendall_tau(&[]).is_err());
    }

    fn linear_curve() -> FittedCurve {
        FittedCurve {
            family: FamilyKind::Linear,
            coefficients: vec![3.0, -2.0],
            train_r2: 1.0,
            x_min: 0.0,
            x_max: 2.0,
        }
    }

    #[test]
    fn transfer_is_plain_evaluation() {
        let t = zero_shot_transfer(&linear_curve(), 1.5).unwrap();
        assert_eq!(t.predicted, 2.5);
        assert!(t.warning.is_none());
        // twice the range [0, 2] around its centre is [-1, 3]
        assert!(zero_shot_transfer(&linear_curve(), 3.0).unwrap().warning.is_none());
        let far = zero_shot_transfer(&linear_curve(), 3.5).unwrap();
        assert_eq!(far.predicted, 8.5);
        assert!(far.warning.is_some());
    }

    #[test]
    fn flops() {
        assert_eq!(flops_estimate(1_000_000, 1_000_000), 6e12);
        assert_eq!(flops_estimate(0, 123), 0.0);
        assert_eq!(flops_estimate(7, 20), 2.0 * flops_estimate(7, 10));
    }

    #[test]
    fn pareto_basics() {
        let p = ComputePoint::new(10, 10, 0.5);
        assert_eq!(pareto_frontier(std::slice::from_ref(&p)), vec![p.clone()]);
        let dominated = ComputePoint::new(10, 20, 0.4);
        let front = pareto_frontier(&[dominated, p.clone(), ComputePoint::new(10, 30, 0.9)]);
        assert_eq!(front.len(), 2);
        assert_eq!(front[0], p);
    }

    fn brute_front(points: &[ComputePoint]) -> Vec<usize> {
        let mut keep = Vec::new();
        for (i, p) in points.iter().enumerate() {
            let mut dominated = false;
            for q in points {
                let no_worse = q.flops <= p.flops && q.dacc >= p.dacc;
                let strictly = q.flops < p.flops || q.dacc > p.dacc;
                dominated |= no_worse && strictly;
            }
            if !dominated {
                keep.push(i);
            }
        }
        keep
    }

    proptest! {
        #[test]
        fn pareto_matches_brute_force(raw in prop::collection::vec((1u64..20, 1u64..20, 0u32..10), 1..12)) {
            let points: Vec<ComputePoint> = raw.iter().map(|(n, d, a)| ComputePoint::new(*n, *d, f64::from(*a) / 10.0)).collect();
            let mut fast = pareto_indices(&points);
            fast.sort_unstable();
            prop_assert_eq!(fast, brute_front(&points));
            let front = pareto_frontier(&points);
            for a in &front {
                for b in &front {
                    prop_assert!(!a.dominates(b));
                }
            }
            let best = points.iter().map(|p| p.dacc).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(front.iter().any(|p| p.dacc == best));
            prop_assert!(front.windows(2).all(|w| w[0].flops <= w[1].flops));
        }

        #[test]
        fn negated_target_complements_dacc(vals in prop::collection::btree_set(0u32..1000, 2..10), targets in prop::collection::btree_set(0u32..1000, 10)) {
            let targets: Vec<u32> = targets.into_iter().collect();
            let scores: Vec<DatasetScore> = vals.iter().enumerate()
                .map(|(i, v)| hi(&format!("d{i}"), f64::from(*v), f64::from(targets[(i * 7) % targets.len()])))
                .collect();
            prop_assume!({
                let mut t: Vec<u32> = scores.iter().map(|s| s.target_value as u32).collect();
                t.sort_unstable();
                t.windows(2).all(|w| w[0] != w[1])
            });
            let neg: Vec<DatasetScore> = scores.iter().map(|s| hi(&s.dataset, s.proxy_value, -s.target_value)).collect();
            let a = decision_accuracy(&scores).unwrap();
            let b = decision_accuracy(&neg).unwrap();
            prop_assert!((a - (1.0 - b)).abs() < 1e-12);
        }
    }
}
