//! Proxy-to-target curve fitting over a fixed set of four families, with
//! selection by training R² and k-fold cross-validation.
//!
//! | family      | model                 | coefficients |
//! |-------------|-----------------------|--------------|
//! | linear      | `a*x + b`             | `[a, b]`     |
//! | logarithmic | `a*ln(x) + b`         | `[a, b]`     |
//! | quadratic   | `a*x^2 + b*x + c`     | `[a, b, c]`  |
//! | exponential | `a*exp(b*x) + c`      | `[a, b, c]`  |
//!
//! Polynomial families are solved with normal equations on a centred and
//! range-scaled abscissa. The exponential family uses a deterministic grid
//! over the rate followed by Gauss-Newton refinement, so no fit depends on a
//! random start.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Pivots smaller than this (on scaled normal equations) mean a singular system.
pub const PIVOT_TOLERANCE: f64 = 1e-12;
/// R² values closer than this are treated as tied during selection.
pub const R2_TIE_TOLERANCE: f64 = 1e-12;

const GN_STEPS: usize = 20;
const GN_HALVINGS: usize = 30;

/// Declaration order is the tie-break order of [`select_best`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    Linear,
    Logarithmic,
    Quadratic,
    Exponential,
}

impl FamilyKind {
    pub const ALL: [FamilyKind; 4] = [
        FamilyKind::Linear,
        FamilyKind::Logarithmic,
        FamilyKind::Quadratic,
        FamilyKind::Exponential,
    ];

    pub fn coefficient_count(self) -> usize {
        match self {
            FamilyKind::Linear | FamilyKind::Logarithmic => 2,
            FamilyKind::Quadratic | FamilyKind::Exponential => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FamilyKind::Linear => "linear",
            FamilyKind::Logarithmic => "logarithmic",
            FamilyKind::Quadratic => "quadratic",
            FamilyKind::Exponential => "exponential",
        }
    }

    fn eval(self, c: &[f64], x: f64) -> f64 {
        match self {
            FamilyKind::Linear => c[0] * x + c[1],
            FamilyKind::Logarithmic => c[0] * x.ln() + c[1],
            FamilyKind::Quadratic => (c[0] * x + c[1]) * x + c[2],
            FamilyKind::Exponential => c[0] * (c[1] * x).exp() + c[2],
        }
    }
}

/// One (proxy metric, target metric) pair at equal trained tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitPoint {
    pub x: f64,
    pub y: f64,
    pub checkpoint_tokens: u64,
}

impl FitPoint {
    pub fn new(x: f64, y: f64) -> Self {
        Self {
            x,
            y,
            checkpoint_tokens: 0,
        }
    }

    fn total_cmp(&self, other: &Self) -> Ordering {
        self.x
            .total_cmp(&other.x)
            .then(self.y.total_cmp(&other.y))
            .then(self.checkpoint_tokens.cmp(&other.checkpoint_tokens))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedCurve {
    pub family: FamilyKind,
    pub coefficients: Vec<f64>,
    pub train_r2: f64,
    /// Training abscissa range, used for extrapolation warnings.
    pub x_min: f64,
    pub x_max: f64,
}

impl FittedCurve {
    pub fn predict(&self, x: f64) -> f64 {
        self.family.eval(&self.coefficients, x)
    }
}

pub fn predict(curve: &FittedCurve, x: f64) -> f64 {
    curve.predict(x)
}

fn check_lengths(y_true: &[f64], y_pred: &[f64]) -> Result<()> {
    if y_true.len() != y_pred.len() {
        return Err(Error::invalid(format!(
            "{} targets but {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    if y_true.is_empty() {
        return Err(Error::invalid("no values"));
    }
    Ok(())
}

/// `1 - SS_res/SS_tot`; with zero total variance, 1 for a perfect fit else 0.
pub fn r2(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    check_lengths(y_true, y_pred)?;
    let ss_res: f64 = y_true.iter().zip(y_pred).map(|(y, p)| (y - p) * (y - p)).sum();
    let ss_tot = if y_true.iter().all(|y| *y == y_true[0]) {
        0.0
    } else {
        let m = y_true.iter().sum::<f64>() / y_true.len() as f64;
        y_true.iter().map(|y| (y - m) * (y - m)).sum()
    };
    Ok(if ss_tot == 0.0 {
        if ss_res == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - ss_res / ss_tot
    })
}

pub fn mae(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    check_lengths(y_true, y_pred)?;
    Ok(y_true.iter().zip(y_pred).map(|(y, p)| (y - p).abs()).sum::<f64>() / y_true.len() as f64)
}

/// Gaussian elimination with partial pivoting.
fn solve<const N: usize>(mut a: [[f64; N]; N], mut b: [f64; N], tol: f64) -> Option<[f64; N]> {
    for col in 0..N {
        let pivot_row = (col..N).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        let pivot = a[pivot_row][col].abs();
        if pivot.is_nan() || pivot < tol {
            return None;
        }
        a.swap(col, pivot_row);
        b.swap(col, pivot_row);
        for row in col + 1..N {
            let f = a[row][col] / a[col][col];
            let pivot = a[col];
            for (dst, src) in a[row][col..].iter_mut().zip(&pivot[col..]) {
                *dst -= f * src;
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; N];
    for row in (0..N).rev() {
        let s: f64 = (row + 1..N).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Least-squares polynomial of degree `D - 1` in `u`, returned as
/// coefficients of `u^(D-1), ..., u, 1`.
fn poly_fit<const D: usize>(u: &[f64], y: &[f64]) -> Result<[f64; D]> {
    let n = u.len() as f64;
    if y.iter().all(|v| *v == y[0]) {
        let mut c = [0.0; D];
        c[D - 1] = y[0];
        return Ok(c);
    }
    let m = u.iter().sum::<f64>() / n;
    let s = u.iter().map(|v| (v - m).abs()).fold(0.0, f64::max);
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::DegenerateFit("abscissa has no spread".into()));
    }
    let y_ref = y.iter().sum::<f64>() / n;
    // Normal equations in t = (u - m) / s, powers 0..D, scaled by 1/n.
    let mut ata = [[0.0; D]; D];
    let mut aty = [0.0; D];
    for (&ui, &yi) in u.iter().zip(y) {
        let t = (ui - m) / s;
        let mut pows = [1.0; D];
        for k in 1..D {
            pows[k] = pows[k - 1] * t;
        }
        for i in 0..D {
            for j in 0..D {
                ata[i][j] += pows[i] * pows[j] / n;
            }
            aty[i] += pows[i] * (yi - y_ref) / n;
        }
    }
    let p = solve(ata, aty, PIVOT_TOLERANCE).ok_or_else(|| Error::DegenerateFit("singular normal equations".into()))?;
    // Expand sum_k p_k ((u - m)/s)^k into powers of u.
    let mut poly = [0.0; D]; // ascending powers of u
    let mut binom = [[0.0; D]; D];
    for k in 0..D {
        binom[k][0] = 1.0;
        for j in 1..=k {
            binom[k][j] = binom[k - 1][j - 1] + if j < k { binom[k - 1][j] } else { 0.0 };
        }
    }
    for k in 0..D {
        let scale = p[k] / s.powi(k as i32);
        for j in 0..=k {
            // (u - m)^k = sum_j C(k, j) u^j (-m)^(k - j)
            poly[j] += scale * binom[k][j] * (-m).powi((k - j) as i32);
        }
    }
    poly[0] += y_ref;
    let mut out = [0.0; D];
    for j in 0..D {
        out[j] = poly[D - 1 - j];
    }
    Ok(out)
}

fn sse(family: FamilyKind, c: &[f64], points: &[FitPoint]) -> f64 {
    points
        .iter()
        .map(|p| {
            let r = p.y - family.eval(c, p.x);
            r * r
        })
        .sum()
}

/// Rates tried before refinement: 0, then `±10^e` for 100 log-spaced
/// exponents in `[-4, 1]`, ordered by magnitude.
pub fn exponential_rate_grid() -> Vec<f64> {
    let mut grid = vec![0.0];
    for i in 0..100 {
        let mag = 10f64.powf(-4.0 + 5.0 * i as f64 / 99.0);
        grid.push(mag);
        grid.push(-mag);
    }
    grid
}

fn exp_linear_part(points: &[FitPoint], b: f64) -> Option<[f64; 3]> {
    let z: Vec<f64> = points.iter().map(|p| (b * p.x).exp()).collect();
    if z.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let y: Vec<f64> = points.iter().map(|p| p.y).collect();
    let [a, c] = poly_fit::<2>(&z, &y).ok()?;
    Some([a, b, c])
}

fn gauss_newton(points: &[FitPoint], start: [f64; 3]) -> [f64; 3] {
    let mut c = start;
    let mut cur = sse(FamilyKind::Exponential, &c, points);
    for _ in 0..GN_STEPS {
        let mut jtj = [[0.0; 3]; 3];
        let mut jtr = [0.0; 3];
        for p in points {
            let e = (c[1] * p.x).exp();
            let grad = [e, c[0] * p.x * e, 1.0];
            let r = p.y - (c[0] * e + c[2]);
            for i in 0..3 {
                for j in 0..3 {
                    jtj[i][j] += grad[i] * grad[j];
                }
                jtr[i] += grad[i] * r;
            }
        }
        let scale = (0..3).map(|i| jtj[i][i]).fold(0.0, f64::max);
        let Some(delta) = solve(jtj, jtr, PIVOT_TOLERANCE * scale.max(f64::MIN_POSITIVE)) else {
            break;
        };
        let mut step = 1.0;
        let mut improved = false;
        for _ in 0..GN_HALVINGS {
            let trial = [c[0] + step * delta[0], c[1] + step * delta[1], c[2] + step * delta[2]];
            let s = sse(FamilyKind::Exponential, &trial, points);
            if s.is_finite() && s < cur {
                c = trial;
                cur = s;
                improved = true;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    c
}

fn fit_exponential(points: &[FitPoint]) -> Result<[f64; 3]> {
    let mut best: Option<([f64; 3], f64)> = None;
    for b in exponential_rate_grid() {
        let start = if b == 0.0 {
            let mean = points.iter().map(|p| p.y).sum::<f64>() / points.len() as f64;
            let c = if points.iter().all(|p| p.y == points[0].y) {
                points[0].y
            } else {
                mean
            };
            [0.0, 0.0, c]
        } else {
            match exp_linear_part(points, b) {
                Some(s) => s,
                None => continue,
            }
        };
        let refined = if b == 0.0 { start } else { gauss_newton(points, start) };
        let s = sse(FamilyKind::Exponential, &refined, points);
        if !s.is_finite() {
            continue;
        }
        // strict improvement only: candidates arrive in increasing |b|
        let better = match &best {
            None => true,
            Some((prev, prev_sse)) => s < *prev_sse || (s == *prev_sse && refined[1].abs() < prev[1].abs()),
        };
        if better {
            best = Some((refined, s));
        }
    }
    best.map(|(c, _)| c)
        .ok_or_else(|| Error::DegenerateFit("no finite exponential candidate".into()))
}

fn x_range(points: &[FitPoint]) -> (f64, f64) {
    points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        (lo.min(p.x), hi.max(p.x))
    })
}

/// Least-squares fit of one family.
pub fn fit_family(points: &[FitPoint], family: FamilyKind) -> Result<FittedCurve> {
    if points.len() < family.coefficient_count() {
        return Err(Error::invalid(format!(
            "{} needs at least {} points, got {}",
            family.name(),
            family.coefficient_count(),
            points.len()
        )));
    }
    if points.iter().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
        return Err(Error::invalid("non-finite fit point"));
    }
    let y: Vec<f64> = points.iter().map(|p| p.y).collect();
    let coefficients = match family {
        FamilyKind::Linear => {
            let x: Vec<f64> = points.iter().map(|p| p.x).collect();
            poly_fit::<2>(&x, &y)?.to_vec()
        }
        FamilyKind::Quadratic => {
            let x: Vec<f64> = points.iter().map(|p| p.x).collect();
            poly_fit::<3>(&x, &y)?.to_vec()
        }
        FamilyKind::Logarithmic => {
            if points.iter().any(|p| p.x <= 0.0) {
                return Err(Error::invalid("logarithmic fit needs x > 0"));
            }
            let lx: Vec<f64> = points.iter().map(|p| p.x.ln()).collect();
            poly_fit::<2>(&lx, &y)?.to_vec()
        }
        FamilyKind::Exponential => fit_exponential(points)?.to_vec(),
    };
    let pred: Vec<f64> = points.iter().map(|p| family.eval(&coefficients, p.x)).collect();
    if pred.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateFit(format!(
            "{} predictions not finite",
            family.name()
        )));
    }
    let (x_min, x_max) = x_range(points);
    Ok(FittedCurve {
        family,
        train_r2: r2(&y, &pred)?,
        coefficients,
        x_min,
        x_max,
    })
}

/// Fits every admissible family and keeps the highest training R²; near-ties
/// go to the earlier family in [`FamilyKind::ALL`].
pub fn select_best(points: &[FitPoint]) -> Result<FittedCurve> {
    if points.len() < 4 {
        return Err(Error::invalid(format!(
            "model selection needs at least 4 points, got {}",
            points.len()
        )));
    }
    let mut best: Option<FittedCurve> = None;
    let mut failures = Vec::new();
    for family in FamilyKind::ALL {
        if family == FamilyKind::Logarithmic && points.iter().any(|p| p.x <= 0.0) {
            continue;
        }
        match fit_family(points, family) {
            Ok(curve) => {
                let replace = best
                    .as_ref()
                    .is_none_or(|b| curve.train_r2 > b.train_r2 + R2_TIE_TOLERANCE);
                if replace {
                    best = Some(curve);
                }
            }
            Err(e) => failures.push(format!("{}: {e}", family.name())),
        }
    }
    best.ok_or_else(|| Error::DegenerateFit(format!("every family failed ({})", failures.join("; "))))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub curve: FittedCurve,
    pub train_r2: f64,
    pub test_mae: f64,
    pub n_train: usize,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub k: usize,
    /// Points sorted by `(x, y, checkpoint_tokens)`.
    pub points: Vec<FitPoint>,
    /// Fold of each entry of `points`.
    pub fold_assignment: Vec<usize>,
    pub folds: Vec<FoldResult>,
    pub avg_train_r2: f64,
    pub avg_test_mae: f64,
}

/// Round-robin fold indices for `n` points already sorted by x.
pub fn fold_assignment(n: usize, k: usize) -> Vec<usize> {
    (0..n).map(|i| i % k).collect()
}

/// k-fold cross-validation of [`select_best`]: train R² of the selected curve
/// and MAE on the held-out fold, averaged over folds.
pub fn kfold_cv(points: &[FitPoint], k: usize) -> Result<FitReport> {
    if k < 2 {
        return Err(Error::invalid(format!("k must be at least 2, got {k}")));
    }
    if points.len() < k {
        return Err(Error::invalid(format!("{} points cannot fill {k} folds", points.len())));
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(FitPoint::total_cmp);
    let assignment = fold_assignment(sorted.len(), k);
    let mut folds = Vec::with_capacity(k);
    for fold in 0..k {
        let (test, train): (Vec<_>, Vec<_>) = sorted.iter().zip(&assignment).partition(|(_, f)| **f == fold);
        let train: Vec<FitPoint> = train.into_iter().map(|(p, _)| *p).collect();
        let test: Vec<FitPoint> = test.into_iter().map(|(p, _)| *p).collect();
        let curve = select_best(&train)?;
        let y: Vec<f64> = test.iter().map(|p| p.y).collect();
        let pred: Vec<f64> = test.iter().map(|p| curve.predict(p.x)).collect();
        folds.push(FoldResult {
            fold,
            train_r2: curve.train_r2,
            test_mae: mae(&y, &pred)?,
            n_train: train.len(),
            n_test: test.len(),
            curve,
        });
    }
    let avg_train_r2 = folds.iter().map(|f| f.train_r2).sum::<f64>() / k as f64;
    let avg_test_mae = folds.iter().map(|f| f.test_mae).sum::<f64>() / k as f64;
    Ok(FitReport {
        k,
        points: sorted,
        fold_assignment: assignment,
        folds,
        avg_train_r2,
        avg_test_mae,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pts(f: impl Fn(f64) -> f64, xs: impl IntoIterator<Item = f64>) -> Vec<FitPoint> {
        xs.into_iter().map(|x| FitPoint::new(x, f(x))).collect()
    }

    #[test]
    fn exact_linear() {
        let c = fit_family(&pts(|x| 3.0 * x - 2.0, (0..5).map(f64::from)), FamilyKind::Linear).unwrap();
        assert!((c.coefficients[0] - 3.0).abs() < 1e-9);
        assert!((c.coefficients[1] + 2.0).abs() < 1e-9);
        assert_eq!(c.train_r2, 1.0);
    }

    #[test]
    fn exact_quadratic() {
        let c = fit_family(&pts(|x| x * x, (-2..=2).map(f64::from)), FamilyKind::Quadratic).unwrap();
        for (got, want) in c.coefficients.iter().zip([1.0, 0.0, 0.0]) {
            assert!((got - want).abs() < 1e-9, "{:?}", c.coefficients);
        }
    }

    #[test]
    fn exact_logarithmic() {
        let c = fit_family(
            &pts(|x| 2.0 * x.ln() + 0.5, (1..8).map(f64::from)),
            FamilyKind::Logarithmic,
        )
        .unwrap();
        assert!((c.coefficients[0] - 2.0).abs() < 1e-9);
        assert!((c.coefficients[1] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn exponential_recovery() {
        let truth = |x: f64| 2.0 * (0.5 * x).exp() + 1.0;
        let points = pts(truth, (0..20).map(|i| 4.0 * i as f64 / 19.0));
        let c = fit_family(&points, FamilyKind::Exponential).unwrap();
        for p in &points {
            assert!((c.predict(p.x) - p.y).abs() <= 1e-3 * p.y.abs(), "{:?}", c.coefficients);
        }
    }

    #[test]
    fn exponential_with_negative_rate() {
        let truth = |x: f64| 40.0 - 25.0 * (-1.3 * x).exp();
        let points = pts(truth, (0..15).map(|i| i as f64 * 0.3));
        let c = fit_family(&points, FamilyKind::Exponential).unwrap();
        assert!(c.train_r2 > 1.0 - 1e-9);
        assert!((c.coefficients[1] + 1.3).abs() < 1e-6);
    }

    #[test]
    fn exponential_beats_linear_on_exponential_data() {
        let points = pts(|x| 2.0 * (0.5 * x).exp() + 1.0, (0..20).map(|i| 4.0 * i as f64 / 19.0));
        let e = fit_family(&points, FamilyKind::Exponential).unwrap();
        let l = fit_family(&points, FamilyKind::Linear).unwrap();
        assert!(e.train_r2 > l.train_r2);
    }

    #[test]
    fn rate_grid_shape() {
        let g = exponential_rate_grid();
        assert_eq!(g.len(), 201);
        assert_eq!(g[0], 0.0);
        assert!(g.iter().all(|b| b.abs() <= 10.0 + 1e-12));
        assert!((g[199] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn fit_errors() {
        assert!(matches!(
            fit_family(&[FitPoint::new(1.0, 1.0)], FamilyKind::Linear),
            Err(Error::InvalidInput(_))
        ));
        let same_x = vec![
            FitPoint::new(1.0, 1.0),
            FitPoint::new(1.0, 2.0),
            FitPoint::new(1.0, 3.0),
        ];
        assert!(matches!(
            fit_family(&same_x, FamilyKind::Linear),
            Err(Error::DegenerateFit(_))
        ));
        let neg = pts(|x| x, [-1.0, 1.0, 2.0]);
        assert!(matches!(
            fit_family(&neg, FamilyKind::Logarithmic),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn selection_rules() {
        let lin = pts(|x| 3.0 * x - 2.0, (0..8).map(f64::from));
        assert_eq!(select_best(&lin).unwrap().family, FamilyKind::Linear);
        let quad = pts(|x| 0.5 * x * x - x + 3.0, (-4..=4).map(f64::from));
        assert_eq!(select_best(&quad).unwrap().family, FamilyKind::Quadratic);
        let neg = pts(|x| (x + 5.0).ln(), (-3..5).map(f64::from));
        assert_ne!(select_best(&neg).unwrap().family, FamilyKind::Logarithmic);
        assert!(select_best(&lin[..3]).is_err());
    }

    #[test]
    fn metrics() {
        assert_eq!(r2(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(mae(&[1.0, 2.0], &[1.5, 2.5]).unwrap(), 0.5);
        assert_eq!(r2(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]).unwrap(), 0.0);
        assert_eq!(r2(&[5.0, 5.0], &[5.0, 5.0]).unwrap(), 1.0);
        assert_eq!(r2(&[5.0, 5.0], &[5.0, 6.0]).unwrap(), 0.0);
        assert!(r2(&[1.0], &[]).is_err());
    }

    #[test]
    fn kfold_linear_noiseless() {
        let points = pts(|x| 3.0 * x - 2.0, (0..15).map(f64::from));
        let rep = kfold_cv(&points, 5).unwrap();
        assert_eq!(rep.avg_train_r2, 1.0);
        assert!(rep.avg_test_mae < 1e-9);
        assert_eq!(rep.folds.len(), 5);
    }

    #[test]
    fn kfold_constant_target() {
        let points = pts(|_| 0.1, (1..=10).map(f64::from));
        let rep = kfold_cv(&points, 5).unwrap();
        assert_eq!(rep.avg_test_mae, 0.0);
        assert_eq!(rep.avg_train_r2, 1.0);
    }

    #[test]
    fn round_robin_assignment() {
        assert_eq!(fold_assignment(7, 5), vec![0, 1, 2, 3, 4, 0, 1]);
        let points = pts(|x| 2.0 * x + (x * 1.7).sin(), [6.0, 0.0, 3.0, 1.0, 5.0, 2.0, 4.0]);
        let rep = kfold_cv(&points, 5).unwrap();
        assert_eq!(rep.fold_assignment, vec![0, 1, 2, 3, 4, 0, 1]);
        let xs: Vec<f64> = rep.points.iter().map(|p| p.x).collect();
        assert_eq!(xs, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn kfold_errors() {
        let points = pts(|x| x, (0..4).map(f64::from));
        assert!(kfold_cv(&points, 5).is_err());
        assert!(kfold_cv(&points, 1).is_err());
    }

    proptest! {
        #[test]
        fn linear_fit_scales_with_y(
            ys in prop::collection::vec(-50.0f64..50.0, 3..20),
            s in 0.1f64..10.0,
            x in -5.0f64..25.0,
        ) {
            let points: Vec<FitPoint> = ys.iter().enumerate().map(|(i, y)| FitPoint::new(i as f64, *y)).collect();
            let scaled: Vec<FitPoint> = points.iter().map(|p| FitPoint::new(p.x, p.y * s)).collect();
            let a = fit_family(&points, FamilyKind::Linear).unwrap();
            let b = fit_family(&scaled, FamilyKind::Linear).unwrap();
            let tol = 1e-9 * (1.0 + b.predict(x).abs());
            prop_assert!((a.predict(x) * s - b.predict(x)).abs() <= tol);
        }

        #[test]
        fn selected_r2_dominates(ys in prop::collection::vec(0.0f64..100.0, 5..12)) {
            let points: Vec<FitPoint> = ys.iter().enumerate().map(|(i, y)| FitPoint::new(0.5 + i as f64, *y)).collect();
            let best = select_best(&points).unwrap();
            for fam in FamilyKind::ALL {
                if let Ok(c) = fit_family(&points, fam) {
                    prop_assert!(best.train_r2 >= c.train_r2 - R2_TIE_TOLERANCE);
                }
            }
        }

        #[test]
        fn kfold_is_order_independent(mut ys in prop::collection::vec((0.0f64..10.0, 0.0f64..10.0), 6..14), rot in 0usize..14) {
            let points: Vec<FitPoint> = ys.iter().map(|(x, y)| FitPoint::new(*x, *y)).collect();
            let n = ys.len();
            ys.rotate_left(rot % n);
            let rotated: Vec<FitPoint> = ys.iter().map(|(x, y)| FitPoint::new(*x, *y)).collect();
            let a = kfold_cv(&points, 3);
            let b = kfold_cv(&rotated, 3);
            match (a, b) {
                (Ok(a), Ok(b)) => prop_assert_eq!(
                    serde_json::to_string(&a).unwrap(),
                    serde_json::to_string(&b).unwrap()
                ),
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false, "determinism broken"),
            }
        }
    }
}
