//! Classification of scale functions ε ↦ ε_k(ε).
//!
//! Every question asked about scales (is one faster than another, do two
//! tend to zero equally fast, does a well-separation witness exist, how many
//! temporal scales are faster than a squared spatial scale) reduces to the
//! limit of a ratio as ε → 0. Limits are decided numerically: the ratio is
//! sampled on a geometric sequence of ε values, and the classification uses
//! both the log-log slope of the ratio and the stabilisation of its values.
//! A ratio whose slope is near zero but which keeps drifting (such as
//! `ln(1/ε)`) is never reported as finite.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::expr::{Expr, ExprError};

/// Name of the variable that scale expressions are written in.
pub const SCALE_VAR: &str = "eps";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScaleError {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("ambiguous classification: {0}")]
    ClassificationAmbiguous(String),
    #[error("pairwise comparisons do not give a total order: {0}")]
    SortInconsistent(String),
    #[error("inconsistent limit pattern: {0}")]
    ConsistencyViolation(String),
    #[error("spatial scale {scale} resonates with several temporal scales {partners:?}")]
    MultipleResonance { scale: usize, partners: Vec<usize> },
    #[error("scale lists are not jointly well-separated")]
    NotJointlySeparated(Box<JointClassification>),
}

/// Sampling and decision thresholds for [`limit_ratio`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimitOpts {
    /// First sample ε₀.
    pub eps0: f64,
    /// Geometric factor between consecutive samples.
    pub ratio: f64,
    /// Index of the last sample; K + 1 samples are taken.
    pub samples: usize,
    /// Number of trailing usable samples in the slope fit.
    pub fit_window: usize,
    pub p_tol: f64,
    pub c_tol: f64,
    pub v_floor: f64,
    pub v_ceil: f64,
    /// Samples where a value falls below this are skipped as underflow.
    pub underflow: f64,
}

impl Default for LimitOpts {
    fn default() -> Self {
        LimitOpts {
            eps0: 0.1,
            ratio: 0.5,
            samples: 40,
            fit_window: 12,
            p_tol: 0.02,
            c_tol: 0.005,
            v_floor: 1e-12,
            v_ceil: 1e12,
            underflow: 1e-300,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Limit {
    Zero,
    /// Finite positive limit with its extrapolated value.
    Finite(f64),
    Infinite,
    Indeterminate,
}

impl Limit {
    pub fn is_positive(&self) -> bool {
        matches!(self, Limit::Finite(_) | Limit::Infinite)
    }
}

impl fmt::Display for Limit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Limit::Zero => f.write_str("0"),
            Limit::Finite(c) => write!(f, "{:.6}", c),
            Limit::Infinite => f.write_str("inf"),
            Limit::Indeterminate => f.write_str("indeterminate"),
        }
    }
}

/// Outcome of a limit test plus the numbers it was decided on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimitClass {
    pub limit: Limit,
    /// Least-squares slope of ln(ratio) against ln(ε) over the fit window.
    pub slope: f64,
    /// Relative change of the ratio between the last two samples.
    pub drift: f64,
    pub usable_samples: usize,
}

/// Classifies lim_{ε→0} f(ε)/g(ε).
pub fn limit_ratio(f: &Expr, g: &Expr, opts: &LimitOpts) -> Result<LimitClass, ScaleError> {
    limit_of_product(&[(1.0, f), (-1.0, g)], opts)
}

/// Classifies lim_{ε→0} Π fᵢ(ε)^{cᵢ}, computed in log space so that large
/// powers of small scales do not underflow.
pub fn limit_of_product(terms: &[(f64, &Expr)], opts: &LimitOpts) -> Result<LimitClass, ScaleError> {
    let mut log_eps = Vec::with_capacity(opts.samples + 1);
    let mut log_ratio = Vec::with_capacity(opts.samples + 1);
    let mut eps = opts.eps0;
    'sample: for _ in 0..=opts.samples {
        let mut acc = 0.0;
        for (c, e) in terms {
            let v = e.eval(&[eps])?;
            if v.is_nan() || v < 0.0 {
                return Err(ExprError::Positivity {
                    expr: alloc::format!("{}", e),
                    at: eps,
                    value: v,
                }
                .into());
            }
            if v < opts.underflow || v.is_infinite() {
                eps *= opts.ratio;
                continue 'sample;
            }
            acc += c * libm::log(v);
        }
        log_eps.push(libm::log(eps));
        log_ratio.push(acc);
        eps *= opts.ratio;
    }
    Ok(decide(&log_eps, &log_ratio, opts))
}

fn decide(x: &[f64], l: &[f64], opts: &LimitOpts) -> LimitClass {
    let n = l.len();
    let w = opts.fit_window.max(3);
    if n < w {
        return LimitClass {
            limit: Limit::Indeterminate,
            slope: f64::NAN,
            drift: f64::NAN,
            usable_samples: n,
        };
    }
    let xs = &x[n - w..];
    let ls = &l[n - w..];
    let slope = least_squares_slope(xs, ls);
    let drift = libm::fabs(libm::expm1(ls[w - 1] - ls[w - 2]));
    let decreasing = ls.windows(2).all(|p| p[1] < p[0]);
    let increasing = ls.windows(2).all(|p| p[1] > p[0]);
    let last = ls[w - 1];

    let limit = if slope > opts.p_tol {
        Limit::Zero
    } else if slope < -opts.p_tol {
        Limit::Infinite
    } else if decreasing && last < libm::log(opts.v_floor) {
        Limit::Zero
    } else if increasing && last > libm::log(opts.v_ceil) {
        Limit::Infinite
    } else if drift < opts.c_tol {
        let r = [
            libm::exp(ls[w - 3]),
            libm::exp(ls[w - 2]),
            libm::exp(ls[w - 1]),
        ];
        Limit::Finite(extrapolate(r))
    } else {
        Limit::Indeterminate
    };
    LimitClass {
        limit,
        slope,
        drift,
        usable_samples: n,
    }
}

fn least_squares_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
    }
    sxy / sxx
}

/// Richardson extrapolation of the last three ratio samples with the
/// convergence order estimated from the samples themselves (Aitken form).
fn extrapolate(r: [f64; 3]) -> f64 {
    let d1 = r[1] - r[0];
    let d2 = r[2] - r[1];
    if libm::fabs(d2) <= 8.0 * f64::EPSILON * libm::fabs(r[2]) || d1 == 0.0 {
        return r[2];
    }
    let theta = d2 / d1;
    if theta > 0.0 && theta < 0.9 {
        r[2] + d2 * theta / (1.0 - theta)
    } else {
        r[2]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Spatial,
    Temporal,
}

/// Scale functions listed from slowest to fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleList {
    pub role: Role,
    pub scales: Vec<Expr>,
}

impl ScaleList {
    pub fn new(role: Role, scales: Vec<Expr>) -> Self {
        ScaleList { role, scales }
    }

    pub fn parse(role: Role, texts: &[&str]) -> Result<Self, ExprError> {
        let scales = texts
            .iter()
            .map(|t| Expr::parse(t, &[SCALE_VAR]))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ScaleList { role, scales })
    }

    pub fn len(&self) -> usize {
        self.scales.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scales.is_empty()
    }

    /// Checks strict positivity at every sample point of `opts`.
    pub fn check_positive(&self, opts: &LimitOpts) -> Result<(), ExprError> {
        for e in &self.scales {
            let mut eps = opts.eps0;
            for _ in 0..=opts.samples {
                let v = e.eval(&[eps])?;
                if !(v > 0.0) && !(v >= 0.0 && v < opts.underflow) {
                    return Err(ExprError::Positivity {
                        expr: alloc::format!("{}", e),
                        at: eps,
                        value: v,
                    });
                }
                eps *= opts.ratio;
            }
        }
        Ok(())
    }
}

fn ambiguous(what: core::fmt::Arguments<'_>) -> ScaleError {
    ScaleError::ClassificationAmbiguous(alloc::format!("{}", what))
}

/// True iff every consecutive ratio ε_{k+1}/ε_k tends to zero.
pub fn is_separated(list: &[Expr], opts: &LimitOpts) -> Result<bool, ScaleError> {
    let mut separated = true;
    for (k, pair) in list.windows(2).enumerate() {
        match limit_ratio(&pair[1], &pair[0], opts)?.limit {
            Limit::Zero => {}
            Limit::Indeterminate => {
                return Err(ambiguous(format_args!("ratio of scales {} and {}", k + 2, k + 1)))
            }
            _ => separated = false,
        }
    }
    Ok(separated)
}

/// Verdict of a well-separation test.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WellSeparation {
    pub separated: bool,
    pub well_separated: bool,
    /// Largest per-pair witness; `None` when some pair has no witness.
    pub witness: Option<u32>,
    /// Smallest witness l for each consecutive pair.
    pub pair_witnesses: Vec<Option<u32>>,
}

/// Searches, for each consecutive pair, the smallest l ≤ `l_max` with
/// (ε_{k+1}/ε_k)^l / ε_k → 0.
pub fn is_well_separated(list: &[Expr], l_max: u32, opts: &LimitOpts) -> Result<WellSeparation, ScaleError> {
    if !is_separated(list, opts)? {
        return Ok(WellSeparation {
            separated: false,
            well_separated: false,
            witness: None,
            pair_witnesses: Vec::new(),
        });
    }
    let mut pair_witnesses = Vec::with_capacity(list.len().saturating_sub(1));
    for (k, pair) in list.windows(2).enumerate() {
        let mut found = None;
        let mut saw_indeterminate = false;
        for l in 1..=l_max {
            let lf = l as f64;
            let c = limit_of_product(&[(lf, &pair[1]), (-(lf + 1.0), &pair[0])], opts)?;
            match c.limit {
                Limit::Zero => {
                    found = Some(l);
                    break;
                }
                Limit::Indeterminate => saw_indeterminate = true,
                _ => {}
            }
        }
        if found.is_none() && saw_indeterminate {
            return Err(ambiguous(format_args!(
                "well-separation witness for scales {} and {}",
                k + 1,
                k + 2
            )));
        }
        pair_witnesses.push(found);
    }
    let well = pair_witnesses.iter().all(Option::is_some);
    let witness = if well {
        Some(pair_witnesses.iter().flatten().copied().max().unwrap_or(1))
    } else {
        None
    };
    Ok(WellSeparation {
        separated: true,
        well_separated: well,
        witness,
        pair_witnesses,
    })
}

/// One entry of the merged spatial/temporal list.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedScale {
    pub expr: Expr,
    pub role: Role,
    /// Index within its original list.
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointClassification {
    /// Remaining scales, slowest first.
    pub merged: Vec<MergedScale>,
    /// (spatial index, temporal index, limit of their ratio) for every pair
    /// tending to zero equally fast. The temporal member is dropped.
    pub duplicate_pairs: Vec<(usize, usize, f64)>,
    pub spatial: WellSeparation,
    pub temporal: WellSeparation,
    pub joint: WellSeparation,
    pub jointly_well_separated: bool,
}

/// Merges both lists, drops duplicates, orders by magnitude and tests the
/// merged list for well-separation.
pub fn merge_joint(
    spatial: &ScaleList,
    temporal: &ScaleList,
    l_max: u32,
    opts: &LimitOpts,
) -> Result<JointClassification, ScaleError> {
    spatial.check_positive(opts)?;
    temporal.check_positive(opts)?;
    let spatial_ws = is_well_separated(&spatial.scales, l_max, opts)?;
    let temporal_ws = is_well_separated(&temporal.scales, l_max, opts)?;

    let mut duplicate_pairs = Vec::new();
    let mut dropped = alloc::vec![false; temporal.len()];
    for (i, s) in spatial.scales.iter().enumerate() {
        for (j, t) in temporal.scales.iter().enumerate() {
            match limit_ratio(s, t, opts)?.limit {
                Limit::Finite(c) => {
                    duplicate_pairs.push((i, j, c));
                    dropped[j] = true;
                }
                Limit::Indeterminate => {
                    return Err(ambiguous(format_args!(
                        "ratio of spatial scale {} and temporal scale {}",
                        i + 1,
                        j + 1
                    )))
                }
                _ => {}
            }
        }
    }

    let mut items: Vec<MergedScale> = spatial
        .scales
        .iter()
        .enumerate()
        .map(|(index, e)| MergedScale {
            expr: e.clone(),
            role: Role::Spatial,
            index,
        })
        .collect();
    items.extend(
        temporal
            .scales
            .iter()
            .enumerate()
            .filter(|(j, _)| !dropped[*j])
            .map(|(index, e)| MergedScale {
                expr: e.clone(),
                role: Role::Temporal,
                index,
            }),
    );
    let merged = order_by_magnitude(items, opts)?;
    let exprs: Vec<Expr> = merged.iter().map(|m| m.expr.clone()).collect();
    let joint = is_well_separated(&exprs, l_max, opts)?;
    let jointly = spatial_ws.well_separated && temporal_ws.well_separated && joint.well_separated;
    Ok(JointClassification {
        merged,
        duplicate_pairs,
        spatial: spatial_ws,
        temporal: temporal_ws,
        joint,
        jointly_well_separated: jointly,
    })
}

/// Sorts slowest first: g precedes f iff f/g → 0.
fn order_by_magnitude(items: Vec<MergedScale>, opts: &LimitOpts) -> Result<Vec<MergedScale>, ScaleError> {
    let k = items.len();
    // faster[a][b]: a tends to zero faster than b
    let mut faster = alloc::vec![alloc::vec![false; k]; k];
    for a in 0..k {
        for b in (a + 1)..k {
            let ab = limit_ratio(&items[a].expr, &items[b].expr, opts)?.limit;
            let ba = limit_ratio(&items[b].expr, &items[a].expr, opts)?.limit;
            match (ab, ba) {
                (Limit::Zero, Limit::Infinite) => faster[a][b] = true,
                (Limit::Infinite, Limit::Zero) => faster[b][a] = true,
                (Limit::Finite(_), Limit::Finite(_)) => {}
                (Limit::Indeterminate, _) | (_, Limit::Indeterminate) => {
                    return Err(ambiguous(format_args!("ordering `{}` against `{}`", items[a].expr, items[b].expr)))
                }
                _ => {
                    return Err(ScaleError::SortInconsistent(alloc::format!(
                        "`{}` vs `{}` gives {} but the reverse gives {}",
                        items[a].expr,
                        items[b].expr,
                        ab,
                        ba
                    )))
                }
            }
        }
    }
    let rank: Vec<usize> = (0..k).map(|a| (0..k).filter(|&b| faster[a][b]).count()).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by_key(|&a| rank[a]);
    for p in 0..k {
        for q in (p + 1)..k {
            if faster[order[p]][order[q]] {
                return Err(ScaleError::SortInconsistent(alloc::format!(
                    "`{}` and `{}` are not transitively ordered",
                    items[order[p]].expr,
                    items[order[q]].expr
                )));
            }
        }
    }
    let mut slots: Vec<Option<MergedScale>> = items.into_iter().map(Some).collect();
    Ok(order.into_iter().filter_map(|a| slots[a].take()).collect())
}

/// Number of temporal scales tending to zero faster than the square of
/// spatial scale `i` (zero-based), together with the limits inspected.
pub fn compute_d(
    i: usize,
    spatial: &ScaleList,
    temporal: &ScaleList,
    opts: &LimitOpts,
) -> Result<(usize, Vec<LimitClass>), ScaleError> {
    let s = &spatial.scales[i];
    let m = temporal.len();
    let mut limits = Vec::with_capacity(m);
    let mut positive = 0;
    let mut seen_zero = false;
    for (j, t) in temporal.scales.iter().enumerate() {
        let c = limit_of_product(&[(1.0, t), (-2.0, s)], opts)?;
        match c.limit {
            Limit::Indeterminate => {
                return Err(ambiguous(format_args!(
                    "temporal scale {} against squared spatial scale {}",
                    j + 1,
                    i + 1
                )))
            }
            Limit::Zero => seen_zero = true,
            _ if seen_zero => {
                return Err(ScaleError::ConsistencyViolation(alloc::format!(
                    "temporal scale {} is slower than (spatial scale {})^2 although an earlier one is faster",
                    j + 1,
                    i + 1
                )))
            }
            _ => positive += 1,
        }
        limits.push(c);
    }
    Ok((m - positive, limits))
}

/// Resonance constant of spatial scale `i`: the finite positive limit of
/// (ε̂_i)²/ε̌_j, or zero when no temporal scale gives one.
pub fn compute_rho(
    i: usize,
    spatial: &ScaleList,
    temporal: &ScaleList,
    opts: &LimitOpts,
) -> Result<(f64, Option<usize>, Vec<LimitClass>), ScaleError> {
    let s = &spatial.scales[i];
    let mut limits = Vec::with_capacity(temporal.len());
    let mut partners = Vec::new();
    let mut rho = 0.0;
    for (j, t) in temporal.scales.iter().enumerate() {
        let c = limit_of_product(&[(2.0, s), (-1.0, t)], opts)?;
        match c.limit {
            Limit::Finite(v) => {
                rho = v;
                partners.push(j);
            }
            Limit::Indeterminate => {
                return Err(ambiguous(format_args!(
                    "squared spatial scale {} against temporal scale {}",
                    i + 1,
                    j + 1
                )))
            }
            _ => {}
        }
        limits.push(c);
    }
    match partners.len() {
        0 => Ok((0.0, None, limits)),
        1 => Ok((rho, Some(partners[0]), limits)),
        _ => Err(ScaleError::MultipleResonance { scale: i, partners }),
    }
}

/// The numbers d_i and ρ_i for every spatial scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleExponents {
    pub d: Vec<usize>,
    pub rho: Vec<f64>,
    /// Zero-based temporal index of the resonance partner.
    pub partner: Vec<Option<usize>>,
    /// Number of temporal scales m.
    pub temporal_count: usize,
    /// Limits of ε̌_j/(ε̂_i)² per spatial scale.
    pub d_limits: Vec<Vec<LimitClass>>,
    /// Limits of (ε̂_i)²/ε̌_j per spatial scale.
    pub rho_limits: Vec<Vec<LimitClass>>,
}

impl ScaleExponents {
    /// Exponents supplied directly rather than classified (e.g. for cell
    /// problems posed without scale functions).
    pub fn given(d: Vec<usize>, rho: Vec<f64>, temporal_count: usize) -> Self {
        let partner = d
            .iter()
            .zip(&rho)
            .map(|(&di, &r)| (r > 0.0 && di < temporal_count).then(|| temporal_count - di - 1))
            .collect();
        let n = d.len();
        ScaleExponents {
            d,
            rho,
            partner,
            temporal_count,
            d_limits: alloc::vec![Vec::new(); n],
            rho_limits: alloc::vec![Vec::new(); n],
        }
    }

    pub fn spatial_count(&self) -> usize {
        self.d.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifyOpts {
    pub limits: LimitOpts,
    pub l_max: u32,
}

impl Default for ClassifyOpts {
    fn default() -> Self {
        ClassifyOpts {
            limits: LimitOpts::default(),
            l_max: 8,
        }
    }
}

/// Joint well-separation plus d_i and ρ_i. Exponents are only produced for
/// jointly well-separated lists.
pub fn classify(
    spatial: &ScaleList,
    temporal: &ScaleList,
    opts: &ClassifyOpts,
) -> Result<(JointClassification, ScaleExponents), ScaleError> {
    let joint = merge_joint(spatial, temporal, opts.l_max, &opts.limits)?;
    if !joint.jointly_well_separated {
        return Err(ScaleError::NotJointlySeparated(Box::new(joint)));
    }
    let n = spatial.len();
    let mut ex = ScaleExponents {
        d: Vec::with_capacity(n),
        rho: Vec::with_capacity(n),
        partner: Vec::with_capacity(n),
        temporal_count: temporal.len(),
        d_limits: Vec::with_capacity(n),
        rho_limits: Vec::with_capacity(n),
    };
    for i in 0..n {
        let (d, dl) = compute_d(i, spatial, temporal, &opts.limits)?;
        let (rho, partner, rl) = compute_rho(i, spatial, temporal, &opts.limits)?;
        if let Some(j) = partner {
            if temporal.len() - d != j + 1 {
                return Err(ScaleError::ConsistencyViolation(alloc::format!(
                    "spatial scale {} resonates with temporal scale {} but d = {}",
                    i + 1,
                    j + 1,
                    d
                )));
            }
        }
        ex.d.push(d);
        ex.rho.push(rho);
        ex.partner.push(partner);
        ex.d_limits.push(dl);
        ex.rho_limits.push(rl);
    }
    if ex.d.windows(2).any(|w| w[1] > w[0]) {
        return Err(ScaleError::ConsistencyViolation(alloc::format!(
            "d = {:?} is not nonincreasing",
            ex.d
        )));
    }
    Ok((joint, ex))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(s: &str) -> Expr {
        Expr::parse(s, &[SCALE_VAR]).unwrap()
    }

    fn lim(f: &str, g: &str) -> Limit {
        limit_ratio(&e(f), &e(g), &LimitOpts::default()).unwrap().limit
    }

    fn finite(l: Limit) -> f64 {
        match l {
            Limit::Finite(c) => c,
            other => panic!("expected finite, got {other:?}"),
        }
    }

    fn showcase_lists() -> (ScaleList, ScaleList) {
        (
            ScaleList::parse(Role::Spatial, &["2*sqrt(eps)", "eps^2"]).unwrap(),
            ScaleList::parse(
                Role::Temporal,
                &["exp(eps)-1", "ln(1+eps^2)", "eps^3*ln(1+1/eps)"],
            )
            .unwrap(),
        )
    }

    #[test]
    fn duplicate_scales_have_unit_ratio() {
        assert!((finite(lim("ln(1+eps^2)", "eps^2")) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn quarter_limit() {
        assert!((finite(lim("exp(eps)-1", "(2*sqrt(eps))^2")) - 0.25).abs() < 1e-6);
    }

    #[test]
    fn faster_power_is_zero() {
        assert_eq!(lim("eps^2", "sqrt(eps)"), Limit::Zero);
        assert_eq!(lim("sqrt(eps)", "eps^2"), Limit::Infinite);
    }

    #[test]
    fn log_divergence_is_not_finite() {
        // oracle: the ratio grows without bound, monotonically, on 1e-1..1e-12
        let f = e("ln(1+1/eps)");
        let mut prev = 0.0;
        for k in 1..=12 {
            let v = f.eval(&[10f64.powi(-k)]).unwrap();
            assert!(v > prev);
            prev = v;
        }
        assert!(prev > 27.0);
        assert_eq!(lim("ln(1+1/eps)", "1"), Limit::Infinite);
    }

    #[test]
    fn too_few_samples_is_indeterminate() {
        let opts = LimitOpts {
            samples: 5,
            ..LimitOpts::default()
        };
        let c = limit_ratio(&e("eps"), &e("eps^2"), &opts).unwrap();
        assert_eq!(c.limit, Limit::Indeterminate);
    }

    #[test]
    fn negative_scale_is_a_positivity_error() {
        let r = limit_ratio(&e("eps-0.05"), &e("eps"), &LimitOpts::default());
        assert!(matches!(r, Err(ScaleError::Expr(ExprError::Positivity { .. }))));
    }

    #[test]
    fn separation_examples() {
        let o = LimitOpts::default();
        assert!(is_separated(&[e("2*sqrt(eps)"), e("eps^2")], &o).unwrap());
        assert!(!is_separated(&[e("eps"), e("eps")], &o).unwrap());
        assert!(!is_separated(&[e("eps^2"), e("eps")], &o).unwrap());
    }

    #[test]
    fn well_separation_examples() {
        let o = LimitOpts::default();
        let ws = is_well_separated(&[e("2*sqrt(eps)"), e("eps^2")], 8, &o).unwrap();
        assert!(ws.well_separated);
        assert_eq!(ws.witness, Some(1));

        let (_, temporal) = showcase_lists();
        let ws = is_well_separated(&temporal.scales, 8, &o).unwrap();
        assert!(ws.well_separated);
        assert_eq!(ws.witness, Some(3));
        assert_eq!(ws.pair_witnesses, alloc::vec![Some(2), Some(3)]);
    }

    #[test]
    fn log_gap_is_separated_but_not_well_separated() {
        let o = LimitOpts::default();
        let list = [e("eps"), e("eps/ln(1+1/eps)")];
        // oracle: (1/ln(1/eps))^l / eps grows for every l <= 8 on the sample range
        for l in 1..=8 {
            let g = |x: f64| (1.0 / (1.0 + 1.0 / x).ln()).powi(l) / x;
            assert!(g(1e-12) > g(1e-8));
        }
        assert!(is_separated(&list, &o).unwrap());
        let ws = is_well_separated(&list, 8, &o).unwrap();
        assert!(!ws.well_separated);
        assert_eq!(ws.witness, None);
    }

    #[test]
    fn merge_of_the_worked_example() {
        let (s, t) = showcase_lists();
        let j = merge_joint(&s, &t, 8, &LimitOpts::default()).unwrap();
        assert_eq!(j.duplicate_pairs.len(), 1);
        assert_eq!((j.duplicate_pairs[0].0, j.duplicate_pairs[0].1), (1, 1));
        let order: Vec<String> = j.merged.iter().map(|m| alloc::format!("{}", m.expr)).collect();
        let expect: Vec<String> = ["2*sqrt(eps)", "exp(eps)-1", "eps^2", "eps^3*ln(1+1/eps)"]
            .iter()
            .map(|s| alloc::format!("{}", e(s)))
            .collect();
        assert_eq!(order, expect);
        assert!(j.jointly_well_separated);
        assert!(j.joint.witness.unwrap() <= 3);
    }

    #[test]
    fn merge_small_cases() {
        let o = LimitOpts::default();
        let eps = ScaleList::parse(Role::Spatial, &["eps"]).unwrap();
        let j = merge_joint(&eps, &ScaleList::parse(Role::Temporal, &["eps"]).unwrap(), 8, &o).unwrap();
        assert_eq!(j.duplicate_pairs.len(), 1);
        assert_eq!(j.merged.len(), 1);
        assert!(j.jointly_well_separated);

        let j = merge_joint(&eps, &ScaleList::parse(Role::Temporal, &["eps^3"]).unwrap(), 8, &o).unwrap();
        assert!(j.duplicate_pairs.is_empty());
        assert_eq!(j.merged.len(), 2);
        assert_eq!(j.merged[1].role, Role::Temporal);
        assert!(j.jointly_well_separated);
    }

    #[test]
    fn d_and_rho_of_the_worked_example() {
        let (s, t) = showcase_lists();
        let o = LimitOpts::default();
        let (d1, l1) = compute_d(0, &s, &t, &o).unwrap();
        assert_eq!(d1, 2);
        assert!((finite(l1[0].limit) - 0.25).abs() < 1e-6);
        assert_eq!(l1[1].limit, Limit::Zero);
        assert_eq!(l1[2].limit, Limit::Zero);
        let (d2, l2) = compute_d(1, &s, &t, &o).unwrap();
        assert_eq!(d2, 0);
        assert!(l2.iter().all(|c| c.limit == Limit::Infinite));

        let (rho1, p1, _) = compute_rho(0, &s, &t, &o).unwrap();
        assert!((rho1 - 4.0).abs() < 1e-3);
        assert_eq!(p1, Some(0));
        let (rho2, p2, _) = compute_rho(1, &s, &t, &o).unwrap();
        assert_eq!((rho2, p2), (0.0, None));
    }

    #[test]
    fn classify_small_cases() {
        let o = ClassifyOpts::default();
        let eps = ScaleList::parse(Role::Spatial, &["eps"]).unwrap();
        let (_, ex) = classify(&eps, &ScaleList::parse(Role::Temporal, &["eps^2"]).unwrap(), &o).unwrap();
        assert_eq!(ex.d, alloc::vec![0]);
        assert!((ex.rho[0] - 1.0).abs() < 1e-12);
        assert_eq!(ex.partner, alloc::vec![Some(0)]);

        let (_, ex) = classify(&eps, &ScaleList::parse(Role::Temporal, &["eps^3"]).unwrap(), &o).unwrap();
        assert_eq!(ex.d, alloc::vec![1]);
        assert_eq!(ex.rho, alloc::vec![0.0]);

        let (_, ex) = classify(&eps, &ScaleList::parse(Role::Temporal, &[]).unwrap(), &o).unwrap();
        assert_eq!(ex.d, alloc::vec![0]);
        assert_eq!(ex.rho, alloc::vec![0.0]);
    }

    #[test]
    fn classify_rejects_unseparated_lists() {
        let s = ScaleList::parse(Role::Spatial, &["eps", "eps"]).unwrap();
        let t = ScaleList::parse(Role::Temporal, &[]).unwrap();
        assert!(matches!(
            classify(&s, &t, &ClassifyOpts::default()),
            Err(ScaleError::NotJointlySeparated(_))
        ));
    }

    #[test]
    fn classify_worked_example() {
        let (s, t) = showcase_lists();
        let (j, ex) = classify(&s, &t, &ClassifyOpts::default()).unwrap();
        assert!(j.jointly_well_separated);
        assert_eq!(ex.d, alloc::vec![2, 0]);
        assert!((ex.rho[0] - 4.0).abs() < 1e-3);
        assert_eq!(ex.rho[1], 0.0);
    }

    #[test]
    fn power_grid_is_classified_exactly() {
        let grid = [0.25, 0.5, 1.0, 1.5, 2.0, 3.0];
        for &a in &grid {
            for &b in &grid {
                let l = lim(&alloc::format!("eps^{a}"), &alloc::format!("eps^{b}"));
                if a > b {
                    assert_eq!(l, Limit::Zero, "{a} {b}");
                } else if a < b {
                    assert_eq!(l, Limit::Infinite, "{a} {b}");
                } else {
                    assert_eq!(l, Limit::Finite(1.0));
                }
            }
        }
    }
}
