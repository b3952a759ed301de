//! p-variation of piecewise-constant paths.
//!
//! For a path that only moves at jump times, every partition of `[0, T]` can
//! be replaced by one whose cut points lie in `{0, t_1, …, t_m, T}` without
//! changing its increments, so the supremum is a longest-path problem over
//! those candidates:
//!
//! ```text
//! V[0] = 0,   V[j] = max_{i<j} V[i] + |f_j − f_i|^p,   ‖f‖_{p-var} = V[last]^{1/p}
//! ```
//!
//! Level-2 increments use the Frobenius norm by default; for d = 2 the
//! spectral norm is available for cross-checks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{frobenius_sq, norm, spectral_norm_2x2, vsub, Matrix, Vector};
use crate::roughpath::{Level2Path, RealPath};

/// Largest jump count accepted by the exact O(m²) methods.
pub const EXACT_CAP: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ExactDp,
    GreedyLower,
    Capped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixNorm {
    Frobenius,
    /// Operator 2-norm; d = 2 only.
    Spectral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationResult {
    /// The norm, with the 1/p power applied.
    pub value: f64,
    pub p: f64,
    pub method: Method,
    /// Cut times of an attaining (or evaluated) partition, endpoints included.
    pub partition: Option<Vec<f64>>,
}

/// Certified interval from the blocked method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariationBounds {
    pub lower: f64,
    pub upper: f64,
    pub p: f64,
    pub block: usize,
}

fn check_p(p: f64) -> Result<()> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::Parameter { field: "p", reason: format!("exponent must be ≥ 1, got {p}") });
    }
    Ok(())
}

/// Candidate cut times `0, t_1, …, t_m` and `T` when `T` is not a jump time.
fn candidate_times(path: &RealPath) -> Vec<f64> {
    let mut t = Vec::with_capacity(path.num_jumps() + 2);
    t.push(0.0);
    t.extend_from_slice(&path.times);
    if path.times.last().is_none_or(|&l| l < path.horizon) {
        t.push(path.horizon);
    }
    t
}

fn candidate_points(path: &RealPath) -> Vec<Vector> {
    let mut pts = path.points();
    if path.times.last().is_none_or(|&l| l < path.horizon) {
        pts.push(*pts.last().unwrap());
    }
    pts
}

/// Points per bounding box in [`dp_points`].
const BLOCK: usize = 32;

/// DP over points in R^dim (flat, row-major), Euclidean increments.
///
/// Candidates are grouped in blocks of [`BLOCK`] consecutive points with a
/// bounding box each. Since V is nondecreasing, `V[end] + maxdist(f_j, box)^p`
/// bounds every candidate of a block, so blocks that cannot beat the current
/// best are skipped; the box of all points gives the same bound for the whole
/// remaining prefix and ends the scan.
fn dp_points(pts: &[f64], dim: usize, p: f64) -> (f64, Vec<usize>) {
    let n = pts.len() / dim;
    if n <= 1 {
        return (0.0, (0..n).collect());
    }
    let row = |k: usize| &pts[k * dim..(k + 1) * dim];
    let nblocks = n.div_ceil(BLOCK);
    let mut lo = vec![f64::INFINITY; nblocks * dim];
    let mut hi = vec![f64::NEG_INFINITY; nblocks * dim];
    let mut glo = vec![f64::INFINITY; dim];
    let mut ghi = vec![f64::NEG_INFINITY; dim];
    for k in 0..n {
        let b = k / BLOCK;
        for (c, v) in row(k).iter().enumerate() {
            lo[b * dim + c] = lo[b * dim + c].min(*v);
            hi[b * dim + c] = hi[b * dim + c].max(*v);
            glo[c] = glo[c].min(*v);
            ghi[c] = ghi[c].max(*v);
        }
    }
    let far2 = |f: &[f64], lo: &[f64], hi: &[f64]| {
        f.iter().zip(lo.iter().zip(hi)).map(|(x, (l, h))| (x - l).abs().max((h - x).abs()).powi(2)).sum::<f64>()
    };
    let dist2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let half_p = p / 2.0;
    // bounds are compared with a little slack so rounding never prunes a maximizer
    let slack = 1.0 + 1e-12;

    let mut best = vec![0.0f64; n];
    let mut arg = vec![0usize; n];
    for j in 1..n {
        let fj = row(j);
        let reach = far2(fj, &glo, &ghi).powf(half_p);
        let mut b = f64::NEG_INFINITY;
        let mut a = 0;
        let scan = |i: usize, b: &mut f64, a: &mut usize| {
            let cand = best[i] + dist2(fj, row(i)).powf(half_p);
            if cand > *b {
                *b = cand;
                *a = i;
            }
        };
        let jb = j / BLOCK;
        for i in (jb * BLOCK..j).rev() {
            scan(i, &mut b, &mut a);
        }
        for blk in (0..jb).rev() {
            let last = blk * BLOCK + BLOCK - 1;
            if (best[last] + reach) * slack <= b {
                break;
            }
            let bound = best[last] + far2(fj, &lo[blk * dim..(blk + 1) * dim], &hi[blk * dim..(blk + 1) * dim]).powf(half_p);
            if bound * slack <= b {
                continue;
            }
            for i in (blk * BLOCK..=last).rev() {
                scan(i, &mut b, &mut a);
            }
        }
        best[j] = b;
        arg[j] = a;
    }
    (best[n - 1], backtrack(&arg, n - 1))
}

/// DP with an arbitrary increment cost `cost(i, j) = |increment|^p`.
fn dp_general(n: usize, cost: impl Fn(usize, usize) -> f64) -> (f64, Vec<usize>) {
    if n <= 1 {
        return (0.0, (0..n).collect());
    }
    let mut best = vec![0.0f64; n];
    let mut arg = vec![0usize; n];
    for j in 1..n {
        let mut b = f64::NEG_INFINITY;
        let mut a = 0;
        for i in (0..j).rev() {
            let cand = best[i] + cost(i, j);
            if cand > b {
                b = cand;
                a = i;
            }
        }
        best[j] = b;
        arg[j] = a;
    }
    (best[n - 1], backtrack(&arg, n - 1))
}

fn backtrack(arg: &[usize], last: usize) -> Vec<usize> {
    let mut cuts = vec![last];
    let mut k = last;
    while k > 0 {
        k = arg[k];
        cuts.push(k);
    }
    cuts.reverse();
    cuts
}

fn flatten(pts: &[Vector], d: usize) -> Vec<f64> {
    pts.iter().flat_map(|v| v[..d].iter().copied()).collect()
}

/// p-th power of the p-variation over the given points; exact, no cap.
pub(crate) fn pvar_pow_points(pts: &[Vector], d: usize, p: f64) -> f64 {
    dp_points(&flatten(pts, d), d, p).0
}

/// p-th power of the p-variation of points stored row-major in `pts`; exact, no cap.
pub(crate) fn pvar_pow_flat(pts: &[f64], dim: usize, p: f64) -> f64 {
    dp_points(pts, dim, p).0
}

/// Exact p-variation norm of a one-parameter path.
pub fn pvar_exact(path: &RealPath, p: f64) -> Result<VariationResult> {
    check_p(p)?;
    if path.num_jumps() > EXACT_CAP {
        return Err(Error::ExactCap { jumps: path.num_jumps(), cap: EXACT_CAP });
    }
    let times = candidate_times(path);
    let (v, cuts) = dp_points(&flatten(&candidate_points(path), path.d), path.d, p);
    Ok(VariationResult {
        value: v.powf(1.0 / p),
        p,
        method: Method::ExactDp,
        partition: Some(cuts.iter().map(|&k| times[k]).collect()),
    })
}

/// Exact p-variation norm of an additive matrix-valued path given by its
/// prefix values (e.g. a quadratic covariation), Frobenius increments.
pub fn pvar_exact_matrix_prefix(prefix: &[Matrix], d: usize, p: f64) -> Result<f64> {
    check_p(p)?;
    if prefix.len() > EXACT_CAP + 1 {
        return Err(Error::ExactCap { jumps: prefix.len() - 1, cap: EXACT_CAP });
    }
    let flat: Vec<f64> = prefix.iter().flat_map(|m| m[..d].iter().flat_map(move |r| r[..d].iter().copied())).collect();
    Ok(dp_points(&flat, d * d, p).0.powf(1.0 / p))
}

fn matrix_norm(m: &Matrix, kind: MatrixNorm) -> f64 {
    match kind {
        MatrixNorm::Frobenius => frobenius_sq(m).sqrt(),
        MatrixNorm::Spectral => spectral_norm_2x2(m),
    }
}

/// q-variation norm of the two-parameter function `(s, t) ↦ 𝕏_{s,t}`
/// (no square root applied).
pub fn p2var_exact(l2: &Level2Path, q: f64) -> Result<VariationResult> {
    p2var_exact_with(l2, q, MatrixNorm::Frobenius)
}

pub fn p2var_exact_with(l2: &Level2Path, q: f64, kind: MatrixNorm) -> Result<VariationResult> {
    check_p(q)?;
    if kind == MatrixNorm::Spectral && l2.path.d != 2 {
        return Err(Error::Parameter { field: "norm", reason: "spectral norm is only available for d = 2".into() });
    }
    let m = l2.path.num_jumps();
    if m > EXACT_CAP {
        return Err(Error::ExactCap { jumps: m, cap: EXACT_CAP });
    }
    let times = candidate_times(&l2.path);
    // the optional extra point at T repeats the value after the last jump
    let idx = |k: usize| k.min(m);
    let (v, cuts) = dp_general(times.len(), |i, j| matrix_norm(&l2.window_by_index(idx(i), idx(j)), kind).powf(q));
    Ok(VariationResult {
        value: v.powf(1.0 / q),
        p: q,
        method: Method::ExactDp,
        partition: Some(cuts.iter().map(|&k| times[k]).collect()),
    })
}

/// Sum of `|increment|^p` over a given partition of candidate indices.
fn partition_sum(pts: &[Vector], cuts: &[usize], p: f64) -> f64 {
    cuts.windows(2).map(|w| norm(&vsub(&pts[w[1]], &pts[w[0]])).powf(p)).sum()
}

/// Re-evaluate a partition given by cut times; used to certify reported partitions.
pub fn evaluate_partition(path: &RealPath, cut_times: &[f64], p: f64) -> Result<f64> {
    let mut s = 0.0;
    for w in cut_times.windows(2) {
        let inc = vsub(&path.value_at(w[1])?, &path.value_at(w[0])?);
        s += norm(&inc).powf(p);
    }
    Ok(s.powf(1.0 / p))
}

fn greedy_cuts(pts: &[Vector], d: usize) -> Vec<usize> {
    let n = pts.len();
    if n <= 2 {
        return (0..n).collect();
    }
    // project on the coordinate with the widest range
    let axis = (0..d)
        .max_by(|&a, &b| {
            let range = |c: usize| {
                let (lo, hi) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v[c]), h.max(v[c])));
                hi - lo
            };
            range(a).total_cmp(&range(b))
        })
        .unwrap();
    let mut cuts = vec![0];
    let mut dir = 0.0f64;
    for k in 1..n {
        let step = pts[k][axis] - pts[k - 1][axis];
        if step == 0.0 {
            continue;
        }
        if dir != 0.0 && step.signum() != dir && *cuts.last().unwrap() != k - 1 {
            cuts.push(k - 1);
        }
        dir = step.signum();
    }
    if *cuts.last().unwrap() != n - 1 {
        cuts.push(n - 1);
    }
    cuts
}

/// Lower bound from the partition at local extrema of one coordinate.
pub fn pvar_greedy_lower(path: &RealPath, p: f64) -> Result<VariationResult> {
    check_p(p)?;
    let pts = candidate_points(path);
    let times = candidate_times(path);
    let cuts = greedy_cuts(&pts, path.d);
    Ok(VariationResult {
        value: partition_sum(&pts, &cuts, p).powf(1.0 / p),
        p,
        method: Method::GreedyLower,
        partition: Some(cuts.iter().map(|&k| times[k]).collect()),
    })
}

/// Blocked bounds: exact DP inside blocks of at most `block` jumps and on the
/// skeleton of block boundaries.
///
/// * lower: the best of the concatenated block partitions, the boundary
///   skeleton partition and the greedy partition;
/// * upper: an interval crossing boundaries `b_1 … b_r` splits into a head in
///   one block, a skeleton increment `f_{b_r} − f_{b_1}` and a tail, so
///   `|a + b + c|^p ≤ 3^{p−1}(|a|^p + |b|^p + |c|^p)` gives
///   `V ≤ 3^{p−1}(Σ V_block + V_skeleton)`; the total variation bounds V^{1/p} as well.
pub fn pvar_capped(path: &RealPath, p: f64, block: usize) -> Result<VariationBounds> {
    check_p(p)?;
    if block == 0 {
        return Err(Error::Parameter { field: "block", reason: "must be positive".into() });
    }
    let d = path.d;
    let pts = candidate_points(path);
    let n = pts.len();
    let mut bounds: Vec<usize> = (0..n).step_by(block).collect();
    if *bounds.last().unwrap() != n - 1 {
        bounds.push(n - 1);
    }
    let inner: f64 = bounds.windows(2).map(|w| pvar_pow_points(&pts[w[0]..=w[1]], d, p)).sum();
    let skeleton_pts: Vec<Vector> = bounds.iter().map(|&k| pts[k]).collect();
    let skeleton = pvar_pow_points(&skeleton_pts, d, p);
    let greedy = partition_sum(&pts, &greedy_cuts(&pts, d), p);
    let total_variation: f64 = pts.windows(2).map(|w| norm(&vsub(&w[1], &w[0]))).sum();

    let lower = inner.max(skeleton).max(greedy).powf(1.0 / p);
    let split = 3f64.powf(p - 1.0) * (inner + skeleton);
    let upper = split.powf(1.0 / p).min(total_variation).max(lower);
    Ok(VariationBounds { lower, upper, p, block })
}

/// `sup_{u ∈ [s,t]} |X_u|`.
pub fn uniform_norm(path: &RealPath, s: f64, t: f64) -> Result<f64> {
    let a = path.index_at(s);
    let b = path.index_at(t);
    path.value_at(s)?;
    path.value_at(t)?;
    if s > t {
        return Err(Error::Range(format!("window start {s} after end {t}")));
    }
    Ok((a..=b).map(|k| norm(&path.value_after(k))).fold(0.0, f64::max))
}

/// `sup_{s<t} |X_t − X_s|`, the diameter of the range.
pub fn infty_var(path: &RealPath) -> f64 {
    let mut pts = path.points();
    pts.sort_by(|a, b| a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
    pts.dedup();
    let mut best = 0.0f64;
    for i in 0..pts.len() {
        for j in 0..i {
            best = best.max(norm(&vsub(&pts[i], &pts[j])));
        }
    }
    best
}

/// Homogeneous rough-path norm `|X_0| + ‖X‖_{p-var} + ‖𝕏‖_{p/2-var}^{1/2}`.
pub fn rough_norm(l2: &Level2Path, p: f64) -> Result<f64> {
    if !(p >= 2.0) {
        return Err(Error::Parameter { field: "p", reason: format!("rough norm needs p ≥ 2, got {p}") });
    }
    let level1 = pvar_exact(&l2.path, p)?.value;
    let level2 = p2var_exact(l2, p / 2.0)?.value;
    Ok(norm(&l2.path.initial) + level1 + level2.sqrt())
}

/// `sup_{t ≤ T} |f_t − slope · t|` for a piecewise-constant scalar `f`
/// (`initial`, then `values[k]` from `times[k]`). The difference is affine
/// between jumps, so the supremum is attained at a jump time, a left limit at
/// a jump time, or at `T`.
pub fn sup_deviation_from_drift(initial: f64, times: &[f64], values: &[f64], slope: f64, horizon: f64) -> f64 {
    let mut worst = initial.abs();
    let mut prev = initial;
    for (t, v) in times.iter().zip(values) {
        worst = worst.max((prev - slope * t).abs()).max((v - slope * t).abs());
        prev = *v;
    }
    worst.max((prev - slope * horizon).abs())
}

/// Entrywise maximum over `i, j < d` of the sup-deviation of a matrix prefix
/// from `t · slope`.
pub fn sup_deviation_matrix(prefix: &[Matrix], times: &[f64], slope: &Matrix, horizon: f64, d: usize) -> f64 {
    let mut worst = 0.0f64;
    let mut vals = Vec::with_capacity(times.len());
    for i in 0..d {
        for j in 0..d {
            vals.clear();
            vals.extend(prefix[1..].iter().map(|m| m[i][j]));
            worst = worst.max(sup_deviation_from_drift(prefix[0][i][j], times, &vals, slope[i][j], horizon));
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::MAX_DIM;
    use crate::rng::stream_rng;
    use crate::roughpath::{ito_lift, stratonovich_lift};
    use proptest::prelude::*;
    use rand::Rng;

    fn scalar_path(vals: &[f64], horizon: f64) -> RealPath {
        let times = (1..=vals.len()).map(|k| k as f64 * horizon / (vals.len() + 1) as f64).collect();
        RealPath::new(1, horizon, [0.0; 3], times, vals.iter().map(|&v| [v, 0.0, 0.0]).collect()).unwrap()
    }

    fn random_path(seed: u64, m: usize, d: usize) -> RealPath {
        let mut rng = stream_rng(seed);
        let mut x = [0.0; MAX_DIM];
        let mut vals = Vec::new();
        for _ in 0..m {
            for c in x.iter_mut().take(d) {
                *c += rng.random_range(-1.0..1.0);
            }
            vals.push(x);
        }
        let times = (1..=m).map(|k| k as f64).collect();
        RealPath::new(d, m as f64 + 1.0, [0.0; 3], times, vals).unwrap()
    }

    /// Exhaustive enumeration over subsets of interior candidate points,
    /// summing increments left to right.
    fn brute_force(pts: &[Vector], cost: &dyn Fn(usize, usize) -> f64) -> f64 {
        let n = pts.len();
        if n <= 1 {
            return 0.0;
        }
        let inner = n - 2;
        let mut best = f64::NEG_INFINITY;
        for mask in 0u64..(1u64 << inner) {
            let mut prev = 0;
            let mut s = 0.0;
            for k in 1..n - 1 {
                if mask & (1 << (k - 1)) != 0 {
                    s += cost(prev, k);
                    prev = k;
                }
            }
            s += cost(prev, n - 1);
            best = best.max(s);
        }
        best
    }

    #[test]
    fn monotone_path_takes_one_interval() {
        let path = scalar_path(&[0.5, 1.0, 2.5, 4.0], 5.0);
        for p in [1.5, 2.0, 3.0] {
            let r = pvar_exact(&path, p).unwrap();
            assert!((r.value - 4.0).abs() < 1e-12);
            let cuts = r.partition.unwrap();
            assert_eq!((cuts[0], *cuts.last().unwrap()), (0.0, 5.0));
            assert!((evaluate_partition(&path, &cuts, p).unwrap() - 4.0).abs() < 1e-12);
            let b = pvar_capped(&path, p, 2).unwrap();
            assert!((b.lower - 4.0).abs() < 1e-12 && (b.upper - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn alternating_path_uses_every_jump() {
        let m = 9;
        let vals: Vec<f64> = (1..=m).map(|k| (k % 2) as f64).collect();
        let path = scalar_path(&vals, 10.0);
        for p in [1.0, 2.0, 3.5] {
            let r = pvar_exact(&path, p).unwrap();
            assert!((r.value - (m as f64).powf(1.0 / p)).abs() < 1e-12);
        }
    }

    #[test]
    fn dp_matches_brute_force() {
        for seed in 0..100 {
            let m = 1 + (seed as usize % 10);
            let path = random_path(seed, m, 2);
            let pts = candidate_points(&path);
            for p in [1.0, 2.5, 3.0, 4.0] {
                let want = brute_force(&pts, &|i, j| norm(&vsub(&pts[j], &pts[i])).powf(p));
                let r = pvar_exact(&path, p).unwrap();
                let got = r.value.powf(p);
                assert!((got - want).abs() <= 1e-12 * want.max(1.0), "{got} vs {want}");
                let again = evaluate_partition(&path, r.partition.as_ref().unwrap(), p).unwrap();
                assert!((again - r.value).abs() <= 1e-12 * r.value.max(1.0));
            }
        }
    }

    #[test]
    fn p2var_matches_brute_force() {
        for seed in 0..40 {
            let path = random_path(100 + seed, 1 + seed as usize % 8, 2);
            for l2 in [ito_lift(&path), stratonovich_lift(&path)] {
                let times = candidate_times(&path);
                let m = path.num_jumps();
                let pts = candidate_points(&path);
                for q in [1.25, 1.5, 2.0] {
                    let want = brute_force(&pts, &|i, j| frobenius_sq(&l2.window_by_index(i.min(m), j.min(m))).sqrt().powf(q));
                    let got = p2var_exact(&l2, q).unwrap().value.powf(q);
                    assert!((got - want).abs() <= 1e-12 * want.max(1.0), "{got} vs {want}");
                }
                assert_eq!(times.len(), pts.len());
            }
        }
    }

    #[test]
    fn p2var_degenerate_lifts() {
        let zero = RealPath::new(2, 1.0, [0.0; 3], vec![], vec![]).unwrap();
        assert_eq!(p2var_exact(&ito_lift(&zero), 1.5).unwrap().value, 0.0);
        let one = RealPath::new(2, 1.0, [0.0; 3], vec![0.5], vec![[1.0, -1.0, 0.0]]).unwrap();
        assert_eq!(p2var_exact(&ito_lift(&one), 1.5).unwrap().value, 0.0);
    }

    #[test]
    fn spectral_norm_is_within_frobenius_equivalence() {
        let path = random_path(7, 30, 2);
        let l2 = ito_lift(&path);
        let f = p2var_exact_with(&l2, 1.5, MatrixNorm::Frobenius).unwrap().value;
        let s = p2var_exact_with(&l2, 1.5, MatrixNorm::Spectral).unwrap().value;
        assert!(s <= f * (1.0 + 1e-12) && f <= s * 2f64.sqrt() * (1.0 + 1e-12));
        let path3 = random_path(7, 5, 3);
        assert!(p2var_exact_with(&ito_lift(&path3), 1.5, MatrixNorm::Spectral).is_err());
    }

    #[test]
    fn greedy_is_a_lower_bound() {
        for seed in 0..200 {
            let path = random_path(1000 + seed, 100, 2);
            let exact = pvar_exact(&path, 3.0).unwrap().value;
            let greedy = pvar_greedy_lower(&path, 3.0).unwrap();
            assert!(greedy.value <= exact * (1.0 + 1e-12));
            let again = evaluate_partition(&path, greedy.partition.as_ref().unwrap(), 3.0).unwrap();
            assert!((again - greedy.value).abs() <= 1e-12 * greedy.value);
        }
    }

    #[test]
    fn capped_interval_contains_exact() {
        for seed in 0..50 {
            let path = random_path(2000 + seed, 500, 2);
            for p in [2.5, 3.0] {
                let exact = pvar_exact(&path, p).unwrap().value;
                let b = pvar_capped(&path, p, 64).unwrap();
                assert!(b.lower <= exact * (1.0 + 1e-12) && exact <= b.upper * (1.0 + 1e-12), "{b:?} {exact}");
            }
        }
    }

    #[test]
    fn exact_cap_is_enforced() {
        let path = random_path(3, EXACT_CAP + 1, 1);
        assert!(matches!(pvar_exact(&path, 3.0), Err(Error::ExactCap { .. })));
        assert!(pvar_capped(&path, 3.0, 1000).is_ok());
        assert!(matches!(pvar_exact(&path, 0.5), Err(Error::Parameter { .. })));
    }

    #[test]
    fn norms_on_constant_path() {
        let path = RealPath::new(2, 2.0, [1.0, 2.0, 0.0], vec![1.0], vec![[1.0, 2.0, 0.0]]).unwrap();
        assert!((uniform_norm(&path, 0.0, 2.0).unwrap() - 5f64.sqrt()).abs() < 1e-15);
        assert_eq!(infty_var(&path), 0.0);
        assert_eq!(pvar_exact(&path, 2.5).unwrap().value, 0.0);
    }

    #[test]
    fn norm_comparisons_on_random_paths() {
        for seed in 0..50 {
            let mut path = random_path(3000 + seed, 20, 2);
            path.initial = [0.3, -0.2, 0.0];
            let unif = uniform_norm(&path, 0.0, path.horizon).unwrap();
            let ivar = infty_var(&path);
            let x0 = norm(&path.initial);
            assert!(unif <= ivar + x0 + 1e-12);
            assert!(ivar + x0 <= 3.0 * unif + 1e-12);
            let p3 = pvar_exact(&path, 3.0).unwrap().value;
            let p4 = pvar_exact(&path, 4.0).unwrap().value;
            assert!(ivar <= p4 * (1.0 + 1e-12) && p4 <= p3 * (1.0 + 1e-12));
            let rn = rough_norm(&ito_lift(&path), 3.0).unwrap();
            assert!(rn >= x0 + p3);
        }
    }

    #[test]
    fn drift_deviation_checks_left_limits() {
        // f jumps from 0 to 2 at t = 1; slope 1 on [0, 3]
        // left limit at 1: |0 − 1| = 1; after: |2 − 1| = 1; at T: |2 − 3| = 1; at 0: 0
        assert_eq!(sup_deviation_from_drift(0.0, &[1.0], &[2.0], 1.0, 3.0), 1.0);
        // deviation largest just before a jump
        assert_eq!(sup_deviation_from_drift(0.0, &[2.0], &[2.0], 1.0, 2.5), 2.0);
        // compare with dense sampling
        let path = random_path(5, 30, 1);
        let vals: Vec<f64> = path.values.iter().map(|v| v[0]).collect();
        let exact = sup_deviation_from_drift(0.0, &path.times, &vals, 0.37, path.horizon);
        let mut sampled = 0.0f64;
        for k in 0..=100_000 {
            let t = path.horizon * k as f64 / 100_000.0;
            sampled = sampled.max((path.value_at(t).unwrap()[0] - 0.37 * t).abs());
        }
        assert!(sampled <= exact + 1e-12 && exact - sampled < 1e-3);
    }

    proptest! {
        #[test]
        fn infinity_variation_is_dominated(seed in 0u64..100_000, p in 1.0f64..6.0) {
            let path = random_path(seed, 15, 2);
            let v = pvar_exact(&path, p).unwrap().value;
            prop_assert!(infty_var(&path) <= v * (1.0 + 1e-12));
        }
    }
}
