//! Level-2 calculus on piecewise-constant paths.
//!
//! All objects live on a jump skeleton: a strictly increasing list of jump
//! times in `(0, T]` and the value held after each jump. Left limits at a
//! jump time are the value before the jump.
//!
//! Window quantities are evaluated from prefix accumulators:
//!
//! * Itô lift: `𝕏_{s,t} = 𝕏_{0,t} − 𝕏_{0,s} − X_{0,s} ⊗ X_{s,t}`;
//! * quadratic covariation: `Q_{s,t} = Q_{0,t} − Q_{0,s}`;
//! * left-point integral: `I_{s,t}(X, Y) = P_t − P_s − X_s ⊗ Y_{s,t}` with
//!   `P_t = Σ_{u ≤ t} X_{u−} ⊗ ΔY_u`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corrector::CocycleField;
use crate::error::{Error, Result};
use crate::linalg::{
    add_outer, madd, mscale, msub, outer, vscale, vsub, CompensatedSum, Matrix, Vector, MAX_DIM,
    ZERO_MAT,
};
use crate::walk::JumpPath;

/// Paths longer than this accumulate with compensated summation.
pub const COMPENSATED_THRESHOLD: usize = 1_000_000;

/// A real-valued càdlàg path that is constant between jumps.
#[derive(Debug, Clone, PartialEq)]
pub struct RealPath {
    pub d: usize,
    pub horizon: f64,
    pub initial: Vector,
    pub times: Vec<f64>,
    /// Value held from `times[k]` on.
    pub values: Vec<Vector>,
}

impl RealPath {
    pub fn new(d: usize, horizon: f64, initial: Vector, times: Vec<f64>, values: Vec<Vector>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::Format(format!("{} times but {} values", times.len(), values.len())));
        }
        if !(horizon > 0.0) {
            return Err(Error::Range(format!("horizon must be positive, got {horizon}")));
        }
        let mut prev = 0.0;
        for &t in &times {
            if !(t > prev && t <= horizon) {
                return Err(Error::Format(format!("jump time {t} is not increasing within (0, {horizon}]")));
            }
            prev = t;
        }
        Ok(Self { d, horizon, initial, times, values })
    }

    pub fn num_jumps(&self) -> usize {
        self.times.len()
    }

    /// Number of jumps in `(0, t]`.
    pub fn index_at(&self, t: f64) -> usize {
        self.times.partition_point(|&s| s <= t)
    }

    /// Value after `k` jumps.
    pub fn value_after(&self, k: usize) -> Vector {
        if k == 0 {
            self.initial
        } else {
            self.values[k - 1]
        }
    }

    pub fn value_at(&self, t: f64) -> Result<Vector> {
        self.check_time(t)?;
        Ok(self.value_after(self.index_at(t)))
    }

    /// Increment `X_{t_k−, t_k}` of jump `k` (0-based).
    pub fn jump(&self, k: usize) -> Vector {
        vsub(&self.values[k], &self.value_after(k))
    }

    /// Candidate cut points `0, t_1, …, t_m` together with their values.
    pub fn points(&self) -> Vec<Vector> {
        std::iter::once(self.initial).chain(self.values.iter().copied()).collect()
    }

    pub(crate) fn check_time(&self, t: f64) -> Result<()> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::Range(format!("t = {t} outside [0, {}]", self.horizon)));
        }
        Ok(())
    }

    pub(crate) fn check_window(&self, s: f64, t: f64) -> Result<()> {
        self.check_time(s)?;
        self.check_time(t)?;
        if s > t {
            return Err(Error::Range(format!("window start {s} after end {t}")));
        }
        Ok(())
    }

    pub fn same_skeleton(&self, other: &RealPath) -> Result<()> {
        if self.horizon != other.horizon || self.times != other.times {
            return Err(Error::Skeleton(format!(
                "{} jumps on [0, {}] vs {} jumps on [0, {}]",
                self.num_jumps(),
                self.horizon,
                other.num_jumps(),
                other.horizon
            )));
        }
        Ok(())
    }

    /// Parse the `t,x1,…,xd` CSV written by [`JumpPath::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Format("empty path file".into()))?;
        let d = header.split(',').count() - 1;
        if !(1..=MAX_DIM).contains(&d) || !header.starts_with('t') {
            return Err(Error::Format(format!("bad path header `{header}`")));
        }
        let mut rows = Vec::new();
        for line in lines {
            let fields: Vec<f64> = line
                .split(',')
                .map(|f| f.trim().parse::<f64>().map_err(|e| Error::Format(format!("`{f}`: {e}"))))
                .collect::<Result<_>>()?;
            if fields.len() != d + 1 {
                return Err(Error::Format(format!("row `{line}` has {} fields", fields.len())));
            }
            let mut v = [0.0; MAX_DIM];
            v[..d].copy_from_slice(&fields[1..]);
            rows.push((fields[0], v));
        }
        if rows.len() < 2 || rows[0].0 != 0.0 {
            return Err(Error::Format("path needs rows for t = 0 and t = T".into()));
        }
        let (horizon, _) = rows[rows.len() - 1];
        let initial = rows[0].1;
        let inner = &rows[1..rows.len() - 1];
        Self::new(d, horizon, initial, inner.iter().map(|r| r.0).collect(), inner.iter().map(|r| r.1).collect())
    }
}

/// Accumulate `prefix[k] = Σ_{j<k} term(j)` entrywise, compensated for long paths.
fn prefix_sums(m: usize, mut term: impl FnMut(usize) -> Matrix) -> Vec<Matrix> {
    let mut out = Vec::with_capacity(m + 1);
    out.push(ZERO_MAT);
    if m > COMPENSATED_THRESHOLD {
        let mut acc = [[CompensatedSum::default(); MAX_DIM]; MAX_DIM];
        for k in 0..m {
            let t = term(k);
            let mut cur = ZERO_MAT;
            for i in 0..MAX_DIM {
                for j in 0..MAX_DIM {
                    acc[i][j].add(t[i][j]);
                    cur[i][j] = acc[i][j].value();
                }
            }
            out.push(cur);
        }
    } else {
        let mut acc = ZERO_MAT;
        for k in 0..m {
            acc = madd(&acc, &term(k));
            out.push(acc);
        }
    }
    out
}

/// Additive two-parameter function given by its prefix values at jump times.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoParamAccumulator {
    pub times: Vec<f64>,
    pub horizon: f64,
    /// `prefix[k]` is the value on `(0, t_k]`; `prefix[0] = 0`.
    pub prefix: Vec<Matrix>,
}

impl TwoParamAccumulator {
    pub fn at(&self, t: f64) -> Matrix {
        self.prefix[self.times.partition_point(|&s| s <= t)]
    }

    pub fn window(&self, s: f64, t: f64) -> Result<Matrix> {
        if !(0.0 <= s && s <= t && t <= self.horizon) {
            return Err(Error::Range(format!("window ({s}, {t}] outside [0, {}]", self.horizon)));
        }
        Ok(msub(&self.at(t), &self.at(s)))
    }
}

/// Prefix form of `Q(X, Y)`.
pub fn quadratic_covariation_prefix(x: &RealPath, y: &RealPath) -> Result<TwoParamAccumulator> {
    x.same_skeleton(y)?;
    let prefix = prefix_sums(x.num_jumps(), |k| outer(&x.jump(k), &y.jump(k)));
    Ok(TwoParamAccumulator { times: x.times.clone(), horizon: x.horizon, prefix })
}

/// `Q_{s,t}(X, Y) = Σ_{s<u≤t} X_{u−,u} ⊗ Y_{u−,u}`, summed directly over the window.
pub fn quadratic_covariation(x: &RealPath, y: &RealPath, s: f64, t: f64) -> Result<Matrix> {
    x.same_skeleton(y)?;
    x.check_window(s, t)?;
    let mut q = ZERO_MAT;
    for k in x.index_at(s)..x.index_at(t) {
        add_outer(&mut q, 1.0, &x.jump(k), &y.jump(k));
    }
    Ok(q)
}

/// `I_{s,t}(f, g)` for the scalar components `f = X^i`, `g = Y^j`:
/// `Σ_{s<u≤t} f_{u−} g_{u−,u} − f_s g_{s,t}`, summed directly over the window.
pub fn left_point_integral(x: &RealPath, i: usize, y: &RealPath, j: usize, s: f64, t: f64) -> Result<f64> {
    x.same_skeleton(y)?;
    x.check_window(s, t)?;
    let (a, b) = (x.index_at(s), x.index_at(t));
    let mut sum = 0.0;
    for k in a..b {
        sum += x.value_after(k)[i] * y.jump(k)[j];
    }
    let fs = x.value_after(a)[i];
    let g_st = y.value_after(b)[j] - y.value_after(a)[j];
    Ok(sum - fs * g_st)
}

/// Matrix form `I(X, Y)_{ij} = I(X^i, Y^j)`.
pub fn left_point_integral_matrix(x: &RealPath, y: &RealPath, s: f64, t: f64) -> Result<Matrix> {
    let mut m = ZERO_MAT;
    for i in 0..x.d {
        for j in 0..y.d {
            m[i][j] = left_point_integral(x, i, y, j, s, t)?;
        }
    }
    Ok(m)
}

/// Prefix form of `I(X, Y)`; windows are recovered with the Chen correction.
#[derive(Debug, Clone)]
pub struct LeftPointPrefix<'a> {
    x: &'a RealPath,
    y: &'a RealPath,
    acc: TwoParamAccumulator,
}

impl<'a> LeftPointPrefix<'a> {
    pub fn new(x: &'a RealPath, y: &'a RealPath) -> Result<Self> {
        x.same_skeleton(y)?;
        let prefix = prefix_sums(x.num_jumps(), |k| outer(&x.value_after(k), &y.jump(k)));
        Ok(Self { x, y, acc: TwoParamAccumulator { times: x.times.clone(), horizon: x.horizon, prefix } })
    }

    pub fn window_by_index(&self, a: usize, b: usize) -> Matrix {
        let raw = msub(&self.acc.prefix[b], &self.acc.prefix[a]);
        let y_ab = vsub(&self.y.value_after(b), &self.y.value_after(a));
        let mut out = raw;
        add_outer(&mut out, -1.0, &self.x.value_after(a), &y_ab);
        out
    }

    pub fn window(&self, s: f64, t: f64) -> Result<Matrix> {
        self.x.check_window(s, t)?;
        Ok(self.window_by_index(self.x.index_at(s), self.x.index_at(t)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LiftKind {
    Ito,
    Stratonovich,
}

/// A path together with its level-2 prefix `𝕏_{0,t_k}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Level2Path {
    pub path: RealPath,
    /// `xx[k] = 𝕏_{0,t_k}`, `xx[0] = 0`.
    pub xx: Vec<Matrix>,
    pub kind: LiftKind,
}

/// Itô lift `𝕏_{0,t} = Σ_{0<u≤t} X_{0,u−} ⊗ X_{u−,u}`.
pub fn ito_lift(path: &RealPath) -> Level2Path {
    let xx = prefix_sums(path.num_jumps(), |k| {
        outer(&vsub(&path.value_after(k), &path.initial), &path.jump(k))
    });
    Level2Path { path: path.clone(), xx, kind: LiftKind::Ito }
}

/// Stratonovich lift `𝕏̄ = 𝕏 + ½ Q(X, X)`: the iterated integral of the path
/// with every jump traversed along a straight segment.
pub fn stratonovich_lift(path: &RealPath) -> Level2Path {
    let ito = ito_lift(path);
    let q = quadratic_covariation_prefix(path, path).expect("a path shares its own skeleton");
    let xx = ito.xx.iter().zip(&q.prefix).map(|(a, b)| madd(a, &mscale(b, 0.5))).collect();
    Level2Path { path: ito.path, xx, kind: LiftKind::Stratonovich }
}

impl Level2Path {
    /// `𝕏_{t_a, t_b}` between cut points (index 0 is t = 0).
    pub fn window_by_index(&self, a: usize, b: usize) -> Matrix {
        let x0a = vsub(&self.path.value_after(a), &self.path.initial);
        let xab = vsub(&self.path.value_after(b), &self.path.value_after(a));
        let mut out = msub(&self.xx[b], &self.xx[a]);
        add_outer(&mut out, -1.0, &x0a, &xab);
        out
    }

    /// Terminal value `𝕏_{0,T}`.
    pub fn terminal(&self) -> Matrix {
        *self.xx.last().unwrap()
    }

    /// CSV export: `t,x1..xd,xx11..xxdd` at t = 0, each jump and t = T.
    pub fn to_csv(&self) -> String {
        let d = self.path.d;
        let mut out = String::from("t");
        for i in 1..=d {
            write!(out, ",x{i}").unwrap();
        }
        for i in 1..=d {
            for j in 1..=d {
                write!(out, ",xx{i}{j}").unwrap();
            }
        }
        out.push('\n');
        let m = self.path.num_jumps();
        let mut row = |t: f64, k: usize| {
            write!(out, "{t:?}").unwrap();
            let x = self.path.value_after(k);
            for c in x.iter().take(d) {
                write!(out, ",{c:?}").unwrap();
            }
            for r in self.xx[k].iter().take(d) {
                for c in r.iter().take(d) {
                    write!(out, ",{c:?}").unwrap();
                }
            }
            out.push('\n');
        };
        row(0.0, 0);
        for k in 1..=m {
            row(self.path.times[k - 1], k);
        }
        row(self.path.horizon, m);
        out
    }
}

/// Window value `𝕏_{s,t}` via Chen's relation from the prefix.
pub fn chen_eval(l2: &Level2Path, s: f64, t: f64) -> Result<Matrix> {
    l2.path.check_window(s, t)?;
    Ok(l2.window_by_index(l2.path.index_at(s), l2.path.index_at(t)))
}

/// Diffusive rescaling `X^n_t = n^{−1/2} X_{nt}` on `[0, horizon]`.
pub fn rescale(path: &RealPath, n: f64, horizon: f64) -> Result<RealPath> {
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::Range(format!("scale must be positive, got {n}")));
    }
    if !(horizon > 0.0) || n * horizon > path.horizon {
        return Err(Error::Range(format!(
            "rescaled horizon {horizon} needs {} ≤ {} time units",
            n * horizon,
            path.horizon
        )));
    }
    let keep = path.index_at(n * horizon);
    let s = n.sqrt().recip();
    Ok(RealPath {
        d: path.d,
        horizon,
        initial: vscale(&path.initial, s),
        times: path.times[..keep].iter().map(|t| t / n).collect(),
        values: path.values[..keep].iter().map(|v| vscale(v, s)).collect(),
    })
}

/// Rescale a lift: level 1 as in [`rescale`], level 2 divided by `n`.
pub fn rescale_lift(l2: &Level2Path, n: f64, horizon: f64) -> Result<Level2Path> {
    let path = rescale(&l2.path, n, horizon)?;
    let xx = l2.xx[..=path.num_jumps()].iter().map(|m| mscale(m, 1.0 / n)).collect();
    Ok(Level2Path { path, xx, kind: l2.kind })
}

/// Split `X = M + R` with `R_t = χ(site_t) − χ(site_0)` and `M = X − R`.
pub fn decompose(path: &JumpPath, field: &CocycleField) -> Result<(RealPath, RealPath)> {
    let mut m_vals = Vec::with_capacity(path.num_jumps());
    let mut r_vals = Vec::with_capacity(path.num_jumps());
    let base = field.chi_at(path.start)?;
    for (k, pos) in path.positions.iter().enumerate() {
        let r = vsub(&field.chi_at(path.sites[k] as usize)?, &base);
        let x = crate::linalg::to_vector(pos);
        m_vals.push(vsub(&x, &r));
        r_vals.push(r);
    }
    let zero = [0.0; MAX_DIM];
    let m = RealPath::new(path.d, path.horizon, zero, path.times.clone(), m_vals)?;
    let r = RealPath::new(path.d, path.horizon, zero, path.times.clone(), r_vals)?;
    Ok((m, r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{max_abs, transpose};
    use crate::rng::stream_rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn unit(i: usize) -> Vector {
        let mut v = [0.0; MAX_DIM];
        v[i] = 1.0;
        v
    }

    fn random_path(seed: u64, m: usize, d: usize) -> RealPath {
        let mut rng = stream_rng(seed);
        let mut t = 0.0;
        let mut times = Vec::new();
        let mut values = Vec::new();
        let mut x = [0.0; MAX_DIM];
        for _ in 0..m {
            t += rng.random::<f64>() + 1e-3;
            for c in x.iter_mut().take(d) {
                *c += rng.random_range(-1.0..1.0);
            }
            times.push(t);
            values.push(x);
        }
        let mut init = [0.0; MAX_DIM];
        init[0] = 0.0;
        RealPath::new(d, t + 1.0, init, times, values).unwrap()
    }

    /// Brute-force `𝕏_{s,t} = Σ_{s<u≤t} X_{s,u−} ⊗ X_{u−,u}`.
    fn windowed_ito(path: &RealPath, s: f64, t: f64) -> Matrix {
        let xs = path.value_at(s).unwrap();
        let mut acc = ZERO_MAT;
        for k in 0..path.num_jumps() {
            let u = path.times[k];
            if u > s && u <= t {
                add_outer(&mut acc, 1.0, &vsub(&path.value_after(k), &xs), &path.jump(k));
            }
        }
        acc
    }

    #[test]
    fn lift_of_short_paths() {
        let zero = RealPath::new(2, 1.0, [0.0; 3], vec![], vec![]).unwrap();
        assert_eq!(ito_lift(&zero).terminal(), ZERO_MAT);
        let one = RealPath::new(2, 1.0, [0.0; 3], vec![0.5], vec![unit(0)]).unwrap();
        assert_eq!(ito_lift(&one).terminal(), ZERO_MAT);
        let two = RealPath::new(2, 1.0, [0.0; 3], vec![0.3, 0.6], vec![unit(0), [1.0, 1.0, 0.0]]).unwrap();
        assert_eq!(ito_lift(&two).terminal(), outer(&unit(0), &unit(1)));
        // single jump: Stratonovich adds half the squared jump
        let strat = stratonovich_lift(&one).terminal();
        assert_eq!(strat, mscale(&outer(&unit(0), &unit(0)), 0.5));
    }

    #[test]
    fn chen_windows_match_direct_summation() {
        let path = random_path(5, 5, 2);
        let l2 = ito_lift(&path);
        let mut rng = stream_rng(6);
        assert_eq!(chen_eval(&l2, 0.7, 0.7).unwrap(), ZERO_MAT);
        for _ in 0..200 {
            let a = rng.random_range(0.0..path.horizon);
            let b = rng.random_range(0.0..path.horizon);
            let (s, t) = (a.min(b), a.max(b));
            let diff = max_abs(&msub(&chen_eval(&l2, s, t).unwrap(), &windowed_ito(&path, s, t)));
            assert!(diff < 1e-12, "{diff}");
            assert_eq!(chen_eval(&l2, 0.0, t).unwrap(), l2.xx[path.index_at(t)]);
        }
        assert!(chen_eval(&l2, 0.5, 0.1).is_err());
        assert!(chen_eval(&l2, 0.0, path.horizon + 1.0).is_err());
    }

    #[test]
    fn chen_relation_on_random_triples() {
        let path = random_path(8, 40, 3);
        let l2 = ito_lift(&path);
        let mut rng = stream_rng(9);
        for _ in 0..1000 {
            let mut v = [
                rng.random_range(0.0..path.horizon),
                rng.random_range(0.0..path.horizon),
                rng.random_range(0.0..path.horizon),
            ];
            v.sort_by(|a, b| a.total_cmp(b));
            let [r, s, t] = v;
            let lhs = msub(&msub(&chen_eval(&l2, r, t).unwrap(), &chen_eval(&l2, r, s).unwrap()), &chen_eval(&l2, s, t).unwrap());
            let x_rs = vsub(&path.value_at(s).unwrap(), &path.value_at(r).unwrap());
            let x_st = vsub(&path.value_at(t).unwrap(), &path.value_at(s).unwrap());
            assert!(max_abs(&msub(&lhs, &outer(&x_rs, &x_st))) < 1e-10);
        }
    }

    #[test]
    fn left_point_integral_cases() {
        let x = RealPath::new(1, 2.0, [0.0; 3], vec![0.5, 1.0, 1.5], vec![[1.0, 0.0, 0.0], [3.0, 0.0, 0.0], [2.0, 0.0, 0.0]]).unwrap();
        let constant = RealPath::new(1, 2.0, [4.0, 0.0, 0.0], vec![0.5, 1.0, 1.5], vec![[4.0, 0.0, 0.0]; 3]).unwrap();
        assert_eq!(left_point_integral(&x, 0, &constant, 0, 0.0, 2.0).unwrap(), 0.0);
        assert_eq!(left_point_integral(&constant, 0, &x, 0, 0.2, 1.7).unwrap(), 0.0);
        // hand enumeration on (0.6, 1.6]: jumps at 1.0 (+2) and 1.5 (−1); x_{0.6} = 1
        // Σ x_{u−} Δx = 1·2 + 3·(−1) = −1; minus x_s · x_{s,t} = 1 · 1
        assert_eq!(left_point_integral(&x, 0, &x, 0, 0.6, 1.6).unwrap(), -2.0);
        let other = RealPath::new(1, 2.0, [0.0; 3], vec![0.5], vec![[1.0, 0.0, 0.0]]).unwrap();
        assert!(matches!(left_point_integral(&x, 0, &other, 0, 0.0, 1.0), Err(Error::Skeleton(_))));
    }

    #[test]
    fn prefix_left_point_matches_direct() {
        let x = random_path(11, 30, 2);
        let y = RealPath { values: x.values.iter().map(|v| [v[1] * 2.0, -v[0], 0.0]).collect(), ..x.clone() };
        let prefix = LeftPointPrefix::new(&x, &y).unwrap();
        let mut rng = stream_rng(12);
        for _ in 0..100 {
            let a = rng.random_range(0.0..x.horizon);
            let b = rng.random_range(0.0..x.horizon);
            let (s, t) = (a.min(b), a.max(b));
            let direct = left_point_integral_matrix(&x, &y, s, t).unwrap();
            assert!(max_abs(&msub(&prefix.window(s, t).unwrap(), &direct)) < 1e-12);
        }
        // the Itô lift is I(X, X)
        let l2 = ito_lift(&x);
        let ii = LeftPointPrefix::new(&x, &x).unwrap();
        assert!(max_abs(&msub(&ii.window(1.0, 9.0).unwrap(), &chen_eval(&l2, 1.0, 9.0).unwrap())) < 1e-12);
    }

    #[test]
    fn quadratic_covariation_of_alternating_path() {
        let m = 7;
        let times: Vec<f64> = (1..=m).map(|k| k as f64 / 10.0).collect();
        let values = (1..=m).map(|k| [if k % 2 == 1 { 1.0 } else { 0.0 }, 0.0, 0.0]).collect();
        let x = RealPath::new(1, 1.0, [0.0; 3], times, values).unwrap();
        assert_eq!(quadratic_covariation(&x, &x, 0.0, 1.0).unwrap()[0][0], m as f64);
    }

    #[test]
    fn summation_by_parts_on_random_windows() {
        let x = random_path(21, 25, 2);
        let y = RealPath { values: x.values.iter().map(|v| [v[0] * v[1], v[1] - 0.5, 0.0]).collect(), ..x.clone() };
        let mut rng = stream_rng(22);
        for _ in 0..100 {
            let a = rng.random_range(0.0..x.horizon);
            let b = rng.random_range(0.0..x.horizon);
            let (s, t) = (a.min(b), a.max(b));
            let lhs = madd(
                &left_point_integral_matrix(&x, &y, s, t).unwrap(),
                &transpose(&left_point_integral_matrix(&y, &x, s, t).unwrap()),
            );
            let xs = vsub(&x.value_at(t).unwrap(), &x.value_at(s).unwrap());
            let ys = vsub(&y.value_at(t).unwrap(), &y.value_at(s).unwrap());
            let rhs = msub(&outer(&xs, &ys), &quadratic_covariation(&x, &y, s, t).unwrap());
            let scale = 1.0 + max_abs(&rhs);
            assert!(max_abs(&msub(&lhs, &rhs)) <= 1e-10 * scale);
        }
    }

    #[test]
    fn stratonovich_equals_piecewise_linear_integral() {
        let path = random_path(31, 3, 2);
        let strat = stratonovich_lift(&path).terminal();
        // midpoint Riemann sums along the polyline through the jump values;
        // exact for the linear integrand on every segment
        let pts = path.points();
        let mut acc = ZERO_MAT;
        let sub = 64;
        for w in pts.windows(2) {
            let step = vscale(&vsub(&w[1], &w[0]), 1.0 / sub as f64);
            for k in 0..sub {
                let mid = crate::linalg::vadd(&w[0], &vscale(&step, k as f64 + 0.5));
                add_outer(&mut acc, 1.0, &vsub(&mid, &pts[0]), &step);
            }
        }
        assert!(max_abs(&msub(&strat, &acc)) < 1e-12);
        // antisymmetric parts of the two lifts agree
        let ito = ito_lift(&path).terminal();
        let anti = |m: &Matrix| msub(m, &transpose(m));
        assert!(max_abs(&msub(&anti(&ito), &anti(&strat))) < 1e-14);
    }

    #[test]
    fn stratonovich_minus_ito_is_half_q_exactly() {
        let path = random_path(41, 200, 3);
        let ito = ito_lift(&path);
        let strat = stratonovich_lift(&path);
        let q = quadratic_covariation_prefix(&path, &path).unwrap();
        for k in 0..=path.num_jumps() {
            assert_eq!(strat.xx[k], madd(&ito.xx[k], &mscale(&q.prefix[k], 0.5)));
        }
    }

    #[test]
    fn rescaling_identities() {
        let path = random_path(51, 50, 2);
        let same = rescale(&path, 1.0, path.horizon).unwrap();
        assert_eq!(same, path);
        let h = path.horizon / 8.0;
        let twice = rescale(&rescale(&path, 4.0, path.horizon / 4.0).unwrap(), 2.0, h).unwrap();
        let once = rescale(&path, 8.0, h).unwrap();
        assert_eq!(twice.times, once.times);
        for (a, b) in twice.values.iter().zip(&once.values) {
            assert!(crate::linalg::norm(&vsub(a, b)) < 1e-14);
        }
        let lifted = ito_lift(&rescale(&path, 3.0, path.horizon / 3.0).unwrap());
        let scaled = rescale_lift(&ito_lift(&path), 3.0, path.horizon / 3.0).unwrap();
        assert_eq!(lifted.path, scaled.path);
        for (a, b) in lifted.xx.iter().zip(&scaled.xx) {
            assert!(max_abs(&msub(a, b)) < 1e-12);
        }
        assert!(rescale(&path, 2.0, path.horizon).is_err());
    }

    #[test]
    fn csv_roundtrip() {
        let path = random_path(61, 10, 2);
        let text = {
            let mut s = String::from("t,x1,x2\n0.0,0,0\n");
            for (t, v) in path.times.iter().zip(&path.values) {
                s.push_str(&format!("{t:?},{:?},{:?}\n", v[0], v[1]));
            }
            s.push_str(&format!("{:?},{:?},{:?}\n", path.horizon, path.values[9][0], path.values[9][1]));
            s
        };
        assert_eq!(RealPath::from_csv(&text).unwrap(), path);
        assert!(RealPath::from_csv("t,x1\n0.5,0\n1.0,0\n").is_err());
        let lift_csv = ito_lift(&path).to_csv();
        assert!(lift_csv.starts_with("t,x1,x2,xx11,xx12,xx21,xx22\n"));
        assert_eq!(lift_csv.lines().count(), 13);
    }

    proptest! {
        #[test]
        fn chen_defect_is_small(seed in 0u64..10_000, m in 0usize..60, a in 0.0f64..1.0, b in 0.0f64..1.0, c in 0.0f64..1.0) {
            let path = random_path(seed, m, 2);
            let l2 = ito_lift(&path);
            let mut v = [a * path.horizon, b * path.horizon, c * path.horizon];
            v.sort_by(|x, y| x.total_cmp(y));
            let [r, s, t] = v;
            let lhs = msub(&msub(&chen_eval(&l2, r, t).unwrap(), &chen_eval(&l2, r, s).unwrap()), &chen_eval(&l2, s, t).unwrap());
            let x_rs = vsub(&path.value_at(s).unwrap(), &path.value_at(r).unwrap());
            let x_st = vsub(&path.value_at(t).unwrap(), &path.value_at(s).unwrap());
            prop_assert!(max_abs(&msub(&lhs, &outer(&x_rs, &x_st))) < 1e-9);
        }

        #[test]
        fn covariation_is_additive(seed in 0u64..10_000, a in 0.0f64..1.0, b in 0.0f64..1.0, c in 0.0f64..1.0) {
            let x = random_path(seed, 20, 2);
            let mut v = [a * x.horizon, b * x.horizon, c * x.horizon];
            v.sort_by(|p, q| p.total_cmp(q));
            let whole = quadratic_covariation(&x, &x, v[0], v[2]).unwrap();
            let parts = madd(&quadratic_covariation(&x, &x, v[0], v[1]).unwrap(), &quadratic_covariation(&x, &x, v[1], v[2]).unwrap());
            prop_assert!(max_abs(&msub(&whole, &parts)) < 1e-12);
        }
    }
}
