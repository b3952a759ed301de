//! Periodic conductance environments on the torus `(Z/LZ)^d`.
//!
//! Vertices are indexed lexicographically, first coordinate slowest:
//! `index(x) = ((x_1 · L) + x_2) · L + x_3` (d = 3), so vertex order matches
//! the order of the coordinate tuples. Each undirected edge `{x, x + z}` is
//! stored once, under the representative offset `z` of the positive half
//! `J+` of the jump range (first nonzero coordinate positive).
//!
//! # Binary file layout (little endian, version 1)
//!
//! ```text
//! offset     size        field
//! 0          8           magic  b"RCMENV\0\x01"
//! 8          4           format version (u32, = 1)
//! 12         4           d (u32)
//! 16         4           L (u32)
//! 20         8           seed (u64)
//! 28         1           law tag: 0 constant, 1 uniform_interval,
//!                        2 percolation_weighted, 3 line_model, 4 long_range_poly
//! 29         32          law parameters, four f64:
//!                          constant          [c, 0, 0, 0]
//!                          uniform_interval  [a, b, 0, 0]
//!                          percolation       [a, b, p, 0]
//!                          line_model        [a, b, 0, 0]
//!                          long_range_poly   [a, b, 0, alpha]
//! 61         4           range R (u32, long_range_poly only, else 0)
//! 65         4           |J+| (u32)
//! 69         4·d·|J+|    offsets of J+, i32 per coordinate
//! ...        8·|J+|·L^d  conductances f64, direction-major:
//!                        for k in 0..|J+| { for v in 0..L^d { ω({v, v + z_k}) } }
//! ```

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{param, Error, Result};
use crate::linalg::{Point, MAX_DIM};
use crate::rng::{stream_rng, stream_seed};

const MAGIC: &[u8; 8] = b"RCMENV\0\x01";
const FORMAT_VERSION: u32 = 1;

/// Law of the i.i.d. (or line-correlated) conductances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConductanceLaw {
    Constant { c: f64 },
    UniformInterval { a: f64, b: f64 },
    /// Bond percolation with parameter `p`; open bonds carry Uniform[a, b].
    PercolationWeighted { p: f64, a: f64, b: f64 },
    /// One Uniform[a, b] value per lattice line: `ω({x, x + e_i})` depends
    /// only on `i` and the coordinates of `x` orthogonal to `e_i`.
    LineModel { a: f64, b: f64 },
    /// Edges `{x, y}` with `|x − y| ≤ range`, Uniform[a, b] · |x − y|^(−alpha).
    LongRangePoly { alpha: f64, range: u32, a: f64, b: f64 },
}

impl ConductanceLaw {
    pub fn tag(&self) -> String {
        match *self {
            Self::Constant { c } => format!("constant(c={c})"),
            Self::UniformInterval { a, b } => format!("uniform_interval(a={a},b={b})"),
            Self::PercolationWeighted { p, a, b } => {
                format!("percolation_weighted(p={p},a={a},b={b})")
            }
            Self::LineModel { a, b } => format!("line_model(a={a},b={b})"),
            Self::LongRangePoly { alpha, range, a, b } => {
                format!("long_range_poly(alpha={alpha},range={range},a={a},b={b})")
            }
        }
    }

    pub fn validate(&self, d: usize, side: usize) -> Result<()> {
        let interval = |a: f64, b: f64| -> Result<()> {
            if !(a > 0.0 && a.is_finite()) {
                return Err(param("a", format!("must be positive and finite, got {a}")));
            }
            if !(b >= a && b.is_finite()) {
                return Err(param("b", format!("must satisfy a ≤ b < ∞, got a={a}, b={b}")));
            }
            Ok(())
        };
        match *self {
            Self::Constant { c } => {
                if !(c > 0.0 && c.is_finite()) {
                    return Err(param("c", format!("must be positive and finite, got {c}")));
                }
                Ok(())
            }
            Self::UniformInterval { a, b } | Self::LineModel { a, b } => interval(a, b),
            Self::PercolationWeighted { p, a, b } => {
                if !(p > 0.0 && p <= 1.0) {
                    return Err(param("p", format!("must lie in (0, 1], got {p}")));
                }
                interval(a, b)
            }
            Self::LongRangePoly { alpha, range, a, b } => {
                interval(a, b)?;
                if !(alpha > (d + 2) as f64 && alpha.is_finite()) {
                    return Err(param("alpha", format!("must exceed d + 2 = {}, got {alpha}", d + 2)));
                }
                if range == 0 || 2 * range as usize >= side {
                    return Err(param("range", format!("must satisfy 1 ≤ R < L/2, got R={range}, L={side}")));
                }
                Ok(())
            }
        }
    }

    fn code(&self) -> (u8, [f64; 4], u32) {
        match *self {
            Self::Constant { c } => (0, [c, 0.0, 0.0, 0.0], 0),
            Self::UniformInterval { a, b } => (1, [a, b, 0.0, 0.0], 0),
            Self::PercolationWeighted { p, a, b } => (2, [a, b, p, 0.0], 0),
            Self::LineModel { a, b } => (3, [a, b, 0.0, 0.0], 0),
            Self::LongRangePoly { alpha, range, a, b } => (4, [a, b, 0.0, alpha], range),
        }
    }

    fn from_code(tag: u8, v: [f64; 4], range: u32) -> Result<Self> {
        Ok(match tag {
            0 => Self::Constant { c: v[0] },
            1 => Self::UniformInterval { a: v[0], b: v[1] },
            2 => Self::PercolationWeighted { p: v[2], a: v[0], b: v[1] },
            3 => Self::LineModel { a: v[0], b: v[1] },
            4 => Self::LongRangePoly { alpha: v[3], range, a: v[0], b: v[1] },
            t => return Err(Error::Format(format!("unknown law tag {t}"))),
        })
    }

    /// Positive half `J+` of the jump range, in generation order.
    pub fn jump_range(&self, d: usize) -> Vec<Point> {
        match *self {
            Self::LongRangePoly { range, .. } => long_range_offsets(d, range as i64),
            _ => (0..d)
                .map(|i| {
                    let mut z = [0; MAX_DIM];
                    z[i] = 1;
                    z
                })
                .collect(),
        }
    }
}

fn long_range_offsets(d: usize, range: i64) -> Vec<Point> {
    let mut out = Vec::new();
    let r2 = range * range;
    let span = 2 * range + 1;
    let total = span.pow(d as u32);
    for code in 0..total {
        let mut z = [0i64; MAX_DIM];
        let mut c = code;
        for i in (0..d).rev() {
            z[i] = c % span - range;
            c /= span;
        }
        let first = z.iter().take(d).copied().find(|&v| v != 0);
        let len2: i64 = z.iter().map(|v| v * v).sum();
        if matches!(first, Some(v) if v > 0) && len2 <= r2 {
            out.push(z);
        }
    }
    out
}

/// Ratio of the truncated second-moment series `Σ_{0<|z|≤R} |z|^(2−α)` to the
/// same series truncated at `big_range`; used to size `R` for long-range laws.
pub fn second_moment_truncation_ratio(d: usize, alpha: f64, range: u32, big_range: u32) -> f64 {
    let sum = |r: u32| -> f64 {
        long_range_offsets(d, r as i64)
            .iter()
            .map(|z| {
                let n2: i64 = z.iter().map(|v| v * v).sum();
                2.0 * (n2 as f64).powf(1.0 - alpha / 2.0)
            })
            .sum()
    };
    sum(range) / sum(big_range)
}

/// Read access to conductances between arbitrary torus points.
pub trait Medium {
    fn conductance(&self, x: &Point, y: &Point) -> f64;
}

/// One positive-conductance half-edge in the adjacency table.
#[derive(Debug, Clone, Copy)]
pub struct HalfEdge {
    pub target: u32,
    /// Index into [`Environment::signed_offsets`].
    pub offset: u16,
    pub weight: f64,
}

/// A finite periodic realization of the random medium.
#[derive(Debug, Clone)]
pub struct Environment {
    d: usize,
    side: usize,
    law: ConductanceLaw,
    seed: u64,
    jumps: Vec<Point>,
    /// Direction-major: `conductances[k * N + v] = ω({v, v + z_k})`.
    conductances: Vec<f64>,
    mu: Vec<f64>,
    signed: Vec<Point>,
    adj_start: Vec<u32>,
    adj: Vec<HalfEdge>,
    lookup: HashMap<Point, (usize, bool)>,
}

impl PartialEq for Environment {
    fn eq(&self, other: &Self) -> bool {
        self.d == other.d
            && self.side == other.side
            && self.law == other.law
            && self.seed == other.seed
            && self.jumps == other.jumps
            && self.conductances.iter().map(|c| c.to_bits()).eq(other.conductances.iter().map(|c| c.to_bits()))
    }
}

/// Generate an environment. Deterministic in `(law, d, L, seed)`.
pub fn gen_env(law: ConductanceLaw, d: usize, side: usize, seed: u64) -> Result<Environment> {
    if !(d == 2 || d == 3) {
        return Err(param("d", format!("only d ∈ {{2, 3}} is supported, got {d}")));
    }
    if side < 4 || side % 2 != 0 {
        return Err(param("L", format!("side length must be even and ≥ 4, got {side}")));
    }
    law.validate(d, side)?;
    let jumps = law.jump_range(d);
    let n = side.pow(d as u32);
    let mut rng = stream_rng(stream_seed(seed, 0));
    let mut conductances = vec![0.0; jumps.len() * n];
    let uniform = |rng: &mut crate::rng::StreamRng, a: f64, b: f64| a + (b - a) * rng.random::<f64>();

    match law {
        ConductanceLaw::Constant { c } => conductances.fill(c),
        ConductanceLaw::UniformInterval { a, b } => {
            for w in conductances.iter_mut() {
                *w = uniform(&mut rng, a, b);
            }
        }
        ConductanceLaw::PercolationWeighted { p, a, b } => {
            for w in conductances.iter_mut() {
                let open = rng.random::<f64>() < p;
                let value = uniform(&mut rng, a, b);
                *w = if open { value } else { 0.0 };
            }
        }
        ConductanceLaw::LineModel { a, b } => {
            // one draw per line: the vertex of the line with x_i = 0
            for i in 0..d {
                let mut line_value = vec![0.0; n];
                for v in 0..n {
                    if coords_of(v, d, side)[i] == 0 {
                        line_value[v] = uniform(&mut rng, a, b);
                    }
                }
                for v in 0..n {
                    let mut x = coords_of(v, d, side);
                    x[i] = 0;
                    conductances[i * n + v] = line_value[index_of(&x, d, side)];
                }
            }
        }
        ConductanceLaw::LongRangePoly { alpha, a, b, .. } => {
            for (k, z) in jumps.iter().enumerate() {
                let len2: i64 = z.iter().map(|v| v * v).sum();
                let scale = (len2 as f64).powf(-alpha / 2.0);
                for w in conductances[k * n..(k + 1) * n].iter_mut() {
                    *w = uniform(&mut rng, a, b) * scale;
                }
            }
        }
    }
    Environment::from_parts(d, side, law, seed, jumps, conductances)
}

fn coords_of(mut v: usize, d: usize, side: usize) -> Point {
    let mut x = [0i64; MAX_DIM];
    for i in (0..d).rev() {
        x[i] = (v % side) as i64;
        v /= side;
    }
    x
}

fn index_of(x: &Point, d: usize, side: usize) -> usize {
    let l = side as i64;
    x.iter().take(d).fold(0usize, |acc, &c| acc * side + c.rem_euclid(l) as usize)
}

impl Environment {
    /// Assemble an environment from raw parts, checking the invariants and
    /// building the adjacency table.
    pub fn from_parts(
        d: usize,
        side: usize,
        law: ConductanceLaw,
        seed: u64,
        jumps: Vec<Point>,
        conductances: Vec<f64>,
    ) -> Result<Self> {
        let n = side.pow(d as u32);
        if conductances.len() != jumps.len() * n {
            return Err(Error::Format(format!(
                "expected {} conductances, found {}",
                jumps.len() * n,
                conductances.len()
            )));
        }
        if let Some(c) = conductances.iter().find(|c| !(c.is_finite() && **c >= 0.0)) {
            return Err(Error::Format(format!("conductance {c} is not a nonnegative real")));
        }
        let mut lookup = HashMap::new();
        let mut signed = Vec::with_capacity(2 * jumps.len());
        for (k, z) in jumps.iter().enumerate() {
            if z.iter().skip(d).any(|&c| c != 0) || z.iter().all(|&c| c == 0) {
                return Err(Error::Format(format!("invalid jump offset {z:?}")));
            }
            if z.iter().any(|c| 2 * c.unsigned_abs() as usize >= side) {
                return Err(Error::Format(format!("offset {z:?} does not fit the torus")));
            }
            let neg = z.map(|c| -c);
            if lookup.insert(*z, (k, true)).is_some() || lookup.insert(neg, (k, false)).is_some() {
                return Err(Error::Format(format!("offset {z:?} listed twice")));
            }
            signed.push(*z);
            signed.push(neg);
        }

        let mut mu = vec![0.0; n];
        let mut degree = vec![0u32; n];
        for (k, z) in jumps.iter().enumerate() {
            for v in 0..n {
                let w = conductances[k * n + v];
                let u = index_of(&add(&coords_of(v, d, side), z), d, side);
                mu[v] += w;
                mu[u] += w;
                if w > 0.0 {
                    degree[v] += 1;
                    degree[u] += 1;
                }
            }
        }
        let mut adj_start = Vec::with_capacity(n + 1);
        adj_start.push(0u32);
        for v in 0..n {
            adj_start.push(adj_start[v] + degree[v]);
        }
        let mut fill: Vec<u32> = adj_start[..n].to_vec();
        let mut adj = vec![HalfEdge { target: 0, offset: 0, weight: 0.0 }; adj_start[n] as usize];
        // per vertex: for k, +z_k then −z_k
        for v in 0..n {
            let x = coords_of(v, d, side);
            for (k, z) in jumps.iter().enumerate() {
                let fwd = conductances[k * n + v];
                if fwd > 0.0 {
                    let u = index_of(&add(&x, z), d, side);
                    adj[fill[v] as usize] = HalfEdge { target: u as u32, offset: (2 * k) as u16, weight: fwd };
                    fill[v] += 1;
                }
                let back = index_of(&sub(&x, z), d, side);
                let bw = conductances[k * n + back];
                if bw > 0.0 {
                    adj[fill[v] as usize] = HalfEdge { target: back as u32, offset: (2 * k + 1) as u16, weight: bw };
                    fill[v] += 1;
                }
            }
        }
        Ok(Self { d, side, law, seed, jumps, conductances, mu, signed, adj_start, adj, lookup })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn law(&self) -> ConductanceLaw {
        self.law
    }

    pub fn law_tag(&self) -> String {
        self.law.tag()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_sites(&self) -> usize {
        self.mu.len()
    }

    /// Positive half `J+` of the jump range.
    pub fn jumps(&self) -> &[Point] {
        &self.jumps
    }

    /// `J = J+ ∪ −J+`, interleaved as `[z_0, −z_0, z_1, −z_1, …]`.
    pub fn signed_offsets(&self) -> &[Point] {
        &self.signed
    }

    pub fn num_edges(&self) -> usize {
        self.conductances.len()
    }

    /// Conductance of the stored edge `{v, v + z_k}`.
    pub fn edge(&self, k: usize, v: usize) -> f64 {
        self.conductances[k * self.num_sites() + v]
    }

    /// Raw direction-major conductance array.
    pub fn conductances(&self) -> &[f64] {
        &self.conductances
    }

    pub fn coords(&self, v: usize) -> Point {
        coords_of(v, self.d, self.side)
    }

    /// Index of the torus vertex represented by `x` (any integer point).
    pub fn index(&self, x: &Point) -> usize {
        index_of(x, self.d, self.side)
    }

    /// Torus vertex reached from `v` by the displacement `z`.
    pub fn translate(&self, v: usize, z: &Point) -> usize {
        self.index(&add(&self.coords(v), z))
    }

    /// Weighted degree μ(x): total conductance incident to `v`.
    pub fn mu(&self, v: usize) -> f64 {
        self.mu[v]
    }

    pub fn mu_all(&self) -> &[f64] {
        &self.mu
    }

    /// Positive-conductance half-edges leaving `v`.
    pub fn neighbors(&self, v: usize) -> &[HalfEdge] {
        &self.adj[self.adj_start[v] as usize..self.adj_start[v + 1] as usize]
    }

    /// Read-only translate `τ_z ω`.
    pub fn shift_view(&self, z: Point) -> ShiftView<'_> {
        ShiftView { env: self, shift: z }
    }

    /// SHA-256 of the serialized file, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (tag, params, range) = self.law.code();
        let mut out = Vec::with_capacity(69 + self.jumps.len() * 4 * self.d + self.conductances.len() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.d as u32).to_le_bytes());
        out.extend_from_slice(&(self.side as u32).to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.push(tag);
        for p in params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out.extend_from_slice(&range.to_le_bytes());
        out.extend_from_slice(&(self.jumps.len() as u32).to_le_bytes());
        for z in &self.jumps {
            for c in z.iter().take(self.d) {
                out.extend_from_slice(&(*c as i32).to_le_bytes());
            }
        }
        for c in &self.conductances {
            out.extend_from_slice(&c.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("not an environment file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported environment format version {version}")));
        }
        let d = r.u32()? as usize;
        let side = r.u32()? as usize;
        if !(d == 2 || d == 3) || side < 4 {
            return Err(Error::Format(format!("bad header: d={d}, L={side}")));
        }
        let seed = r.u64()?;
        let tag = r.take(1)?[0];
        let mut params = [0.0; 4];
        for p in params.iter_mut() {
            *p = r.f64()?;
        }
        let range = r.u32()?;
        let law = ConductanceLaw::from_code(tag, params, range)?;
        let count = r.u32()? as usize;
        let mut jumps = Vec::with_capacity(count);
        for _ in 0..count {
            let mut z = [0i64; MAX_DIM];
            for c in z.iter_mut().take(d) {
                *c = i32::from_le_bytes(r.take(4)?.try_into().unwrap()) as i64;
            }
            jumps.push(z);
        }
        let n = side
            .checked_pow(d as u32)
            .ok_or_else(|| Error::Format("torus too large".into()))?;
        let mut conductances = Vec::with_capacity(count * n);
        for _ in 0..count * n {
            conductances.push(r.f64()?);
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Self::from_parts(d, side, law, seed, jumps, conductances)
    }

    fn wrap(&self, x: &Point) -> Point {
        // minimal image in (−L/2, L/2]
        let l = self.side as i64;
        let mut out = [0i64; MAX_DIM];
        for i in 0..self.d {
            let mut c = x[i].rem_euclid(l);
            if c > l / 2 {
                c -= l;
            }
            out[i] = c;
        }
        out
    }
}

impl Medium for Environment {
    fn conductance(&self, x: &Point, y: &Point) -> f64 {
        let diff = self.wrap(&sub(y, x));
        match self.lookup.get(&diff) {
            Some(&(k, true)) => self.edge(k, self.index(x)),
            Some(&(k, false)) => self.edge(k, self.index(y)),
            None => 0.0,
        }
    }
}

/// Translated environment `(τ_z ω)({u, v}) = ω({u + z, v + z})`.
#[derive(Debug, Clone, Copy)]
pub struct ShiftView<'a> {
    env: &'a Environment,
    shift: Point,
}

impl<'a> ShiftView<'a> {
    pub fn shift(&self) -> Point {
        self.shift
    }

    pub fn shift_view(&self, w: Point) -> ShiftView<'a> {
        ShiftView { env: self.env, shift: add(&self.shift, &w) }
    }
}

impl Medium for ShiftView<'_> {
    fn conductance(&self, x: &Point, y: &Point) -> f64 {
        self.env.conductance(&add(x, &self.shift), &add(y, &self.shift))
    }
}

pub(crate) fn add(a: &Point, b: &Point) -> Point {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub(crate) fn sub(a: &Point, b: &Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Format("unexpected end of environment file".into()));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Connected components of the graph of strictly positive conductances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterLabels {
    /// Cluster id per vertex, −1 for isolated vertices (μ = 0).
    pub label: Vec<i32>,
    /// Size of each cluster id.
    pub sizes: Vec<usize>,
    /// Largest cluster; ties go to the cluster with the lowest vertex.
    pub giant_id: i32,
    pub giant_size: usize,
}

impl ClusterLabels {
    pub fn in_giant(&self, v: usize) -> bool {
        self.giant_size > 0 && self.label[v] == self.giant_id
    }

    /// Giant-cluster vertices in increasing index order.
    pub fn giant_sites(&self) -> Vec<usize> {
        (0..self.label.len()).filter(|&v| self.in_giant(v)).collect()
    }

    pub fn density(&self) -> f64 {
        self.giant_size as f64 / self.label.len() as f64
    }
}

struct UnionFind {
    parent: Vec<u32>,
    size: Vec<u32>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n as u32).collect(), size: vec![1; n] }
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        let (big, small) = if self.size[ra as usize] >= self.size[rb as usize] { (ra, rb) } else { (rb, ra) };
        self.parent[small as usize] = big;
        self.size[big as usize] += self.size[small as usize];
    }
}

/// Label clusters by union-find over the positive edges. Cluster ids are
/// assigned in order of each cluster's lowest vertex.
pub fn clusters(env: &Environment) -> ClusterLabels {
    let n = env.num_sites();
    let mut uf = UnionFind::new(n);
    for v in 0..n {
        for e in env.neighbors(v) {
            uf.union(v as u32, e.target);
        }
    }
    let mut id_of_root: HashMap<u32, i32> = HashMap::new();
    let mut label = vec![-1i32; n];
    let mut sizes = Vec::new();
    for v in 0..n {
        if env.mu(v) <= 0.0 {
            continue;
        }
        let root = uf.find(v as u32);
        let id = *id_of_root.entry(root).or_insert_with(|| {
            sizes.push(0);
            (sizes.len() - 1) as i32
        });
        label[v] = id;
        sizes[id as usize] += 1;
    }
    let (giant_id, giant_size) = sizes
        .iter()
        .enumerate()
        .fold((-1i32, 0usize), |best, (id, &s)| if s > best.1 { (id as i32, s) } else { best });
    ClusterLabels { label, sizes, giant_id, giant_size }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::VecDeque;

    fn bfs_labels(env: &Environment) -> Vec<i32> {
        // independent labeling oracle: breadth-first search over raw edge lookups
        let n = env.num_sites();
        let mut label = vec![-1i32; n];
        let mut next = 0;
        for s in 0..n {
            if label[s] >= 0 || env.mu(s) == 0.0 {
                continue;
            }
            label[s] = next;
            let mut queue = VecDeque::from([s]);
            while let Some(v) = queue.pop_front() {
                let x = env.coords(v);
                for z in env.signed_offsets() {
                    let y = add(&x, z);
                    if env.conductance(&x, &y) > 0.0 {
                        let u = env.index(&y);
                        if label[u] < 0 {
                            label[u] = next;
                            queue.push_back(u);
                        }
                    }
                }
            }
            next += 1;
        }
        label
    }

    #[test]
    fn constant_law_fills_every_edge() {
        let env = gen_env(ConductanceLaw::Constant { c: 1.0 }, 2, 4, 7).unwrap();
        assert_eq!(env.num_edges(), 32);
        assert!(env.conductances().iter().all(|&c| c == 1.0));
        assert!((0..16).all(|v| env.mu(v) == 4.0));
        let labels = clusters(&env);
        assert_eq!(labels.giant_size, 16);
        assert!(labels.label.iter().all(|&l| l == 0));
    }

    #[test]
    fn full_percolation_equals_constant() {
        let c = gen_env(ConductanceLaw::Constant { c: 1.0 }, 2, 4, 7).unwrap();
        for seed in [0, 1, 99] {
            let p = gen_env(ConductanceLaw::PercolationWeighted { p: 1.0, a: 1.0, b: 1.0 }, 2, 4, seed).unwrap();
            assert_eq!(p.conductances(), c.conductances());
        }
    }

    #[test]
    fn percolation_open_fraction_concentrates() {
        let env = gen_env(ConductanceLaw::PercolationWeighted { p: 0.7, a: 1.0, b: 2.0 }, 2, 64, 1).unwrap();
        let open = env.conductances().iter().filter(|&&c| c > 0.0).count() as f64;
        let frac = open / 8192.0;
        assert!((frac - 0.7).abs() <= 3.0 * (0.7f64 * 0.3 / 8192.0).sqrt(), "{frac}");
        assert!(env.conductances().iter().all(|&c| c == 0.0 || (1.0..=2.0).contains(&c)));
    }

    #[test]
    fn clusters_match_bfs_oracle() {
        for seed in 0..4 {
            let env = gen_env(ConductanceLaw::PercolationWeighted { p: 0.7, a: 1.0, b: 2.0 }, 2, 64, seed).unwrap();
            let labels = clusters(&env);
            let oracle = bfs_labels(&env);
            // same partition: labels agree up to renaming (both ordered by lowest vertex)
            assert_eq!(labels.label, oracle);
            let density = labels.giant_size as f64 / 4096.0;
            assert!((0.5..=1.0).contains(&density), "{density}");
            let max = *labels.sizes.iter().max().unwrap();
            assert_eq!(labels.giant_size, max);
        }
        let env = gen_env(ConductanceLaw::PercolationWeighted { p: 0.3, a: 1.0, b: 1.0 }, 3, 8, 5).unwrap();
        assert_eq!(clusters(&env).label, bfs_labels(&env));
    }

    #[test]
    fn empty_graph_has_no_clusters() {
        let base = gen_env(ConductanceLaw::Constant { c: 1.0 }, 2, 4, 0).unwrap();
        let env = Environment::from_parts(2, 4, base.law(), 0, base.jumps().to_vec(), vec![0.0; 32]).unwrap();
        let labels = clusters(&env);
        assert!(labels.label.iter().all(|&l| l == -1));
        assert_eq!(labels.giant_size, 0);
        assert!(labels.giant_sites().is_empty());
        assert!((0..16).all(|v| env.mu(v) == 0.0));
    }

    #[test]
    fn isolated_vertex_has_zero_mu() {
        let base = gen_env(ConductanceLaw::Constant { c: 1.0 }, 2, 4, 0).unwrap();
        let mut c = base.conductances().to_vec();
        // isolate vertex 5 = (1, 1)
        let x = base.coords(5);
        for (k, z) in base.jumps().iter().enumerate() {
            c[k * 16 + 5] = 0.0;
            c[k * 16 + base.index(&sub(&x, z))] = 0.0;
        }
        let env = Environment::from_parts(2, 4, base.law(), 0, base.jumps().to_vec(), c).unwrap();
        assert_eq!(env.mu(5), 0.0);
        let labels = clusters(&env);
        assert_eq!(labels.label[5], -1);
        assert_eq!(labels.giant_size, 15);
    }

    #[test]
    fn uniform_mu_average() {
        let env = gen_env(ConductanceLaw::UniformInterval { a: 1.0, b: 10.0 }, 2, 64, 3).unwrap();
        let n = env.num_sites() as f64;
        // direct summation oracle over raw edges: each edge contributes to two endpoints
        let direct: f64 = 2.0 * env.conductances().iter().sum::<f64>() / n;
        let mean: f64 = env.mu_all().iter().sum::<f64>() / n;
        assert!((direct - mean).abs() < 1e-9);
        // μ is a sum of 4 Uniform[1,10] with variance 4·81/12 = 27; sites share edges,
        // so the spatial mean has stderr sqrt(2·(81/12)·4 / (2n))·... bounded by sqrt(27·2/n)
        let stderr = (27.0 * 2.0 / n).sqrt();
        assert!((mean - 22.0).abs() <= 3.0 * stderr, "{mean}");
    }

    #[test]
    fn line_model_is_translation_invariant_along_lines() {
        for d in [2, 3] {
            let env = gen_env(ConductanceLaw::LineModel { a: 1.0, b: 2.0 }, d, 6, 11).unwrap();
            for (i, z) in env.jumps().iter().enumerate() {
                for v in 0..env.num_sites() {
                    let u = env.translate(v, z);
                    assert_eq!(env.edge(i, v), env.edge(i, u));
                }
            }
            // lines are not all equal
            let first = env.edge(0, 0);
            assert!(env.conductances().iter().any(|&c| c != first));
        }
    }

    #[test]
    fn generation_is_reproducible() {
        let law = ConductanceLaw::UniformInterval { a: 1.0, b: 10.0 };
        let a = gen_env(law, 3, 8, 5).unwrap();
        let b = gen_env(law, 3, 8, 5).unwrap();
        let c = gen_env(law, 3, 8, 6).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert_ne!(a.conductances(), c.conductances());
    }

    #[test]
    fn invalid_parameters_name_the_field() {
        let err = |r: Result<Environment>| match r {
            Err(Error::Parameter { field, .. }) => field,
            other => panic!("expected parameter error, got {other:?}"),
        };
        assert_eq!(err(gen_env(ConductanceLaw::Constant { c: 1.0 }, 4, 8, 0)), "d");
        assert_eq!(err(gen_env(ConductanceLaw::Constant { c: 1.0 }, 2, 5, 0)), "L");
        assert_eq!(err(gen_env(ConductanceLaw::Constant { c: 1.0 }, 2, 2, 0)), "L");
        assert_eq!(err(gen_env(ConductanceLaw::UniformInterval { a: 0.0, b: 1.0 }, 2, 8, 0)), "a");
        assert_eq!(err(gen_env(ConductanceLaw::UniformInterval { a: 2.0, b: 1.0 }, 2, 8, 0)), "b");
        assert_eq!(err(gen_env(ConductanceLaw::PercolationWeighted { p: 0.0, a: 1.0, b: 1.0 }, 2, 8, 0)), "p");
        assert_eq!(err(gen_env(ConductanceLaw::PercolationWeighted { p: 1.5, a: 1.0, b: 1.0 }, 2, 8, 0)), "p");
        let lr = |alpha, range| ConductanceLaw::LongRangePoly { alpha, range, a: 1.0, b: 1.0 };
        assert_eq!(err(gen_env(lr(4.0, 2), 2, 8, 0)), "alpha");
        assert_eq!(err(gen_env(lr(5.0, 4), 2, 8, 0)), "range");
    }

    #[test]
    fn long_range_offsets_and_weights() {
        let law = ConductanceLaw::LongRangePoly { alpha: 5.0, range: 2, a: 1.0, b: 1.0 };
        let env = gen_env(law, 2, 8, 0).unwrap();
        // |z| ≤ 2 in Z²: 12 nonzero points, 6 representatives
        assert_eq!(env.jumps().len(), 6);
        for (k, z) in env.jumps().iter().enumerate() {
            let len2 = (z[0] * z[0] + z[1] * z[1]) as f64;
            assert!((env.edge(k, 0) - len2.powf(-2.5)).abs() < 1e-15);
        }
        let labels = clusters(&env);
        assert_eq!(labels.giant_size, 64);
    }

    #[test]
    fn truncated_second_moment() {
        // heavier tails converge slowly; α = d + 4 is within 5% already at R = 8
        let r = second_moment_truncation_ratio(2, 6.0, 8, 31);
        assert!(r > 0.95 && r <= 1.0, "{r}");
        let slow = second_moment_truncation_ratio(2, 4.5, 8, 31);
        assert!(slow < r);
    }

    #[test]
    fn shift_views_compose_and_wrap() {
        use rand::Rng;
        let env = gen_env(ConductanceLaw::UniformInterval { a: 1.0, b: 2.0 }, 2, 8, 3).unwrap();
        let id = env.shift_view([0, 0, 0]);
        let full = env.shift_view([8, 0, 0]);
        for v in 0..env.num_sites() {
            let x = env.coords(v);
            for z in env.signed_offsets() {
                let y = add(&x, z);
                assert_eq!(id.conductance(&x, &y), env.conductance(&x, &y));
                assert_eq!(full.conductance(&x, &y), env.conductance(&x, &y));
            }
        }
        let mut rng = stream_rng(9);
        for _ in 0..1000 {
            let z = [rng.random_range(-20..20), rng.random_range(-20..20), 0];
            let w = [rng.random_range(-20..20), rng.random_range(-20..20), 0];
            let x = [rng.random_range(0..8), rng.random_range(0..8), 0];
            let off = env.signed_offsets()[rng.random_range(0..4)];
            let y = add(&x, &off);
            let view = env.shift_view(z);
            assert_eq!(view.conductance(&x, &y), env.conductance(&add(&x, &z), &add(&y, &z)));
            assert_eq!(view.shift_view(w).conductance(&x, &y), env.shift_view(add(&z, &w)).conductance(&x, &y));
        }
    }

    #[test]
    fn conductance_lookup_is_symmetric() {
        let env = gen_env(ConductanceLaw::UniformInterval { a: 1.0, b: 2.0 }, 3, 6, 3).unwrap();
        for v in 0..env.num_sites() {
            let x = env.coords(v);
            for z in env.signed_offsets() {
                let y = add(&x, z);
                assert_eq!(env.conductance(&x, &y), env.conductance(&y, &x));
            }
            assert_eq!(env.conductance(&x, &add(&x, &[2, 0, 0])), 0.0);
        }
    }

    #[test]
    fn adjacency_matches_mu() {
        let env = gen_env(ConductanceLaw::PercolationWeighted { p: 0.6, a: 1.0, b: 3.0 }, 2, 16, 8).unwrap();
        for v in 0..env.num_sites() {
            let s: f64 = env.neighbors(v).iter().map(|e| e.weight).sum();
            assert!((s - env.mu(v)).abs() < 1e-12);
            for e in env.neighbors(v) {
                let z = env.signed_offsets()[e.offset as usize];
                assert_eq!(env.translate(v, &z), e.target as usize);
            }
        }
    }

    #[test]
    fn bytes_roundtrip_and_reject_garbage() {
        let law = ConductanceLaw::LongRangePoly { alpha: 6.0, range: 2, a: 1.0, b: 3.0 };
        let env = gen_env(law, 3, 6, 21).unwrap();
        let bytes = env.to_bytes();
        let back = Environment::from_bytes(&bytes).unwrap();
        assert_eq!(back, env);
        assert_eq!(back.to_bytes(), bytes);
        assert!(Environment::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Environment::from_bytes(&bad).is_err());
    }
}
