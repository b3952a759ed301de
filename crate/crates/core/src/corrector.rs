//! Corrector, harmonic coordinates and homogenized matrices on the torus.
//!
//! The corrector `χ` solves the periodic cell problem `L χ^j = L Π^j` on the
//! giant cluster, where `Π(x) = x` and `(L f)(x) = Σ_y ω(x, y)(f(y) − f(x))`.
//! In matrix form, with the weighted graph Laplacian `A = −L`,
//!
//! ```text
//! A χ^j = −b_j,    b_j(x) = Σ_z ω(x, x + z) z_j
//! ```
//!
//! which is consistent because `b_j` sums to zero over every cluster. The
//! harmonic coordinates are `Φ(x) = x − χ(x)`; their increments along an edge
//! with unwrapped offset `z` are `z − (χ(x + z) − χ(x))`.

use serde::{Deserialize, Serialize};

use crate::env::{ClusterLabels, Environment};
use crate::error::{Error, Result};
use crate::linalg::{add_outer, mscale, msub, madd, sym_eigenvalues, to_vector, vsub, Matrix, Vector, MAX_DIM, ZERO_MAT};

pub const DEFAULT_TOL: f64 = 1e-10;

/// Corrector values on the giant cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocycleField {
    pub d: usize,
    pub num_sites: usize,
    pub cluster_id: i32,
    /// Lowest-index cluster site; `χ(base_site) = 0`.
    pub base_site: usize,
    /// Giant-cluster sites in increasing order.
    pub sites: Vec<usize>,
    /// `χ` per entry of `sites`.
    pub chi: Vec<Vector>,
    /// Max over sites and components of `|L Φ^j (x)| / μ(x)`.
    pub residual: f64,
    pub solver_iters: usize,
    pub tol: f64,
    #[serde(skip)]
    local: Vec<i32>,
}

impl CocycleField {
    fn new(d: usize, num_sites: usize, cluster_id: i32, sites: Vec<usize>, chi: Vec<Vector>, residual: f64, solver_iters: usize, tol: f64) -> Self {
        let mut local = vec![-1; num_sites];
        for (i, &v) in sites.iter().enumerate() {
            local[v] = i as i32;
        }
        Self { d, num_sites, cluster_id, base_site: sites[0], sites, chi, residual, solver_iters, tol, local }
    }

    /// Rebuild the site lookup after deserialization.
    pub fn reindex(mut self) -> Result<Self> {
        if self.sites.len() != self.chi.len() || self.sites.is_empty() {
            return Err(Error::Format("field needs one χ value per cluster site".into()));
        }
        self.local = vec![-1; self.num_sites];
        for (i, &v) in self.sites.iter().enumerate() {
            if v >= self.num_sites {
                return Err(Error::Format(format!("site {v} out of range")));
            }
            self.local[v] = i as i32;
        }
        Ok(self)
    }

    pub fn on_cluster(&self, v: usize) -> bool {
        self.local.get(v).is_some_and(|&i| i >= 0)
    }

    pub fn chi_at(&self, v: usize) -> Result<Vector> {
        match self.local.get(v) {
            Some(&i) if i >= 0 => Ok(self.chi[i as usize]),
            _ => Err(Error::OffCluster(v)),
        }
    }

    pub(crate) fn chi_unchecked(&self, v: usize) -> Vector {
        self.chi[self.local[v] as usize]
    }

    pub fn max_abs_chi(&self) -> f64 {
        self.chi.iter().flatten().fold(0.0, |m, c| m.max(c.abs()))
    }
}

/// Cocycle value `χ(x) − χ(z_base)`.
pub fn corrector_eval(field: &CocycleField, x: usize, z_base: usize) -> Result<Vector> {
    Ok(vsub(&field.chi_at(x)?, &field.chi_at(z_base)?))
}

/// Solve for the corrector with Jacobi-preconditioned conjugate gradients.
///
/// Stops when `max_x |r(x)| / μ(x) ≤ tol` for the true residual of every
/// component; the result is gauge-fixed to mean zero and then shifted so that
/// `χ(base_site) = 0`.
pub fn solve_harmonic(env: &Environment, labels: &ClusterLabels, tol: f64, max_iters: usize) -> Result<CocycleField> {
    if labels.giant_size == 0 {
        return Err(Error::Parameter { field: "labels", reason: "giant cluster is empty".into() });
    }
    if !(tol > 0.0) {
        return Err(Error::Parameter { field: "tol", reason: format!("must be positive, got {tol}") });
    }
    let d = env.dim();
    let sites = labels.giant_sites();
    let n = sites.len();
    let mut local = vec![u32::MAX; env.num_sites()];
    for (i, &v) in sites.iter().enumerate() {
        local[v] = i as u32;
    }
    let offsets = env.signed_offsets();
    let diag: Vec<f64> = sites.iter().map(|&v| env.mu(v)).collect();

    let apply = |x: &[f64], out: &mut [f64]| {
        for (i, &v) in sites.iter().enumerate() {
            let mut acc = 0.0;
            for e in env.neighbors(v) {
                acc += e.weight * (x[i] - x[local[e.target as usize] as usize]);
            }
            out[i] = acc;
        }
    };
    let scaled_max = |r: &[f64]| r.iter().zip(&diag).fold(0.0f64, |m, (ri, di)| m.max(ri.abs() / di));

    let mut chi = vec![[0.0; MAX_DIM]; n];
    let mut residual = 0.0f64;
    let mut total_iters = 0;
    for j in 0..d {
        // rhs = −b_j
        let rhs: Vec<f64> = sites
            .iter()
            .map(|&v| -env.neighbors(v).iter().map(|e| e.weight * offsets[e.offset as usize][j] as f64).sum::<f64>())
            .collect();
        if rhs.iter().all(|&b| b == 0.0) {
            continue;
        }
        let mut x = vec![0.0; n];
        let mut r = rhs.clone();
        let mut ap = vec![0.0; n];
        let mut iters = 0;
        'restart: loop {
            let mut z: Vec<f64> = r.iter().zip(&diag).map(|(ri, di)| ri / di).collect();
            let mut p = z.clone();
            let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
            loop {
                if iters >= max_iters {
                    apply(&x, &mut ap);
                    let true_r: Vec<f64> = rhs.iter().zip(&ap).map(|(b, a)| b - a).collect();
                    return Err(Error::Solver { iters, residual: scaled_max(&true_r) });
                }
                iters += 1;
                apply(&p, &mut ap);
                let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
                if pap <= 0.0 {
                    break;
                }
                let alpha = rz / pap;
                for i in 0..n {
                    x[i] += alpha * p[i];
                    r[i] -= alpha * ap[i];
                }
                if scaled_max(&r) <= tol {
                    apply(&x, &mut ap);
                    for i in 0..n {
                        r[i] = rhs[i] - ap[i];
                    }
                    if scaled_max(&r) <= tol {
                        break 'restart;
                    }
                    continue 'restart;
                }
                for i in 0..n {
                    z[i] = r[i] / diag[i];
                }
                let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
                let beta = rz_new / rz;
                rz = rz_new;
                for i in 0..n {
                    p[i] = z[i] + beta * p[i];
                }
            }
            // breakdown: recompute the true residual and restart
            apply(&x, &mut ap);
            for i in 0..n {
                r[i] = rhs[i] - ap[i];
            }
            if scaled_max(&r) <= tol {
                break;
            }
        }
        total_iters = total_iters.max(iters);
        let mean = x.iter().sum::<f64>() / n as f64;
        let base = x[0] - mean;
        for i in 0..n {
            chi[i][j] = (x[i] - mean) - base;
        }
        residual = residual.max(scaled_max(&r));
    }
    let field = CocycleField::new(d, env.num_sites(), labels.giant_id, sites, chi, residual, total_iters, tol);
    Ok(field)
}

/// Max over cluster sites of `|L Φ^j(x)| / μ(x)`, recomputed from the field.
pub fn harmonicity_residual(env: &Environment, field: &CocycleField) -> f64 {
    let offsets = env.signed_offsets();
    let mut worst = 0.0f64;
    for &v in &field.sites {
        let chi_x = field.chi_unchecked(v);
        let mut acc = [0.0; MAX_DIM];
        for e in env.neighbors(v) {
            let dphi = vsub(&to_vector(&offsets[e.offset as usize]), &vsub(&field.chi_unchecked(e.target as usize), &chi_x));
            for j in 0..MAX_DIM {
                acc[j] += e.weight * dphi[j];
            }
        }
        for a in acc.iter().take(env.dim()) {
            worst = worst.max(a.abs() / env.mu(v));
        }
    }
    worst
}

/// Homogenized covariance Σ², area anomaly Γ and second moments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomogenizedStats {
    pub d: usize,
    pub sigma2: Matrix,
    pub gamma: Matrix,
    /// `M²_{ij}`: cluster average of `Σ_z ω(x, x+z) z_i z_j`.
    pub m2: Matrix,
    /// Cluster average of μ.
    pub m2_scalar: f64,
    pub density: f64,
}

impl HomogenizedStats {
    /// `max |M² − (Σ² − 2Γ)|`.
    pub fn pythagoras_defect(&self) -> f64 {
        crate::linalg::max_abs(&msub(&self.m2, &madd(&self.sigma2, &mscale(&self.gamma, -2.0))))
    }

    pub fn sigma2_eigenvalues(&self) -> Vec<f64> {
        sym_eigenvalues(&self.sigma2, self.d)
    }

    pub fn gamma_eigenvalues(&self) -> Vec<f64> {
        sym_eigenvalues(&self.gamma, self.d)
    }
}

pub(crate) fn check_field(env: &Environment, labels: &ClusterLabels, field: &CocycleField) -> Result<()> {
    if field.num_sites != env.num_sites() || field.d != env.dim() || field.cluster_id != labels.giant_id || field.sites.len() != labels.giant_size {
        return Err(Error::Integrity("corrector field was solved on a different environment".into()));
    }
    Ok(())
}

/// Cluster averages of the edge sums defining Σ², Γ and M². Every undirected
/// edge is visited once from each endpoint.
pub fn sigma_gamma(env: &Environment, labels: &ClusterLabels, field: &CocycleField) -> Result<HomogenizedStats> {
    check_field(env, labels, field)?;
    let offsets = env.signed_offsets();
    let (mut s2, mut cc, mut m2) = (ZERO_MAT, ZERO_MAT, ZERO_MAT);
    let mut mu_sum = 0.0;
    for &v in &field.sites {
        let chi_x = field.chi_unchecked(v);
        mu_sum += env.mu(v);
        for e in env.neighbors(v) {
            let z = to_vector(&offsets[e.offset as usize]);
            let dchi = vsub(&field.chi_unchecked(e.target as usize), &chi_x);
            let dphi = vsub(&z, &dchi);
            add_outer(&mut s2, e.weight, &dphi, &dphi);
            add_outer(&mut cc, e.weight, &dchi, &dchi);
            add_outer(&mut m2, e.weight, &z, &z);
        }
    }
    let size = field.sites.len() as f64;
    Ok(HomogenizedStats {
        d: env.dim(),
        sigma2: mscale(&s2, 1.0 / size),
        gamma: mscale(&cc, -0.5 / size),
        m2: mscale(&m2, 1.0 / size),
        m2_scalar: mu_sum / size,
        density: labels.density(),
    })
}

/// Cluster average of `Σ_z ω(x, x+z) ΔΦ^i Δχ^j`; zero for an exact solve.
pub fn orthogonality_defect(env: &Environment, labels: &ClusterLabels, field: &CocycleField) -> Result<Matrix> {
    check_field(env, labels, field)?;
    let offsets = env.signed_offsets();
    let mut acc = ZERO_MAT;
    for &v in &field.sites {
        let chi_x = field.chi_unchecked(v);
        for e in env.neighbors(v) {
            let dchi = vsub(&field.chi_unchecked(e.target as usize), &chi_x);
            let dphi = vsub(&to_vector(&offsets[e.offset as usize]), &dchi);
            add_outer(&mut acc, e.weight, &dphi, &dchi);
        }
    }
    Ok(mscale(&acc, 1.0 / field.sites.len() as f64))
}

/// Box-averaged potential φ_n and the RMS of its error field.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialField {
    pub n: usize,
    /// `φ_n(τ_z ω) = χ(z) − mean_{B_n(z) ∩ C} χ` per vertex (zero off the cluster).
    pub phi: Vec<Vector>,
    /// RMS of `E_n(z, e) = φ_n(τ_{z+e} ω) − φ_n(τ_z ω) − (χ(z+e) − χ(z))` over
    /// cluster pairs at nearest-neighbor offsets `±e_i`.
    pub e_rms: f64,
    pub pairs: usize,
}

impl PotentialField {
    pub fn error_at(&self, env: &Environment, field: &CocycleField, z: usize, offset: &crate::linalg::Point) -> Result<Vector> {
        let y = env.translate(z, offset);
        let dchi = corrector_eval(field, y, z)?;
        Ok(vsub(&vsub(&self.phi[y], &self.phi[z]), &dchi))
    }
}

/// Evaluate φ_n at every cluster site with the box `{−n, …, n}^d`.
pub fn potential_box_average(env: &Environment, labels: &ClusterLabels, field: &CocycleField, n: usize) -> Result<PotentialField> {
    check_field(env, labels, field)?;
    if n == 0 || 4 * n > env.side() {
        return Err(Error::Range(format!("box radius n = {n} must satisfy 1 ≤ n ≤ L/4 = {}", env.side() / 4)));
    }
    let d = env.dim();
    let span = 2 * n + 1;
    let box_offsets: Vec<crate::linalg::Point> = (0..span.pow(d as u32))
        .map(|mut code| {
            let mut z = [0i64; MAX_DIM];
            for c in z.iter_mut().take(d).rev() {
                *c = (code % span) as i64 - n as i64;
                code /= span;
            }
            z
        })
        .collect();
    let mut phi = vec![[0.0; MAX_DIM]; env.num_sites()];
    for &z in &field.sites {
        let mut sum = [0.0; MAX_DIM];
        let mut count = 0usize;
        for off in &box_offsets {
            let x = env.translate(z, off);
            if field.on_cluster(x) {
                let c = field.chi_unchecked(x);
                for j in 0..MAX_DIM {
                    sum[j] += c[j];
                }
                count += 1;
            }
        }
        let chi_z = field.chi_unchecked(z);
        for j in 0..d {
            phi[z][j] = chi_z[j] - sum[j] / count as f64;
        }
    }
    let mut pf = PotentialField { n, phi, e_rms: 0.0, pairs: 0 };
    let units: Vec<crate::linalg::Point> = (0..d)
        .flat_map(|i| {
            let mut e = [0i64; MAX_DIM];
            e[i] = 1;
            [e, e.map(|c| -c)]
        })
        .collect();
    let mut sq = 0.0;
    for &z in &field.sites {
        for off in &units {
            if !field.on_cluster(env.translate(z, off)) {
                continue;
            }
            let e = pf.error_at(env, field, z, off)?;
            sq += crate::linalg::dot(&e, &e);
            pf.pairs += 1;
        }
    }
    pf.e_rms = if pf.pairs > 0 { (sq / pf.pairs as f64).sqrt() } else { 0.0 };
    Ok(pf)
}

/// JSON export of a solved field.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldFile {
    pub schema_version: u32,
    pub env_hash: String,
    pub config_hash: String,
    pub field: CocycleField,
}

/// JSON export of homogenized statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatsFile {
    pub schema_version: u32,
    pub env_hash: String,
    pub field_hash: String,
    pub config_hash: String,
    pub stats: HomogenizedStats,
}
