//! Monte Carlo ensembles and pass/fail checks for the invariance principle.
//!
//! Each walk is simulated once on `[0, max(n) · T]` from a uniform start on
//! the giant cluster; every scale `n` reads the rescaled path
//! `X^n_t = n^{-1/2} X_{nt}` on `[0, T]` off that skeleton. With the corrector
//! `χ`, the walk splits as `X = M + R` where `R_t = χ(Y_t) − χ(Y_0)` and `M`
//! is a martingale.
//!
//! Running sup statistics of piecewise-constant minus linear functions are
//! evaluated at jump times, left limits and `T`, which is exact.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corrector::{check_field, sigma_gamma, solve_harmonic, CocycleField, HomogenizedStats};
use crate::env::{clusters, gen_env, ClusterLabels, ConductanceLaw, Environment};
use crate::error::{param, Error, Result};
use crate::linalg::{add_outer, dot, frobenius, madd, mscale, to_vector, vsub, Matrix, Vector, ZERO_MAT, ZERO_VEC};
use crate::pvar::{pvar_pow_flat, sup_deviation_matrix};
use crate::rng::stream_seed;
use crate::stats::{moments, quantile, Estimate};
use crate::walk::{simulate, JumpPath, StartPolicy};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// One fixed environment for all walks.
    Quenched,
    /// A fresh environment (and corrector solve) per walk.
    Annealed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSpec {
    /// Number of walks K.
    pub walks: usize,
    /// Walks (the first ones in stream order) that also get the O(m²)
    /// p-variation functionals.
    pub pvar_walks: usize,
    pub n_list: Vec<u64>,
    /// Horizon T after rescaling.
    pub horizon: f64,
    pub p: f64,
    pub master_seed: u64,
    pub mode: Mode,
    /// Integer direction `v` for the Lindeberg and Gaussianity checks.
    pub direction: Vec<i64>,
    /// Lindeberg truncation level δ.
    pub delta: f64,
}

impl EnsembleSpec {
    pub fn validate(&self, d: usize) -> Result<()> {
        if self.walks < 100 {
            return Err(param("walks", format!("need at least 100 walks, got {}", self.walks)));
        }
        if self.pvar_walks > self.walks {
            return Err(param("pvar_walks", "cannot exceed walks"));
        }
        if self.n_list.is_empty() || self.n_list[0] == 0 || self.n_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(param("n_list", "must be a nonempty strictly increasing list of positive scales"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(param("horizon", "must be positive and finite"));
        }
        if !(self.p > 2.0 && self.p.is_finite()) {
            return Err(param("p", format!("must exceed 2, got {}", self.p)));
        }
        if self.direction.len() != d {
            return Err(param("direction", format!("needs {d} components")));
        }
        if !(self.delta > 0.0) {
            return Err(param("delta", "must be positive"));
        }
        Ok(())
    }

    /// Simulated horizon `max(n) · T`.
    pub fn simulated_horizon(&self) -> f64 {
        *self.n_list.last().unwrap() as f64 * self.horizon
    }

    fn direction_vec(&self) -> Vector {
        let mut v = ZERO_VEC;
        for (c, x) in v.iter_mut().zip(&self.direction) {
            *c = *x as f64;
        }
        v
    }
}

/// Where walks take their environment from.
pub enum Source<'a> {
    Quenched { env: &'a Environment, labels: &'a ClusterLabels, field: &'a CocycleField },
    Annealed { law: ConductanceLaw, d: usize, side: usize, tol: f64, max_iters: usize },
}

/// Verdict thresholds; defaults reproduce the documented checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    /// Width of confidence bands in standard errors.
    pub k_sigma: f64,
    pub ucv_factor: f64,
    pub lindeberg_fraction: f64,
    /// Required decay of the corrector p-variation per factor 4 in n.
    pub pvar_ratio: f64,
    pub mixed_q_fraction: f64,
    pub eps_guard: f64,
    /// Trend checks pass outright when every value is below this.
    pub trend_floor: f64,
    /// Area-anomaly resolution target, relative to `‖TΓ‖_max`, for the K warning.
    pub area_resolution: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            k_sigma: 3.0,
            ucv_factor: 1.2,
            lindeberg_fraction: 0.01,
            pvar_ratio: 1.5,
            mixed_q_fraction: 0.1,
            eps_guard: 1e-12,
            trend_floor: 1e-12,
            area_resolution: 0.1,
        }
    }
}

/// Scalar sample summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub stderr: f64,
    pub median: f64,
    pub q75: f64,
    pub count: usize,
}

impl Summary {
    pub fn from_samples(xs: &[f64]) -> Self {
        let e = Estimate::from_samples(xs);
        Self { mean: e.mean, stderr: e.stderr, median: quantile(xs, 0.5), q75: quantile(xs, 0.75), count: e.count }
    }
}

/// Entrywise mean and standard error of matrix samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatrixSummary {
    pub mean: Matrix,
    pub stderr: Matrix,
    pub count: usize,
}

impl MatrixSummary {
    pub fn from_samples(xs: &[Matrix], d: usize) -> Self {
        let mut out = Self { mean: ZERO_MAT, stderr: ZERO_MAT, count: xs.len() };
        let mut col = Vec::with_capacity(xs.len());
        for i in 0..d {
            for j in 0..d {
                col.clear();
                col.extend(xs.iter().map(|m| m[i][j]));
                let e = Estimate::from_samples(&col);
                out.mean[i][j] = e.mean;
                out.stderr[i][j] = e.stderr;
            }
        }
        out
    }
}

/// Raw moments of the projection `v · X^n_T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentSummary {
    pub mean: f64,
    pub variance: f64,
    pub excess_kurtosis: f64,
    pub count: usize,
}

/// Everything the verdicts need at one scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleSummary {
    pub n: u64,
    /// `max_{ij} sup_t |[M^n]_{ij,t} − t Σ²_{ij}|`.
    pub qv_dev: Summary,
    /// `[M^n]_T`.
    pub qv_terminal: MatrixSummary,
    /// Truncated jump sum `Σ (v·ΔM^n)² 1{|v·ΔM^n| > δ}`.
    pub lindeberg: Summary,
    /// `‖R^n‖_{p-var}` on the p-variation subset.
    pub corrector_pvar: Option<Summary>,
    /// `max_{ij} sup_t |𝕉^n_{ij,0,t} − t Γ_{ij}|`.
    pub corrector_area_dev: Summary,
    /// `𝕉^n_{0,T}`.
    pub corrector_area: MatrixSummary,
    /// `‖Q(M^n, R^n)‖_{p/2-var}^{1/2}` on the p-variation subset.
    pub mixed_q: Option<Summary>,
    /// Itô area `𝕏^n_{0,T}`.
    pub ito: MatrixSummary,
    /// Stratonovich area `𝕏̄^n_{0,T}`.
    pub strat: MatrixSummary,
    pub projection: MomentSummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub check: String,
    pub status: Status,
    pub statistic: f64,
    pub threshold: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub master_seed: u64,
    pub mode: Mode,
    pub env_hash: Option<String>,
    pub field_hash: Option<String>,
    pub config_hash: Option<String>,
    /// Largest solver residual over the environments used.
    pub solver_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub schema_version: u32,
    pub spec: EnsembleSpec,
    pub thresholds: Thresholds,
    /// Σ², Γ used as limits; in annealed mode the average over walks.
    pub reference: HomogenizedStats,
    pub provenance: Provenance,
    pub scales: Vec<ScaleSummary>,
    pub verdicts: Vec<Verdict>,
    pub warnings: Vec<String>,
    /// Scalar-structure check over independent environments, when requested.
    #[serde(default)]
    pub isotropy: Option<IsotropyReport>,
}

impl DiagnosticsReport {
    pub fn passed(&self) -> bool {
        self.failed().is_empty()
    }

    /// Failed verdicts, including the isotropy section.
    pub fn failed(&self) -> Vec<&Verdict> {
        let iso = self.isotropy.iter().flat_map(|r| r.verdicts.iter());
        self.verdicts.iter().chain(iso).filter(|v| v.status == Status::Fail).collect()
    }

    pub fn verdict(&self, check: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.check == check)
    }

    /// Recompute verdicts from the stored summaries.
    pub fn recompute(&self, thresholds: &Thresholds) -> (Vec<Verdict>, Vec<String>) {
        evaluate_verdicts(&self.spec, &self.reference, &self.scales, thresholds)
    }

    /// One row per (check, n); matrix statistics get one row per entry.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("check,n,mean,stderr,median,q75,count\n");
        let d = self.reference.d;
        for s in &self.scales {
            let mut scalar = |name: &str, x: &Summary| {
                writeln!(out, "{name},{},{:e},{:e},{:e},{:e},{}", s.n, x.mean, x.stderr, x.median, x.q75, x.count).unwrap();
            };
            scalar("qv_dev", &s.qv_dev);
            scalar("lindeberg", &s.lindeberg);
            if let Some(x) = &s.corrector_pvar {
                scalar("corrector_pvar", x);
            }
            scalar("corrector_area_dev", &s.corrector_area_dev);
            if let Some(x) = &s.mixed_q {
                scalar("mixed_q", x);
            }
            for (name, m) in [("qv_terminal", &s.qv_terminal), ("corrector_area", &s.corrector_area), ("ito", &s.ito), ("strat", &s.strat)] {
                for i in 0..d {
                    for j in 0..d {
                        writeln!(out, "{name}_{}{},{},{:e},{:e},,,{}", i + 1, j + 1, s.n, m.mean[i][j], m.stderr[i][j], m.count).unwrap();
                    }
                }
            }
            let pr = &s.projection;
            writeln!(out, "projection_mean,{},{:e},,,,{}", s.n, pr.mean, pr.count).unwrap();
            writeln!(out, "projection_variance,{},{:e},,,,{}", s.n, pr.variance, pr.count).unwrap();
            writeln!(out, "projection_excess_kurtosis,{},{:e},,,,{}", s.n, pr.excess_kurtosis, pr.count).unwrap();
        }
        out
    }
}

/// Per-walk values at one scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleSample {
    pub qv_dev: f64,
    pub qv_terminal: Matrix,
    pub lindeberg: f64,
    pub corrector_pvar: Option<f64>,
    pub corrector_area_dev: f64,
    pub corrector_area: Matrix,
    pub mixed_q: Option<f64>,
    pub ito: Matrix,
    pub strat: Matrix,
    pub projection: f64,
}

/// Compute all per-scale functionals of one walk.
///
/// `sigma2` and `gamma` are the drifts subtracted in the sup statistics.
pub fn walk_samples(
    path: &JumpPath,
    field: &CocycleField,
    spec: &EnsembleSpec,
    sigma2: &Matrix,
    gamma: &Matrix,
    with_pvar: bool,
) -> Result<Vec<ScaleSample>> {
    let d = path.d;
    let v = spec.direction_vec();
    let chi0 = field.chi_at(path.start)?;
    let xs: Vec<Vector> = path.positions.iter().map(to_vector).collect();
    let rs: Vec<Vector> = path.sites.iter().map(|&s| field.chi_at(s as usize).map(|c| vsub(&c, &chi0))).collect::<Result<_>>()?;

    let mut out = Vec::with_capacity(spec.n_list.len());
    let mut times = Vec::new();
    let mut qmm_prefix = Vec::new();
    let mut area_prefix = Vec::new();
    let mut r_flat = Vec::new();
    let mut qmr_flat = Vec::new();
    for &n in &spec.n_list {
        let nf = n as f64;
        let inv = 1.0 / nf;
        let scale = inv.sqrt();
        let m = path.times.partition_point(|&t| t <= nf * spec.horizon);

        times.clear();
        times.extend(path.times[..m].iter().map(|t| t * inv));
        qmm_prefix.clear();
        qmm_prefix.push(ZERO_MAT);
        area_prefix.clear();
        area_prefix.push(ZERO_MAT);
        r_flat.clear();
        r_flat.extend_from_slice(&ZERO_VEC[..d]);
        qmr_flat.clear();
        qmr_flat.extend(std::iter::repeat_n(0.0, d * d));

        let (mut ito, mut qxx, mut qmm, mut area, mut qmr) = (ZERO_MAT, ZERO_MAT, ZERO_MAT, ZERO_MAT, ZERO_MAT);
        let mut lindeberg = 0.0;
        let (mut px, mut pr) = (ZERO_VEC, ZERO_VEC);
        for k in 0..m {
            let dx = vsub(&xs[k], &px);
            let dr = vsub(&rs[k], &pr);
            let dm = vsub(&dx, &dr);
            add_outer(&mut ito, 1.0, &px, &dx);
            add_outer(&mut qxx, 1.0, &dx, &dx);
            add_outer(&mut qmm, 1.0, &dm, &dm);
            add_outer(&mut area, 1.0, &pr, &dr);
            qmm_prefix.push(mscale(&qmm, inv));
            area_prefix.push(mscale(&area, inv));
            let a = dot(&v, &dm) * scale;
            if a.abs() > spec.delta {
                lindeberg += a * a;
            }
            if with_pvar {
                add_outer(&mut qmr, 1.0, &dm, &dr);
                r_flat.extend_from_slice(&rs[k][..d]);
                for row in qmr.iter().take(d) {
                    qmr_flat.extend_from_slice(&row[..d]);
                }
            }
            px = xs[k];
            pr = rs[k];
        }
        let (corrector_pvar, mixed_q) = if with_pvar {
            let rp = pvar_pow_flat(&r_flat, d, spec.p).powf(1.0 / spec.p) * scale;
            let q = spec.p / 2.0;
            let mq = (pvar_pow_flat(&qmr_flat, d * d, q).powf(1.0 / q) * inv).sqrt();
            (Some(rp), Some(mq))
        } else {
            (None, None)
        };
        out.push(ScaleSample {
            qv_dev: sup_deviation_matrix(&qmm_prefix, &times, sigma2, spec.horizon, d),
            qv_terminal: *qmm_prefix.last().unwrap(),
            lindeberg,
            corrector_pvar,
            corrector_area_dev: sup_deviation_matrix(&area_prefix, &times, gamma, spec.horizon, d),
            corrector_area: *area_prefix.last().unwrap(),
            mixed_q,
            ito: mscale(&ito, inv),
            strat: mscale(&madd(&ito, &mscale(&qxx, 0.5)), inv),
            projection: dot(&v, &px) * scale,
        });
    }
    Ok(out)
}

struct WalkResult {
    scales: Vec<ScaleSample>,
    stats: Option<HomogenizedStats>,
    residual: f64,
}

/// Seed of walk `k`'s path; annealed environments use the odd streams.
pub fn walk_seed(master: u64, k: usize) -> u64 {
    stream_seed(master, 2 * k as u64)
}

pub fn annealed_env_seed(master: u64, k: usize) -> u64 {
    stream_seed(master, 2 * k as u64 + 1)
}

/// Run an ensemble and evaluate all verdicts.
pub fn run_ensemble(spec: &EnsembleSpec, source: &Source<'_>, thresholds: &Thresholds) -> Result<DiagnosticsReport> {
    let horizon = spec.simulated_horizon();
    let (results, reference, provenance) = match *source {
        Source::Quenched { env, labels, field } => {
            if spec.mode != Mode::Quenched {
                return Err(param("mode", "a fixed environment requires quenched mode"));
            }
            spec.validate(env.dim())?;
            check_field(env, labels, field)?;
            let stats = sigma_gamma(env, labels, field)?;
            let results: Vec<WalkResult> = (0..spec.walks)
                .into_par_iter()
                .map(|k| {
                    let path = simulate(env, labels, horizon, walk_seed(spec.master_seed, k), StartPolicy::UniformOnGiant)?;
                    let scales = walk_samples(&path, field, spec, &stats.sigma2, &stats.gamma, k < spec.pvar_walks)?;
                    Ok(WalkResult { scales, stats: None, residual: field.residual })
                })
                .collect::<Result<_>>()?;
            let prov = Provenance {
                master_seed: spec.master_seed,
                mode: spec.mode,
                env_hash: Some(env.hash()),
                field_hash: None,
                config_hash: None,
                solver_residual: field.residual,
            };
            (results, stats, prov)
        }
        Source::Annealed { law, d, side, tol, max_iters } => {
            if spec.mode != Mode::Annealed {
                return Err(param("mode", "fresh environments require annealed mode"));
            }
            spec.validate(d)?;
            law.validate(d, side)?;
            let results: Vec<WalkResult> = (0..spec.walks)
                .into_par_iter()
                .map(|k| {
                    let env = gen_env(law, d, side, annealed_env_seed(spec.master_seed, k))?;
                    let labels = clusters(&env);
                    let field = solve_harmonic(&env, &labels, tol, max_iters)?;
                    let stats = sigma_gamma(&env, &labels, &field)?;
                    let path = simulate(&env, &labels, horizon, walk_seed(spec.master_seed, k), StartPolicy::UniformOnGiant)?;
                    let scales = walk_samples(&path, &field, spec, &stats.sigma2, &stats.gamma, k < spec.pvar_walks)?;
                    Ok(WalkResult { scales, stats: Some(stats), residual: field.residual })
                })
                .collect::<Result<_>>()?;
            let reference = average_stats(results.iter().filter_map(|r| r.stats.as_ref()))?;
            let prov = Provenance {
                master_seed: spec.master_seed,
                mode: spec.mode,
                env_hash: None,
                field_hash: None,
                config_hash: None,
                solver_residual: results.iter().map(|r| r.residual).fold(0.0, f64::max),
            };
            (results, reference, prov)
        }
    };
    let scales = summarize(spec, &results, reference.d);
    let (verdicts, warnings) = evaluate_verdicts(spec, &reference, &scales, thresholds);
    Ok(DiagnosticsReport {
        schema_version: SCHEMA_VERSION,
        spec: spec.clone(),
        thresholds: *thresholds,
        reference,
        provenance,
        scales,
        verdicts,
        warnings,
        isotropy: None,
    })
}

fn average_stats<'a>(stats: impl Iterator<Item = &'a HomogenizedStats>) -> Result<HomogenizedStats> {
    let mut count = 0usize;
    let mut acc: Option<HomogenizedStats> = None;
    for s in stats {
        count += 1;
        acc = Some(match acc {
            None => *s,
            Some(a) => HomogenizedStats {
                d: a.d,
                sigma2: madd(&a.sigma2, &s.sigma2),
                gamma: madd(&a.gamma, &s.gamma),
                m2: madd(&a.m2, &s.m2),
                m2_scalar: a.m2_scalar + s.m2_scalar,
                density: a.density + s.density,
            },
        });
    }
    let a = acc.ok_or_else(|| Error::Range("no environments to average".into()))?;
    let w = 1.0 / count as f64;
    Ok(HomogenizedStats {
        d: a.d,
        sigma2: mscale(&a.sigma2, w),
        gamma: mscale(&a.gamma, w),
        m2: mscale(&a.m2, w),
        m2_scalar: a.m2_scalar * w,
        density: a.density * w,
    })
}

fn summarize(spec: &EnsembleSpec, results: &[WalkResult], d: usize) -> Vec<ScaleSummary> {
    let mut out = Vec::with_capacity(spec.n_list.len());
    for (idx, &n) in spec.n_list.iter().enumerate() {
        let at = |f: &dyn Fn(&ScaleSample) -> f64| results.iter().map(|r| f(&r.scales[idx])).collect::<Vec<f64>>();
        let mat = |f: &dyn Fn(&ScaleSample) -> Matrix| MatrixSummary::from_samples(&results.iter().map(|r| f(&r.scales[idx])).collect::<Vec<_>>(), d);
        let opt = |f: &dyn Fn(&ScaleSample) -> Option<f64>| {
            let xs: Vec<f64> = results.iter().filter_map(|r| f(&r.scales[idx])).collect();
            (!xs.is_empty()).then(|| Summary::from_samples(&xs))
        };
        let proj = at(&|s| s.projection);
        let (mean, variance, excess_kurtosis) = moments(&proj);
        out.push(ScaleSummary {
            n,
            qv_dev: Summary::from_samples(&at(&|s| s.qv_dev)),
            qv_terminal: mat(&|s| s.qv_terminal),
            lindeberg: Summary::from_samples(&at(&|s| s.lindeberg)),
            corrector_pvar: opt(&|s| s.corrector_pvar),
            corrector_area_dev: Summary::from_samples(&at(&|s| s.corrector_area_dev)),
            corrector_area: mat(&|s| s.corrector_area),
            mixed_q: opt(&|s| s.mixed_q),
            ito: mat(&|s| s.ito),
            strat: mat(&|s| s.strat),
            projection: MomentSummary { mean, variance, excess_kurtosis, count: proj.len() },
        });
    }
    out
}

fn verdict(check: &str, pass: bool, statistic: f64, threshold: f64, detail: String) -> Verdict {
    Verdict { check: check.into(), status: if pass { Status::Pass } else { Status::Fail }, statistic, threshold, detail }
}

fn skipped(check: &str, detail: &str) -> Verdict {
    Verdict { check: check.into(), status: Status::Skipped, statistic: 0.0, threshold: 0.0, detail: detail.into() }
}

fn strictly_decreasing(xs: &[f64], floor: f64) -> bool {
    xs.iter().all(|x| x.abs() <= floor) || xs.windows(2).all(|w| w[1] < w[0])
}

fn list(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:.4e}")).collect::<Vec<_>>().join(", ")
}

/// Worst entrywise z-score of `mean − target` and whether every entry lies
/// within `k` standard errors (entries with zero stderr must match to `floor`).
fn band(m: &MatrixSummary, target: &Matrix, d: usize, k: f64, floor: f64) -> (bool, f64) {
    let mut ok = true;
    let mut worst = 0.0f64;
    for i in 0..d {
        for j in 0..d {
            let dev = (m.mean[i][j] - target[i][j]).abs();
            let se = m.stderr[i][j];
            ok &= dev <= k * se || dev <= floor;
            if se > 0.0 {
                worst = worst.max(dev / se);
            } else if dev > floor {
                worst = f64::INFINITY;
            }
        }
    }
    (ok, worst)
}

/// Evaluate every verdict from summaries alone.
pub fn evaluate_verdicts(spec: &EnsembleSpec, reference: &HomogenizedStats, scales: &[ScaleSummary], th: &Thresholds) -> (Vec<Verdict>, Vec<String>) {
    let d = reference.d;
    let t = spec.horizon;
    let k = th.k_sigma;
    let floor = th.trend_floor;
    let mut out = Vec::new();
    let mut warnings = Vec::new();
    let last = match scales.last() {
        Some(s) => s,
        None => return (out, warnings),
    };
    let ns: Vec<f64> = scales.iter().map(|s| s.n as f64).collect();

    let medians: Vec<f64> = scales.iter().map(|s| s.qv_dev.median).collect();
    out.push(verdict("qv_limit", strictly_decreasing(&medians, floor), medians[medians.len() - 1], medians[0], format!("medians over n: {}", list(&medians))));

    let trace_limit = th.ucv_factor * (0..d).map(|i| reference.sigma2[i][i]).sum::<f64>() * t;
    let mut ucv_ok = true;
    let mut worst_z = 0.0f64;
    let mut worst_trace = 0.0f64;
    for s in scales {
        for i in 0..d {
            let m = &s.qv_terminal;
            let dev = (m.mean[i][i] - t * reference.sigma2[i][i]).abs();
            ucv_ok &= dev <= k * m.stderr[i][i] || dev <= floor;
            if m.stderr[i][i] > 0.0 {
                worst_z = worst_z.max(dev / m.stderr[i][i]);
            }
        }
        worst_trace = worst_trace.max((0..d).map(|i| s.qv_terminal.mean[i][i]).sum());
    }
    ucv_ok &= worst_trace <= trace_limit + th.eps_guard;
    out.push(verdict("ucv", ucv_ok, worst_z, k, format!("max mean trace {worst_trace:.4e} against bound {trace_limit:.4e}")));

    let v = spec.direction_vec();
    let vsv: f64 = (0..d).map(|i| (0..d).map(|j| v[i] * reference.sigma2[i][j] * v[j]).sum::<f64>()).sum();
    let lind: Vec<f64> = scales.iter().map(|s| s.lindeberg.mean).collect();
    let lind_limit = th.lindeberg_fraction * vsv * t;
    let lind_final = lind[lind.len() - 1];
    out.push(verdict(
        "lindeberg",
        (lind_final <= lind_limit || lind_final <= floor) && lind_final <= lind[0] + floor,
        lind_final,
        lind_limit,
        format!("means over n: {}", list(&lind)),
    ));

    match scales.iter().map(|s| s.corrector_pvar.map(|x| x.mean)).collect::<Option<Vec<f64>>>() {
        None => out.push(skipped("corrector_pvar", "no walks in the p-variation subset")),
        Some(means) => {
            let mut ok = true;
            let mut worst = f64::INFINITY;
            for (w, nw) in means.windows(2).zip(ns.windows(2)) {
                let need = th.pvar_ratio.powf((nw[1] / nw[0]).ln() / 4f64.ln());
                let ratio = w[0] / w[1];
                worst = worst.min(ratio / need);
                ok &= ratio >= need;
            }
            let all_small = means.iter().all(|x| x.abs() <= floor);
            out.push(verdict(
                "corrector_pvar",
                all_small || ok,
                if worst.is_finite() { worst } else { 0.0 },
                1.0,
                format!("means over n: {}; statistic is the worst observed/required decay ratio", list(&means)),
            ));
        }
    }

    let area_medians: Vec<f64> = scales.iter().map(|s| s.corrector_area_dev.median).collect();
    out.push(verdict(
        "corrector_area",
        strictly_decreasing(&area_medians, floor),
        area_medians[area_medians.len() - 1],
        area_medians[0],
        format!("median sup-deviation over n: {}", list(&area_medians)),
    ));
    let target_area = mscale(&reference.gamma, t);
    let (ok, z) = band(&last.corrector_area, &target_area, d, k, floor);
    out.push(verdict("corrector_area_mean", ok, z, k, format!("mean 𝕉^n_(0,T) against TΓ at n = {}", last.n)));

    match scales.iter().map(|s| s.mixed_q.map(|x| x.mean)).collect::<Option<Vec<f64>>>() {
        None => out.push(skipped("mixed_q", "no walks in the p-variation subset")),
        Some(means) => {
            let limit = th.mixed_q_fraction * (t * frobenius(&reference.sigma2) * frobenius(&mscale(&reference.gamma, 2.0)) + th.eps_guard).sqrt();
            let fin = means[means.len() - 1];
            out.push(verdict(
                "mixed_q",
                strictly_decreasing(&means, floor) && fin <= limit,
                fin,
                limit,
                format!("means over n: {}", list(&means)),
            ));
        }
    }

    let (ok, z) = band(&last.ito, &target_area, d, k, floor);
    out.push(verdict("area_anomaly_ito", ok, z, k, format!("mean 𝕏^n_(0,T) against TΓ at n = {}", last.n)));
    let target_strat = mscale(&reference.sigma2, 0.5 * t);
    let (ok, z) = band(&last.strat, &target_strat, d, k, floor);
    out.push(verdict("area_anomaly_stratonovich", ok, z, k, format!("mean 𝕏̄^n_(0,T) against ½TΣ² at n = {}", last.n)));
    let gamma_max = crate::linalg::max_abs(&target_area);
    let se_max = crate::linalg::max_abs(&last.ito.stderr);
    if gamma_max > 0.0 && se_max > th.area_resolution * gamma_max {
        let needed = (last.ito.count as f64 * (se_max / (th.area_resolution * gamma_max)).powi(2)).ceil();
        warnings.push(format!(
            "area anomaly: stderr {se_max:.3e} exceeds {:.0}% of ‖TΓ‖_max = {gamma_max:.3e}; about K = {needed:.0} walks are needed",
            th.area_resolution * 100.0
        ));
    }

    let pr = &last.projection;
    if v.iter().all(|&c| c == 0.0) || vsv <= 0.0 {
        out.push(skipped("gaussianity", "degenerate direction (v = 0 or vᵀΣ²v = 0)"));
    } else {
        let kk = pr.count as f64;
        let sd = (vsv * t).sqrt();
        let mean = pr.mean / sd;
        let var = pr.variance / (sd * sd);
        let kurt = pr.excess_kurtosis;
        let ok = mean.abs() <= k / kk.sqrt() && (var - 1.0).abs() <= k * (2.0 / kk).sqrt() && kurt.abs() <= k * (24.0 / kk).sqrt();
        out.push(verdict(
            "gaussianity",
            ok,
            var,
            1.0,
            format!("standardized mean {mean:.4e}, variance {var:.4e}, excess kurtosis {kurt:.4e} at n = {}", last.n),
        ));
    }
    (out, warnings)
}

/// Scalar summary of homogenized matrices over independent environments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotropyReport {
    pub envs: usize,
    pub tol: f64,
    pub k_sigma: f64,
    pub per_env: Vec<HomogenizedStats>,
    pub sigma2: MatrixSummary,
    pub gamma: MatrixSummary,
    pub m2: MatrixSummary,
    /// Means over environments of the diagonal averages.
    pub sigma2_scalar: Estimate,
    pub gamma_scalar: Estimate,
    pub m2_scalar: Estimate,
    /// `max_env |γ + (m² − σ²)/2| / m²` with per-coordinate diagonal averages.
    pub identity_defect: f64,
    pub verdicts: Vec<Verdict>,
}

impl IsotropyReport {
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.status != Status::Fail)
    }

    /// Recompute from the stored per-environment statistics.
    pub fn recompute(&self) -> Result<IsotropyReport> {
        isotropy_check(&self.per_env, self.tol, self.k_sigma)
    }
}

/// Scalar structure of Σ², Γ over independent environments.
pub fn isotropy_check(stats: &[HomogenizedStats], tol: f64, k: f64) -> Result<IsotropyReport> {
    if stats.len() < 2 {
        return Err(param("stats", "need at least two environments"));
    }
    let d = stats[0].d;
    if stats.iter().any(|s| s.d != d) {
        return Err(param("stats", "environments of different dimension"));
    }
    let collect = |f: &dyn Fn(&HomogenizedStats) -> Matrix| stats.iter().map(f).collect::<Vec<_>>();
    let diag_avg = |m: &Matrix| (0..d).map(|i| m[i][i]).sum::<f64>() / d as f64;
    let s_diag: Vec<f64> = stats.iter().map(|s| diag_avg(&s.sigma2)).collect();
    let g_diag: Vec<f64> = stats.iter().map(|s| diag_avg(&s.gamma)).collect();
    let m_diag: Vec<f64> = stats.iter().map(|s| diag_avg(&s.m2)).collect();

    let mut verdicts = Vec::new();
    for (name, get) in [("sigma2", (|s: &HomogenizedStats| s.sigma2) as fn(&HomogenizedStats) -> Matrix), ("gamma", |s| s.gamma)] {
        let mut off_ok = true;
        let mut off_z = 0.0f64;
        let mut diag_ok = true;
        let mut diag_z = 0.0f64;
        for i in 0..d {
            for j in i + 1..d {
                let e = Estimate::from_samples(&stats.iter().map(|s| get(s)[i][j]).collect::<Vec<_>>());
                off_ok &= e.within(0.0, k);
                off_z = off_z.max(e.mean.abs() / e.stderr.max(f64::MIN_POSITIVE));
                let diff = Estimate::from_samples(&stats.iter().map(|s| get(s)[i][i] - get(s)[j][j]).collect::<Vec<_>>());
                diag_ok &= diff.within(0.0, k) || diff.mean.abs() <= 1e-12;
                diag_z = diag_z.max(diff.mean.abs() / diff.stderr.max(f64::MIN_POSITIVE));
            }
        }
        verdicts.push(verdict(&format!("{name}_offdiagonal"), off_ok, off_z, k, "largest |mean|/stderr of off-diagonal entries".into()));
        verdicts.push(verdict(&format!("{name}_diagonal"), diag_ok, diag_z, k, "largest |mean|/stderr of diagonal differences".into()));
    }
    let mut defect = 0.0f64;
    let mut identity_ok = true;
    for ((s, g), m) in s_diag.iter().zip(&g_diag).zip(&m_diag) {
        let dev = (g + (m - s) / 2.0).abs();
        identity_ok &= dev <= 10.0 * tol * m.abs();
        if *m > 0.0 {
            defect = defect.max(dev / m);
        }
    }
    verdicts.push(verdict("scalar_identity", identity_ok, defect, 10.0 * tol, "per-environment |γ + (m² − σ²)/2| / m²".into()));
    Ok(IsotropyReport {
        envs: stats.len(),
        tol,
        k_sigma: k,
        per_env: stats.to_vec(),
        sigma2: MatrixSummary::from_samples(&collect(&|s| s.sigma2), d),
        gamma: MatrixSummary::from_samples(&collect(&|s| s.gamma), d),
        m2: MatrixSummary::from_samples(&collect(&|s| s.m2), d),
        sigma2_scalar: Estimate::from_samples(&s_diag),
        gamma_scalar: Estimate::from_samples(&g_diag),
        m2_scalar: Estimate::from_samples(&m_diag),
        identity_defect: defect,
        verdicts,
    })
}

/// Edge sum `Σ_z ω ΔΦ^i Δχ^j` averaged over the cluster; the exact n = 1
/// ensemble limit of the mixed covariation rate.
pub fn mixed_covariation_rate(env: &Environment, labels: &ClusterLabels, field: &CocycleField) -> Result<Matrix> {
    crate::corrector::orthogonality_defect(env, labels, field)
}

/// Limits of the mean Itô and Stratonovich areas: `TΓ` and `½TΣ²`.
pub fn area_targets(stats: &HomogenizedStats, horizon: f64) -> (Matrix, Matrix) {
    (mscale(&stats.gamma, horizon), mscale(&stats.sigma2, 0.5 * horizon))
}
