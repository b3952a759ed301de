//! Exact simulation of the variable-speed random walk.
//!
//! At site `x` the walk waits an Exponential(μ(x)) time and then jumps to `y`
//! with probability `ω({x, y}) / μ(x)`. Both draws use inverse-CDF sampling
//! from the path's own ChaCha stream, so a path is a pure function of
//! `(environment, horizon, seed, start policy)`.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{ClusterLabels, Environment};
use crate::error::{Error, Result};
use crate::linalg::{Point, MAX_DIM};
use crate::rng::stream_rng;
use crate::roughpath::RealPath;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartPolicy {
    /// Start at vertex 0; it must belong to the giant cluster.
    OriginIfInGiant,
    /// Start at a uniformly chosen giant-cluster vertex (first draw of the stream).
    UniformOnGiant,
}

/// Jump skeleton of one walk. Displacements are unwrapped (in Z^d); the
/// torus site after jump `k` is `start + positions[k] mod L`.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpPath {
    pub d: usize,
    pub start: usize,
    pub horizon: f64,
    pub times: Vec<f64>,
    pub positions: Vec<Point>,
    /// Torus vertex after each jump.
    pub sites: Vec<u32>,
    pub seed: u64,
}

impl JumpPath {
    pub fn num_jumps(&self) -> usize {
        self.times.len()
    }

    /// Right-continuous evaluation of the displacement at time `t`.
    pub fn position_at(&self, t: f64) -> Result<Point> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::Range(format!("t = {t} outside [0, {}]", self.horizon)));
        }
        let k = self.times.partition_point(|&s| s <= t);
        Ok(if k == 0 { [0; MAX_DIM] } else { self.positions[k - 1] })
    }

    /// Torus site after `k` jumps.
    pub fn site_at_jump(&self, k: usize) -> usize {
        if k == 0 {
            self.start
        } else {
            self.sites[k - 1] as usize
        }
    }

    /// Real-valued copy on the same skeleton, starting at 0.
    pub fn to_real(&self) -> RealPath {
        let values = self.positions.iter().map(crate::linalg::to_vector).collect();
        RealPath::new(self.d, self.horizon, [0.0; MAX_DIM], self.times.clone(), values)
            .expect("a simulated path is a valid skeleton")
    }

    /// CSV export: header `t,x1,…,xd`, rows for t = 0, every jump, and t = T.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for i in 1..=self.d {
            write!(out, ",x{i}").unwrap();
        }
        out.push('\n');
        let mut row = |t: f64, x: &Point| {
            write!(out, "{t:?}").unwrap();
            for c in x.iter().take(self.d) {
                write!(out, ",{c}").unwrap();
            }
            out.push('\n');
        };
        row(0.0, &[0; MAX_DIM]);
        for (t, x) in self.times.iter().zip(&self.positions) {
            row(*t, x);
        }
        row(self.horizon, self.positions.last().unwrap_or(&[0; MAX_DIM]));
        out
    }
}

/// Simulate the walk on `[0, horizon]`.
pub fn simulate(
    env: &Environment,
    labels: &ClusterLabels,
    horizon: f64,
    seed: u64,
    policy: StartPolicy,
) -> Result<JumpPath> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::Range(format!("horizon must be positive and finite, got {horizon}")));
    }
    let mut rng = stream_rng(seed);
    let start = match policy {
        StartPolicy::OriginIfInGiant => {
            if env.mu(0) <= 0.0 {
                return Err(Error::Start { site: 0, reason: "isolated site (μ = 0)" });
            }
            if !labels.in_giant(0) {
                return Err(Error::Start { site: 0, reason: "not in the giant cluster" });
            }
            0
        }
        StartPolicy::UniformOnGiant => {
            if labels.giant_size == 0 {
                return Err(Error::Start { site: 0, reason: "empty giant cluster" });
            }
            let pick = rng.random_range(0..labels.giant_size);
            labels
                .label
                .iter()
                .enumerate()
                .filter(|(_, &l)| l == labels.giant_id)
                .nth(pick)
                .map(|(v, _)| v)
                .unwrap()
        }
    };

    let offsets = env.signed_offsets();
    let mut site = start;
    let mut pos = [0i64; MAX_DIM];
    let mut t = 0.0;
    let mut times = Vec::new();
    let mut positions = Vec::new();
    let mut sites = Vec::new();
    loop {
        let rate = env.mu(site);
        let u: f64 = rng.random();
        t += -(1.0 - u).ln() / rate;
        if t > horizon {
            break;
        }
        let edges = env.neighbors(site);
        let target = rng.random::<f64>() * rate;
        let mut acc = 0.0;
        let mut chosen = edges[edges.len() - 1];
        for e in edges {
            acc += e.weight;
            if target < acc {
                chosen = *e;
                break;
            }
        }
        let z = &offsets[chosen.offset as usize];
        for i in 0..MAX_DIM {
            pos[i] += z[i];
        }
        site = chosen.target as usize;
        times.push(t);
        positions.push(pos);
        sites.push(site as u32);
    }
    Ok(JumpPath { d: env.dim(), start, horizon, times, positions, sites, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{clusters, gen_env, ConductanceLaw};
    use crate::rng::stream_seed;
    use crate::stats::Estimate;

    fn constant_env() -> (Environment, ClusterLabels) {
        let env = gen_env(ConductanceLaw::Constant { c: 1.0 }, 2, 16, 0).unwrap();
        let labels = clusters(&env);
        (env, labels)
    }

    #[test]
    fn isolated_start_is_rejected() {
        let base = gen_env(ConductanceLaw::Constant { c: 1.0 }, 2, 4, 0).unwrap();
        let env = Environment::from_parts(2, 4, base.law(), 0, base.jumps().to_vec(), vec![0.0; 32]).unwrap();
        let labels = clusters(&env);
        assert!(matches!(
            simulate(&env, &labels, 1.0, 0, StartPolicy::OriginIfInGiant),
            Err(Error::Start { .. })
        ));
        assert!(simulate(&env, &labels, 1.0, 0, StartPolicy::UniformOnGiant).is_err());
    }

    #[test]
    fn origin_outside_giant_is_rejected() {
        let base = gen_env(ConductanceLaw::Constant { c: 1.0 }, 2, 8, 0).unwrap();
        let mut c = base.conductances().to_vec();
        let n = 64;
        // cut the pair {0, e_1} off: keep only the edge between them
        let keep = (0usize, 0usize);
        for v in [0usize, base.index(&[1, 0, 0])] {
            let x = base.coords(v);
            for (k, z) in base.jumps().iter().enumerate() {
                if (k, v) != keep {
                    c[k * n + v] = 0.0;
                }
                c[k * n + base.index(&crate::env::sub(&x, z))] = 0.0;
            }
        }
        c[0] = 1.0;
        let env = Environment::from_parts(2, 8, base.law(), 0, base.jumps().to_vec(), c).unwrap();
        let labels = clusters(&env);
        assert!(!labels.in_giant(0));
        assert!(env.mu(0) > 0.0);
        assert!(matches!(
            simulate(&env, &labels, 1.0, 0, StartPolicy::OriginIfInGiant),
            Err(Error::Start { reason: "not in the giant cluster", .. })
        ));
        let path = simulate(&env, &labels, 5.0, 3, StartPolicy::UniformOnGiant).unwrap();
        assert!(labels.in_giant(path.start));
    }

    #[test]
    fn skeleton_invariants() {
        let env = gen_env(ConductanceLaw::PercolationWeighted { p: 0.7, a: 1.0, b: 2.0 }, 2, 32, 4).unwrap();
        let labels = clusters(&env);
        let path = simulate(&env, &labels, 50.0, 17, StartPolicy::UniformOnGiant).unwrap();
        assert!(path.num_jumps() > 10);
        let mut prev_t = 0.0;
        let mut prev = [0i64; MAX_DIM];
        for k in 0..path.num_jumps() {
            assert!(path.times[k] > prev_t && path.times[k] <= path.horizon);
            let step = crate::env::sub(&path.positions[k], &prev);
            assert!(env.signed_offsets().contains(&step));
            assert_eq!(env.translate(path.start, &path.positions[k]), path.sites[k] as usize);
            assert!(labels.in_giant(path.sites[k] as usize));
            prev_t = path.times[k];
            prev = path.positions[k];
        }
        let again = simulate(&env, &labels, 50.0, 17, StartPolicy::UniformOnGiant).unwrap();
        assert_eq!(path, again);
    }

    #[test]
    fn position_at_is_cadlag() {
        let (env, labels) = constant_env();
        let path = simulate(&env, &labels, 3.0, 5, StartPolicy::OriginIfInGiant).unwrap();
        assert!(path.num_jumps() > 1);
        assert_eq!(path.position_at(0.0).unwrap(), [0; MAX_DIM]);
        let t1 = path.times[0];
        assert_eq!(path.position_at(t1 * (1.0 - 1e-12)).unwrap(), [0; MAX_DIM]);
        assert_eq!(path.position_at(t1).unwrap(), path.positions[0]);
        assert_eq!(path.position_at(3.0).unwrap(), *path.positions.last().unwrap());
        assert!(path.position_at(-0.1).is_err());
        assert!(path.position_at(3.1).is_err());
    }

    #[test]
    fn jump_counts_and_moments_on_constant_lattice() {
        let (env, labels) = constant_env();
        let runs = 10_000;
        let horizon = 1.0;
        let mut counts = Vec::with_capacity(runs);
        let mut x1 = Vec::with_capacity(runs);
        let mut x2 = Vec::with_capacity(runs);
        let mut sq = Vec::with_capacity(runs);
        for k in 0..runs {
            let path = simulate(&env, &labels, horizon, stream_seed(123, k as u64), StartPolicy::OriginIfInGiant).unwrap();
            counts.push(path.num_jumps() as f64);
            let x = path.position_at(horizon).unwrap();
            x1.push(x[0] as f64);
            x2.push(x[1] as f64);
            sq.push((x[0] * x[0]) as f64);
        }
        // Poisson(μT) jump count
        let c = Estimate::from_samples(&counts);
        assert!(c.within(4.0 * horizon, 3.0), "{c:?}");
        assert!(Estimate::from_samples(&x1).within(0.0, 3.0));
        assert!(Estimate::from_samples(&x2).within(0.0, 3.0));
        // per-coordinate variance 2t
        let v = Estimate::from_samples(&sq);
        assert!(v.within(2.0 * horizon, 3.0), "{v:?}");
    }

    #[test]
    fn csv_export_layout() {
        let (env, labels) = constant_env();
        let path = simulate(&env, &labels, 2.0, 1, StartPolicy::OriginIfInGiant).unwrap();
        let csv = path.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "t,x1,x2");
        assert_eq!(lines[1], "0.0,0,0");
        assert_eq!(lines.len(), path.num_jumps() + 3);
        assert!(lines.last().unwrap().starts_with("2.0,"));
        let back = RealPath::from_csv(&csv).unwrap();
        assert_eq!(back, path.to_real());
    }
}
