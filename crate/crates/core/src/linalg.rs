//! Fixed-size vectors and matrices for d ≤ 3.
//!
//! Every lattice point, displacement and level-2 increment in the crate is
//! stored in a `MAX_DIM`-sized array; entries beyond the working dimension
//! stay zero. This keeps the hot loops allocation-free.

pub const MAX_DIM: usize = 3;

pub type Point = [i64; MAX_DIM];
pub type Vector = [f64; MAX_DIM];
pub type Matrix = [[f64; MAX_DIM]; MAX_DIM];

pub const ZERO_VEC: Vector = [0.0; MAX_DIM];
pub const ZERO_MAT: Matrix = [[0.0; MAX_DIM]; MAX_DIM];

pub fn to_vector(p: &Point) -> Vector {
    [p[0] as f64, p[1] as f64, p[2] as f64]
}

pub fn vsub(a: &Vector, b: &Vector) -> Vector {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn vadd(a: &Vector, b: &Vector) -> Vector {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn vscale(a: &Vector, s: f64) -> Vector {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn dot(a: &Vector, b: &Vector) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn norm(a: &Vector) -> f64 {
    dot(a, a).sqrt()
}

pub fn identity(d: usize) -> Matrix {
    let mut m = ZERO_MAT;
    for (i, row) in m.iter_mut().enumerate().take(d) {
        row[i] = 1.0;
    }
    m
}

pub fn outer(a: &Vector, b: &Vector) -> Matrix {
    let mut m = ZERO_MAT;
    for i in 0..MAX_DIM {
        for j in 0..MAX_DIM {
            m[i][j] = a[i] * b[j];
        }
    }
    m
}

pub fn madd(a: &Matrix, b: &Matrix) -> Matrix {
    let mut m = *a;
    for i in 0..MAX_DIM {
        for j in 0..MAX_DIM {
            m[i][j] += b[i][j];
        }
    }
    m
}

pub fn msub(a: &Matrix, b: &Matrix) -> Matrix {
    let mut m = *a;
    for i in 0..MAX_DIM {
        for j in 0..MAX_DIM {
            m[i][j] -= b[i][j];
        }
    }
    m
}

pub fn mscale(a: &Matrix, s: f64) -> Matrix {
    let mut m = *a;
    for row in m.iter_mut() {
        for v in row.iter_mut() {
            *v *= s;
        }
    }
    m
}

/// `acc += w * (a ⊗ b)`
pub fn add_outer(acc: &mut Matrix, w: f64, a: &Vector, b: &Vector) {
    for i in 0..MAX_DIM {
        for j in 0..MAX_DIM {
            acc[i][j] += w * a[i] * b[j];
        }
    }
}

pub fn transpose(a: &Matrix) -> Matrix {
    let mut m = ZERO_MAT;
    for i in 0..MAX_DIM {
        for j in 0..MAX_DIM {
            m[i][j] = a[j][i];
        }
    }
    m
}

pub fn frobenius_sq(a: &Matrix) -> f64 {
    a.iter().flatten().map(|v| v * v).sum()
}

pub fn frobenius(a: &Matrix) -> f64 {
    frobenius_sq(a).sqrt()
}

pub fn max_abs(a: &Matrix) -> f64 {
    a.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
}

/// Largest singular value of the leading 2×2 block.
pub fn spectral_norm_2x2(a: &Matrix) -> f64 {
    let (p, q, r, s) = (a[0][0], a[0][1], a[1][0], a[1][1]);
    // eigenvalues of AᵀA
    let t = p * p + q * q + r * r + s * s;
    let det = p * s - q * r;
    let disc = (t * t - 4.0 * det * det).max(0.0).sqrt();
    ((t + disc) / 2.0).sqrt()
}

/// Eigenvalues of the leading `d × d` block of a symmetric matrix, ascending.
///
/// Closed forms: quadratic formula for d = 2, trigonometric solution of the
/// characteristic cubic for d = 3.
pub fn sym_eigenvalues(a: &Matrix, d: usize) -> Vec<f64> {
    match d {
        1 => vec![a[0][0]],
        2 => {
            let tr = a[0][0] + a[1][1];
            let diff = a[0][0] - a[1][1];
            let off = 0.5 * (a[0][1] + a[1][0]);
            let disc = (diff * diff / 4.0 + off * off).sqrt();
            vec![tr / 2.0 - disc, tr / 2.0 + disc]
        }
        3 => {
            let s = |i: usize, j: usize| 0.5 * (a[i][j] + a[j][i]);
            let p1 = s(0, 1).powi(2) + s(0, 2).powi(2) + s(1, 2).powi(2);
            let q = (s(0, 0) + s(1, 1) + s(2, 2)) / 3.0;
            if p1 == 0.0 {
                let mut ev = vec![s(0, 0), s(1, 1), s(2, 2)];
                ev.sort_by(|x, y| x.total_cmp(y));
                return ev;
            }
            let p2 = (s(0, 0) - q).powi(2) + (s(1, 1) - q).powi(2) + (s(2, 2) - q).powi(2)
                + 2.0 * p1;
            let p = (p2 / 6.0).sqrt();
            let mut b = ZERO_MAT;
            for i in 0..3 {
                for j in 0..3 {
                    b[i][j] = (s(i, j) - if i == j { q } else { 0.0 }) / p;
                }
            }
            let det_b = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1])
                - b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0])
                + b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
            let r = (det_b / 2.0).clamp(-1.0, 1.0);
            let phi = r.acos() / 3.0;
            let e1 = q + 2.0 * p * phi.cos();
            let e3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
            let e2 = 3.0 * q - e1 - e3;
            let mut ev = vec![e1, e2, e3];
            ev.sort_by(|x, y| x.total_cmp(y));
            ev
        }
        _ => panic!("dimension {d} not supported"),
    }
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}
