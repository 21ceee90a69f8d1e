//! Christoffel–Darboux matrices, the four kernels and determinantal
//! correlation functions.

use qd::Quad;

use crate::band::BandOperator;
use crate::biortho::BiorthogonalFamily;
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::real::Real;

/// Nonzero block of [Op, Pi_{n-1}], rows n-1..n+d-1 and columns n-d..n.
#[derive(Debug, Clone)]
pub struct CdMatrix {
    pub n: usize,
    pub d: usize,
    pub block: Mat<Quad>,
    /// Largest entry of the full commutator outside the block.
    pub outside: f64,
}

impl CdMatrix {
    pub fn row0(&self) -> usize {
        self.n - 1
    }

    pub fn col0(&self) -> usize {
        self.n - self.d
    }

    /// Entry at global indices (i, j); zero outside the block.
    pub fn at(&self, i: usize, j: usize) -> Quad {
        let (r0, c0) = (self.row0(), self.col0());
        if i >= r0 && i <= r0 + self.d && j >= c0 && j <= c0 + self.d {
            self.block[(i - r0, j - c0)]
        } else {
            Quad::ZERO
        }
    }
}

/// [Op, Pi_{n-1}] with Pi_{n-1} the projector on indices < n.
pub fn commutator_with_projector(op: &BandOperator, n: usize) -> Result<CdMatrix> {
    let d = op.lower;
    let s = op.size();
    if n < d.max(1) || n + d >= s {
        return Err(Error::TruncationTooSmall(format!("window n={n} with bandwidth {d} in size {s}")));
    }
    let mut block = Mat::zeros(d + 1, d + 1);
    let mut outside: f64 = 0.0;
    for i in 0..s {
        for j in 0..s {
            let v = match ((j < n) as i32) - ((i < n) as i32) {
                0 => continue,
                sign => op.entries[(i, j)] * Quad::from_f64(sign as f64),
            };
            if i + 1 >= n && i < n + d && j + d >= n && j <= n {
                block[(i + 1 - n, j + d - n)] = v;
            } else {
                outside = outside.max(v.to_f64().abs());
            }
        }
    }
    Ok(CdMatrix { n, d, block, outside })
}

/// (A_n, B_n) for d1 + d2 < n < M - d1 - d2.
pub fn cd_matrices(q: &BandOperator, p: &BandOperator, n: usize) -> Result<(CdMatrix, CdMatrix)> {
    let dd = q.lower + p.lower;
    if n <= dd || n + dd >= q.size() {
        return Err(Error::TruncationTooSmall(format!(
            "n={n} outside ({dd}, {}) for operators of size {}",
            q.size().saturating_sub(dd),
            q.size()
        )));
    }
    Ok((commutator_with_projector(q, n)?, commutator_with_projector(p, n)?))
}

/// max over the grid of |(x'-x) K11(x,x') - sum_ij A_ij psi_j(x) phi~_i(x')|
/// relative to the largest absolute term.
pub fn cd_identity_residual(family: &BiorthogonalFamily, q: &BandOperator, n: usize, xs: &[f64], xps: &[f64]) -> Result<f64> {
    let a = commutator_with_projector(q, n)?;
    let count = n + a.d + 1;
    let psis: Vec<Vec<f64>> = xs.iter().map(|&x| family.psi_all(x, count)).collect();
    let phts: Vec<Vec<f64>> = xps.iter().map(|&x| family.phi_tilde_all(x, count)).collect::<Result<_>>()?;
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for (ix, &x) in xs.iter().enumerate() {
        for (jx, &xp) in xps.iter().enumerate() {
            let (ps, pt) = (&psis[ix], &phts[jx]);
            let mut lhs = 0.0;
            let mut lhs_abs = 0.0;
            for j in 0..n {
                lhs += ps[j] * pt[j];
                lhs_abs += (ps[j] * pt[j]).abs();
            }
            lhs *= xp - x;
            lhs_abs *= (xp - x).abs();
            let mut rhs = 0.0;
            let mut rhs_abs = 0.0;
            for i in a.row0()..=a.row0() + a.d {
                for j in a.col0()..=a.col0() + a.d {
                    let t = a.at(i, j).to_f64() * ps[j] * pt[i];
                    rhs += t;
                    rhs_abs += t.abs();
                }
            }
            worst = worst.max((lhs - rhs).abs());
            scale = scale.max(lhs_abs).max(rhs_abs);
        }
    }
    Ok(worst / scale.max(f64::MIN_POSITIVE))
}

/// Kernels built from the first n wave functions.
pub struct Kernels<'a> {
    pub family: &'a BiorthogonalFamily,
    pub n: usize,
}

impl<'a> Kernels<'a> {
    pub fn new(family: &'a BiorthogonalFamily, n: usize) -> Result<Self> {
        if n == 0 || n > family.size() {
            return Err(Error::TruncationTooSmall(format!("{n} states from a family of size {}", family.size())));
        }
        Ok(Kernels { family, n })
    }

    fn c(&self) -> f64 {
        self.family.model.coupling()
    }

    /// K12(x, y) = sum_j psi_j(x) phi_j(y).
    pub fn k12(&self, x: f64, y: f64) -> f64 {
        let a = self.family.psi_all(x, self.n);
        let b = self.family.phi_all(y, self.n);
        dot(&a, &b)
    }

    /// K11(x, x') = sum_j psi_j(x) phi~_j(x').
    pub fn k11(&self, x: f64, xp: f64) -> Result<f64> {
        let a = self.family.psi_all(x, self.n);
        let b = self.family.phi_tilde_all(xp, self.n)?;
        Ok(dot(&a, &b))
    }

    /// K22(y', y) = sum_j psi~_j(y') phi_j(y).
    pub fn k22(&self, yp: f64, y: f64) -> Result<f64> {
        let a = self.family.psi_tilde_all(yp, self.n)?;
        let b = self.family.phi_all(y, self.n);
        Ok(dot(&a, &b))
    }

    /// K21(y, x) = sum_j psi~_j(y) phi~_j(x) - e^{(N/T) x y}.
    pub fn k21(&self, y: f64, x: f64) -> Result<f64> {
        let a = self.family.psi_tilde_all(y, self.n)?;
        let b = self.family.phi_tilde_all(x, self.n)?;
        Ok(dot(&a, &b) - (self.c() * x * y).exp())
    }

    /// Block determinant of the kernels at (x_1..x_r; y_1..y_s).
    pub fn block_determinant(&self, xs: &[f64], ys: &[f64]) -> Result<f64> {
        let n = self.n;
        let psi_x: Vec<Vec<f64>> = xs.iter().map(|&x| self.family.psi_all(x, n)).collect();
        let pht_x: Vec<Vec<f64>> = xs.iter().map(|&x| self.family.phi_tilde_all(x, n)).collect::<Result<_>>()?;
        let pst_y: Vec<Vec<f64>> = ys.iter().map(|&y| self.family.psi_tilde_all(y, n)).collect::<Result<_>>()?;
        let phi_y: Vec<Vec<f64>> = ys.iter().map(|&y| self.family.phi_all(y, n)).collect();
        let (r, s) = (xs.len(), ys.len());
        let m = nalgebra::DMatrix::from_fn(r + s, r + s, |i, j| match (i < r, j < r) {
            (true, true) => dot(&psi_x[i], &pht_x[j]),
            (true, false) => dot(&psi_x[i], &phi_y[j - r]),
            (false, true) => dot(&pst_y[i - r], &pht_x[j]) - (self.c() * xs[j] * ys[i - r]).exp(),
            (false, false) => dot(&pst_y[i - r], &phi_y[j - r]),
        });
        Ok(m.determinant())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Marginal density rho_{r;s} of (x_1..x_r; y_1..y_s), normalized to total
/// mass 1: the block determinant times (N-r)!(N-s)!/(N!)^2.
pub fn correlation_density(family: &BiorthogonalFamily, r: usize, s: usize, points: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = family.model.n();
    if r > 2 || s > 2 || r + s == 0 {
        return Err(Error::UnsupportedOrder(format!("(r,s) = ({r},{s})")));
    }
    if r > n || s > n {
        return Err(Error::UnsupportedOrder(format!("(r,s) = ({r},{s}) exceeds N = {n}")));
    }
    let k = Kernels::new(family, n)?;
    let norm = factorial(n - r) * factorial(n - s) / (factorial(n) * factorial(n));
    points
        .iter()
        .map(|p| {
            if p.len() != r + s {
                return Err(Error::ConfigInvalid(format!("point has {} coordinates, expected {}", p.len(), r + s)));
            }
            Ok(k.block_determinant(&p[..r], &p[r..])? * norm)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::band::build_q_p;
    use crate::biortho::build_family;
    use crate::model::{validate_model, ModelSpec};
    use crate::quadrature::{direct_density_oracle, rule_on};
    use crate::real::Precision;

    fn fam(spec: ModelSpec, m: usize) -> BiorthogonalFamily {
        build_family(&validate_model(&spec).unwrap(), m, Precision::Extended).unwrap()
    }

    #[test]
    fn g0_cd_block() {
        let f = fam(ModelSpec::gaussian(4), 14);
        let (q, p) = build_q_p(&f).unwrap();
        let (a, b) = cd_matrices(&q, &p, 3).unwrap();
        let g2 = f.gamma(2).to_f64();
        assert!((a.at(2, 3).to_f64() + g2).abs() < 1e-14);
        assert!((a.at(3, 2).to_f64() - 2.0 * g2).abs() < 1e-13);
        assert!(a.at(2, 2).to_f64().abs() < 1e-20 && a.at(3, 3).to_f64().abs() < 1e-20);
        assert!(a.outside < 1e-10 && b.outside < 1e-10);
        assert_eq!(cd_matrices(&q, &p, 2).unwrap_err().code(), "TruncationTooSmall");
    }

    #[test]
    fn quartic_cd_block_shape() {
        let f = fam(ModelSpec::quartic_v2(0.1, 4), 20);
        let (q, p) = build_q_p(&f).unwrap();
        let (a, b) = cd_matrices(&q, &p, 6).unwrap();
        assert_eq!((a.d, b.d), (3, 1));
        assert!(a.outside < 1e-10 && b.outside < 1e-10);
        assert!((a.at(5, 6).to_f64() + f.gamma(5).to_f64()).abs() < 1e-12);
    }

    #[test]
    fn cd_identity_holds() {
        let f = fam(ModelSpec::gaussian(4), 12);
        let (q, _) = build_q_p(&f).unwrap();
        let grid: Vec<f64> = (0..20).map(|i| -2.0 + 4.0 * i as f64 / 19.0).collect();
        assert!(cd_identity_residual(&f, &q, 4, &grid, &grid).unwrap() < 1e-10);
        assert!(cd_identity_residual(&f, &q, 1, &grid, &grid).unwrap() < 1e-10);
        let fq = fam(ModelSpec::quartic_v1(0.1, 3), 14);
        let (qq, _) = build_q_p(&fq).unwrap();
        assert!(cd_identity_residual(&fq, &qq, 5, &grid, &grid).unwrap() < 1e-10);
    }

    #[test]
    fn kernel_density_n1_closed_form() {
        let f = fam(ModelSpec::gaussian(1), 4);
        let r = correlation_density(&f, 1, 0, &[vec![0.0]]).unwrap();
        assert!((r[0] - (3.0 / (4.0 * std::f64::consts::PI)).sqrt()).abs() < 1e-12);
        let j = correlation_density(&f, 1, 1, &[vec![0.3, -0.2]]).unwrap();
        let expect = 3f64.sqrt() / (2.0 * std::f64::consts::PI) * (-(0.09 + 0.04 + 0.06f64)).exp();
        assert!((j[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn kernel_density_matches_brute_force_n2() {
        for spec in [ModelSpec::gaussian(2), ModelSpec::quartic_v1(0.1, 2)] {
            let m = validate_model(&spec).unwrap();
            let f = build_family(&m, 4, Precision::Extended).unwrap();
            for (r, s, pts) in [
                (1usize, 0usize, vec![vec![0.1], vec![-0.8], vec![1.4]]),
                (0, 1, vec![vec![0.5], vec![-1.1]]),
                (1, 1, vec![vec![0.2, 0.7], vec![-0.9, 0.4]]),
            ] {
                let k = correlation_density(&f, r, s, &pts).unwrap();
                let o = direct_density_oracle(&m, r, s, &pts).unwrap();
                for (a, b) in k.iter().zip(&o) {
                    assert!((a - b).abs() < 1e-6, "({r},{s}) {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn exclusion_and_normalization() {
        let f = fam(ModelSpec::gaussian(3), 6);
        let r2 = correlation_density(&f, 2, 0, &[vec![0.4, 0.4]]).unwrap();
        assert!(r2[0].abs() < 1e-12);
        let (x, w) = rule_on::<f64>(-4.0, 4.0, 120);
        let pts: Vec<Vec<f64>> = x.iter().map(|&v| vec![v]).collect();
        let rho = correlation_density(&f, 1, 0, &pts).unwrap();
        let mass: f64 = rho.iter().zip(&w).map(|(a, b)| a * b).sum();
        assert!((mass - 1.0).abs() < 1e-10);
        assert_eq!(correlation_density(&f, 3, 0, &[vec![0.0; 3]]).unwrap_err().code(), "UnsupportedOrder");
    }

    #[test]
    fn reproducing_property() {
        let f = fam(ModelSpec::gaussian(2), 4);
        let k = Kernels::new(&f, 2).unwrap();
        let (u, w) = rule_on::<f64>(-7.0, 7.0, 160);
        for (x, xp) in [(0.3, -0.5), (1.0, 0.2)] {
            let mut acc = 0.0;
            for (&ui, &wi) in u.iter().zip(&w) {
                acc += wi * k.k11(x, ui).unwrap() * k.k11(ui, xp).unwrap();
            }
            let direct = k.k11(x, xp).unwrap();
            assert!((acc - direct).abs() < 1e-8 * direct.abs().max(1.0), "{acc} vs {direct}");
        }
    }

    #[test]
    fn swap_symmetry_of_k12() {
        let spec = ModelSpec::quartic_v1(0.1, 3);
        let m = validate_model(&spec).unwrap();
        let f = build_family(&m, 5, Precision::Extended).unwrap();
        let g = build_family(&m.swapped(), 5, Precision::Extended).unwrap();
        let (kf, kg) = (Kernels::new(&f, 3).unwrap(), Kernels::new(&g, 3).unwrap());
        for (x, y) in [(0.2, -0.3), (1.1, 0.8)] {
            assert!((kf.k12(x, y) - kg.k12(y, x)).abs() < 1e-12);
        }
    }
}
