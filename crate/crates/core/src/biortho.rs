//! Monic biorthogonal families from the triangular factorization of the
//! bimoment matrix, wave functions and their Fourier–Laplace transforms.

use qd::Quad;

use crate::error::{Error, Result};
use crate::model::ValidatedModel;
use crate::quadrature::{bimoment_matrix, heine_oracle, laplace_moments, BimomentMatrix};
use crate::real::{Precision, Real};

#[derive(Debug, Clone)]
pub struct BiorthogonalFamily {
    pub model: ValidatedModel,
    /// Row n holds the monomial coefficients c_{n,0..=n} of pi_n.
    pub pi: Vec<Vec<Quad>>,
    /// Row m holds the monomial coefficients of sigma_m.
    pub sigma: Vec<Vec<Quad>>,
    pub norms: Vec<Quad>,
    /// max_{n,m} |<pi_n, sigma_m> - h_n delta_nm| / h_n against the bimoments.
    pub orth_residual: f64,
    pub quadrature_error: f64,
    pub precision: Precision,
}

/// Bimoments of size m followed by the triangular factorization.
pub fn build_family(model: &ValidatedModel, m: usize, precision: Precision) -> Result<BiorthogonalFamily> {
    match precision {
        Precision::Double => orthogonalize(&bimoment_matrix::<f64>(model, m)?),
        Precision::Extended => orthogonalize(&bimoment_matrix::<Quad>(model, m)?),
    }
}

/// Doolittle factorization I = L D U; pi_n are the rows of L^{-1}, sigma_m the
/// columns of U^{-1}, and h_n = D_n.
pub fn orthogonalize<R: Real>(b: &BimomentMatrix<R>) -> Result<BiorthogonalFamily> {
    let m = b.size();
    let scale = b.get(0, 0).abs();
    let mut l = vec![vec![R::zero(); m]; m];
    let mut u = vec![vec![R::zero(); m]; m];
    let mut d = vec![R::zero(); m];
    for k in 0..m {
        let mut dk = b.get(k, k);
        for j in 0..k {
            dk -= l[k][j] * d[j] * u[j][k];
        }
        let dkf = dk.to_f64();
        if !dkf.is_finite() || dkf <= 0.0 || dk.abs().to_f64() < 1e-300 * scale.to_f64() {
            return Err(Error::SingularMinor(k));
        }
        d[k] = dk;
        l[k][k] = R::one();
        u[k][k] = R::one();
        for i in k + 1..m {
            let mut a = b.get(i, k);
            let mut c = b.get(k, i);
            for j in 0..k {
                a -= l[i][j] * d[j] * u[j][k];
                c -= l[k][j] * d[j] * u[j][i];
            }
            l[i][k] = a / dk;
            u[k][i] = c / dk;
        }
    }
    // Inverses of the unit triangular factors.
    let mut linv = vec![vec![R::zero(); m]; m];
    let mut uinv = vec![vec![R::zero(); m]; m];
    for n in 0..m {
        linv[n][n] = R::one();
        for k in (0..n).rev() {
            let mut s = R::zero();
            for j in k + 1..=n {
                s += linv[n][j] * l[j][k];
            }
            linv[n][k] = -s;
        }
        uinv[n][n] = R::one();
        for k in (0..n).rev() {
            let mut s = R::zero();
            for j in k + 1..=n {
                s += u[k][j] * uinv[j][n];
            }
            uinv[k][n] = -s;
        }
    }
    let mut residual: f64 = 0.0;
    for n in 0..m {
        for mm in 0..m {
            let mut s = R::zero();
            for i in 0..=n {
                let mut t = R::zero();
                for j in 0..=mm {
                    t += b.get(i, j) * uinv[j][mm];
                }
                s += linv[n][i] * t;
            }
            if n == mm {
                s -= d[n];
            }
            residual = residual.max((s / d[n]).abs().to_f64());
        }
    }
    let precision = if R::eps() < 1e-20 { Precision::Extended } else { Precision::Double };
    Ok(BiorthogonalFamily {
        model: b.model.clone(),
        pi: (0..m).map(|n| (0..=n).map(|k| linv[n][k].to_quad()).collect()).collect(),
        sigma: (0..m).map(|n| (0..=n).map(|k| uinv[k][n].to_quad()).collect()).collect(),
        norms: d.iter().map(|v| v.to_quad()).collect(),
        orth_residual: residual,
        quadrature_error: b.rel_err,
        precision,
    })
}

fn horner(c: &[Quad], x: Quad) -> Quad {
    c.iter().rev().fold(Quad::ZERO, |acc, &v| acc * x + v)
}

impl BiorthogonalFamily {
    pub fn size(&self) -> usize {
        self.norms.len()
    }

    pub fn h(&self, n: usize) -> Quad {
        self.norms[n]
    }

    /// gamma_n = sqrt(h_{n+1}/h_n).
    pub fn gamma(&self, n: usize) -> Quad {
        (self.norms[n + 1] / self.norms[n]).sqrt()
    }

    pub fn pi_eval(&self, n: usize, x: Quad) -> Quad {
        horner(&self.pi[n], x)
    }

    pub fn sigma_eval(&self, n: usize, y: Quad) -> Quad {
        horner(&self.sigma[n], y)
    }

    fn c(&self) -> Quad {
        Quad::from_f64(self.model.coupling())
    }

    /// psi_n(x) = pi_n(x) e^{-(N/T)V1(x)} / sqrt(h_n).
    pub fn psi_q(&self, n: usize, x: Quad) -> Quad {
        let w = (-self.c() * self.model.v1().value(x)).exp();
        self.pi_eval(n, x) * w / self.norms[n].sqrt()
    }

    /// phi_n(y) = sigma_n(y) e^{-(N/T)V2(y)} / sqrt(h_n).
    pub fn phi_q(&self, n: usize, y: Quad) -> Quad {
        let w = (-self.c() * self.model.v2().value(y)).exp();
        self.sigma_eval(n, y) * w / self.norms[n].sqrt()
    }

    pub fn psi(&self, n: usize, x: f64) -> f64 {
        self.psi_q(n, Quad::from_f64(x)).to_f64()
    }

    pub fn phi(&self, n: usize, y: f64) -> f64 {
        self.phi_q(n, Quad::from_f64(y)).to_f64()
    }

    /// psi_0..psi_{count-1} at x.
    pub fn psi_all(&self, x: f64, count: usize) -> Vec<f64> {
        (0..count).map(|n| self.psi(n, x)).collect()
    }

    pub fn phi_all(&self, y: f64, count: usize) -> Vec<f64> {
        (0..count).map(|n| self.phi(n, y)).collect()
    }

    /// psi~_n(y) = int psi_n(x) e^{(N/T)xy} dx for n < count.
    pub fn psi_tilde_all(&self, y: f64, count: usize) -> Result<Vec<f64>> {
        let mom = laplace_moments::<Quad>(self.model.v1(), self.model.coupling(), y, count)?;
        Ok((0..count)
            .map(|n| {
                let s = self.pi[n].iter().zip(&mom.values).fold(Quad::ZERO, |a, (&c, &v)| a + c * v);
                (s / self.norms[n].sqrt()).to_f64()
            })
            .collect())
    }

    /// phi~_n(x) = int phi_n(y) e^{(N/T)xy} dy for n < count.
    pub fn phi_tilde_all(&self, x: f64, count: usize) -> Result<Vec<f64>> {
        let mom = laplace_moments::<Quad>(self.model.v2(), self.model.coupling(), x, count)?;
        Ok((0..count)
            .map(|n| {
                let s = self.sigma[n].iter().zip(&mom.values).fold(Quad::ZERO, |a, (&c, &v)| a + c * v);
                (s / self.norms[n].sqrt()).to_f64()
            })
            .collect())
    }

    /// phi~_n(x) and its x-derivative for n < count.
    pub fn phi_tilde_with_deriv(&self, x: f64, count: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let mom = laplace_moments::<Quad>(self.model.v2(), self.model.coupling(), x, count + 1)?;
        let c = self.c();
        let mut v = Vec::with_capacity(count);
        let mut d = Vec::with_capacity(count);
        for n in 0..count {
            let norm = self.norms[n].sqrt();
            let (mut s, mut t) = (Quad::ZERO, Quad::ZERO);
            for (j, &cj) in self.sigma[n].iter().enumerate() {
                s += cj * mom.values[j];
                t += cj * mom.values[j + 1];
            }
            v.push((s / norm).to_f64());
            d.push((c * t / norm).to_f64());
        }
        Ok((v, d))
    }

    /// psi_n'(x) in double-double.
    pub fn psi_deriv_q(&self, n: usize, x: Quad) -> Quad {
        let w = (-self.c() * self.model.v1().value(x)).exp();
        let dp: Vec<Quad> = self.pi[n].iter().enumerate().skip(1).map(|(k, &c)| c * Quad::from_f64(k as f64)).collect();
        let val = horner(&dp, x) - self.c() * self.model.v1().deriv(x) * self.pi_eval(n, x);
        val * w / self.norms[n].sqrt()
    }

    /// Rows "n,h_n,c_0,...,c_n".
    pub fn to_csv(&self) -> String {
        let mut s = String::from("n,h_n,coefficients\n");
        for (n, row) in self.pi.iter().enumerate() {
            s.push_str(&format!("{n},{:.17e}", self.norms[n].to_f64()));
            for c in row {
                s.push_str(&format!(",{:.17e}", c.to_f64()));
            }
            s.push('\n');
        }
        s
    }
}

/// psi~_n on a grid of y values.
pub fn fourier_transform_wavefunction(family: &BiorthogonalFamily, n: usize, grid: &[f64]) -> Result<Vec<f64>> {
    grid.iter().map(|&y| family.psi_tilde_all(y, n + 1).map(|v| v[n])).collect()
}

/// Max deviation between pi_n from the factorization and <det(x - M1)> from
/// eigenvalue quadrature, relative to sum_k |c_k| |x|^k.
pub fn heine_check(family: &BiorthogonalFamily, n: usize, points: &[f64]) -> Result<f64> {
    let oracle = heine_oracle(&family.model, n, points)?;
    let mut dev: f64 = 0.0;
    for (&x, &o) in points.iter().zip(&oracle) {
        let v = family.pi_eval(n, Quad::from_f64(x)).to_f64();
        let scale: f64 = family.pi[n].iter().enumerate().map(|(k, c)| c.to_f64().abs() * x.abs().powi(k as i32)).sum();
        dev = dev.max((v - o).abs() / scale.max(1.0));
    }
    Ok(dev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_model, ModelSpec};
    use std::f64::consts::PI;

    fn fam(spec: ModelSpec, m: usize) -> BiorthogonalFamily {
        build_family(&validate_model(&spec).unwrap(), m, Precision::Extended).unwrap()
    }

    #[test]
    fn g0_low_order_values() {
        let f = fam(ModelSpec::gaussian(1), 12);
        assert!((f.h(0).to_f64() - 2.0 * PI / 3f64.sqrt()).abs() < 1e-14);
        assert_eq!(f.pi[0].len(), 1);
        assert!(f.pi[1][0].to_f64().abs() < 1e-28);
        assert!(((f.h(1) / f.h(0)).to_f64() - 1.0 / 3.0).abs() < 1e-15);
        assert!(f.orth_residual < 1e-20);
    }

    #[test]
    fn g0_gamma_closed_form() {
        for n_size in [1usize, 4, 8] {
            let f = fam(ModelSpec::gaussian(n_size), 14);
            for n in 0..13 {
                let g2 = f.gamma(n).to_f64().powi(2);
                let expect = (n + 1) as f64 / (3.0 * n_size as f64);
                assert!((g2 - expect).abs() < 1e-12 * expect, "N={n_size} n={n}: {g2}");
            }
        }
    }

    #[test]
    fn parity_and_monic() {
        let f = fam(ModelSpec::quartic_v1(0.1, 8), 12);
        for n in 0..12 {
            assert_eq!(f.pi[n][n].to_f64(), 1.0);
            assert_eq!(f.sigma[n][n].to_f64(), 1.0);
            for k in 0..=n {
                if (n + k) % 2 == 1 {
                    assert!(f.pi[n][k].to_f64().abs() < 1e-10);
                    assert!(f.sigma[n][k].to_f64().abs() < 1e-10);
                }
            }
        }
        assert!(f.orth_residual < 1e-8);
    }

    #[test]
    fn norms_are_ratios_of_minors() {
        let m = validate_model(&ModelSpec::quartic_v1(0.05, 3)).unwrap();
        let b = bimoment_matrix::<f64>(&m, 5).unwrap();
        let f = orthogonalize(&b).unwrap();
        let mut prod = 1.0;
        for n in 1..=5 {
            let minor = nalgebra::DMatrix::from_fn(n, n, |i, j| b.get(i, j)).determinant();
            prod *= f.h(n - 1).to_f64();
            assert!(((prod - minor) / minor).abs() < 1e-9, "n={n}");
        }
        assert_eq!(f.precision, Precision::Double);
    }

    #[test]
    fn transforms_closed_form() {
        let f = fam(ModelSpec::gaussian(1), 4);
        let h0 = f.h(0).to_f64();
        let t0 = f.psi_tilde_all(0.0, 2).unwrap();
        assert!((t0[0] - PI.sqrt() / h0.sqrt()).abs() < 1e-13);
        assert!(t0[1].abs() < 1e-14);
        // int e^{-x^2 + xy} dx = sqrt(pi) e^{y^2/4}
        let t1 = fourier_transform_wavefunction(&f, 0, &[1.0]).unwrap();
        assert!((t1[0] - PI.sqrt() * 0.25f64.exp() / h0.sqrt()).abs() < 1e-13);
    }

    #[test]
    fn heine_matches_small_n() {
        let points = [-1.5, -0.4, 0.3, 1.0, 2.0];
        let g = fam(ModelSpec::gaussian(2), 4);
        assert_eq!(heine_check(&g, 0, &points).unwrap(), 0.0);
        assert!(heine_check(&g, 1, &points).unwrap() < 1e-8);
        let q = fam(ModelSpec::quartic_v1(0.1, 2), 4);
        assert!(heine_check(&q, 2, &points).unwrap() < 1e-6);
        assert_eq!(heine_check(&q, 3, &points).unwrap_err().code(), "OracleTooLarge");
    }

    #[test]
    fn double_and_extended_agree_at_low_order() {
        let m = validate_model(&ModelSpec::gaussian(4)).unwrap();
        let a = build_family(&m, 8, Precision::Double).unwrap();
        let b = build_family(&m, 8, Precision::Extended).unwrap();
        for n in 0..8 {
            let r = ((a.h(n) - b.h(n)) / b.h(n)).to_f64().abs();
            assert!(r < 1e-9, "n={n} {r}");
        }
    }
}
