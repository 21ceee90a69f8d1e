//! Multiplication operators Q (by x on psi_n) and P (by y on phi_n), the
//! string equations and the canonical commutator.

use qd::Quad;

use crate::biortho::BiorthogonalFamily;
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::model::{Potential, ValidatedModel};
use crate::real::Real;

#[derive(Debug, Clone)]
pub struct BandOperator {
    pub name: &'static str,
    pub entries: Mat<Quad>,
    /// Entries (n, m) may be nonzero only for n - lower <= m <= n + 1.
    pub lower: usize,
}

impl BandOperator {
    pub fn size(&self) -> usize {
        self.entries.rows()
    }

    pub fn get(&self, n: usize, m: usize) -> f64 {
        self.entries[(n, m)].to_f64()
    }

    /// Max over rows of out-of-band mass / in-band mass.
    pub fn leakage(&self) -> f64 {
        let s = self.size();
        let mut worst: f64 = 0.0;
        for n in 0..s {
            let (mut inside, mut outside) = (0.0, 0.0);
            for m in 0..s {
                let v = self.get(n, m).abs();
                if m + self.lower >= n && m <= n + 1 {
                    inside += v;
                } else {
                    outside += v;
                }
            }
            worst = worst.max(outside / inside.max(f64::MIN_POSITIVE));
        }
        worst
    }

    /// Triplets "n,m,value" inside the declared band.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("n,m,value\n");
        for n in 0..self.size() {
            let lo = n.saturating_sub(self.lower);
            for m in lo..(n + 2).min(self.size()) {
                s.push_str(&format!("{n},{m},{:.17e}\n", self.get(n, m)));
            }
        }
        s
    }
}

/// Coefficients r_m with x p(x) = sum_m r_m basis_m(x) for a monic basis.
fn reexpand(coeffs: &[Quad], basis: &[Vec<Quad>]) -> Vec<Quad> {
    let mut work: Vec<Quad> = std::iter::once(Quad::ZERO).chain(coeffs.iter().copied()).collect();
    let deg = work.len() - 1;
    let mut out = vec![Quad::ZERO; deg + 1];
    for k in (0..=deg).rev() {
        let r = work[k];
        out[k] = r;
        for (j, &b) in basis[k].iter().enumerate() {
            work[j] -= r * b;
        }
    }
    out
}

fn multiplication_operator(
    name: &'static str,
    basis: &[Vec<Quad>],
    norms: &[Quad],
    lower: usize,
) -> BandOperator {
    let size = basis.len() - 1;
    let mut entries = Mat::zeros(size, size);
    for n in 0..size {
        let r = reexpand(&basis[n], basis);
        for m in 0..=(n + 1).min(size - 1) {
            entries[(n, m)] = r[m] * (norms[m] / norms[n]).sqrt();
        }
    }
    BandOperator { name, entries, lower }
}

/// Q and P of size M-1 from a family of size M, by exact re-expansion of
/// x pi_n and y sigma_n on the monic bases.
pub fn build_q_p(family: &BiorthogonalFamily) -> Result<(BandOperator, BandOperator)> {
    let m = family.model.d1 + family.model.d2 + 4;
    if family.size() < m + 1 {
        return Err(Error::TruncationTooSmall(format!(
            "family of size {} needs at least {}",
            family.size(),
            m + 1
        )));
    }
    let q = multiplication_operator("Q", &family.pi, &family.norms, family.model.d2);
    let p = multiplication_operator("P", &family.sigma, &family.norms, family.model.d1);
    Ok((q, p))
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct WindowResidual {
    pub max: f64,
    /// Rows [first, last] on which the residual was measured.
    pub first: usize,
    pub last: usize,
}

/// V'(A) by Horner in double-double.
pub fn potential_prime_of(a: &Mat<Quad>, v: &Potential) -> Mat<Quad> {
    let c: Vec<Quad> = v.deriv_monomials().iter().map(|&g| Quad::from_f64(g)).collect();
    a.poly(&c)
}

/// Checks P^t = V1'(Q) on the upper part and the subdiagonal correction
/// -T n/(N gamma_{n-1}), plus the same with the roles of Q and P exchanged.
pub fn string_equation_residual(q: &BandOperator, p: &BandOperator, model: &ValidatedModel) -> Result<WindowResidual> {
    let a = one_sided_string(&p.entries, &q.entries, model.v1(), model)?;
    let b = one_sided_string(&q.entries, &p.entries, model.v2(), model)?;
    Ok(WindowResidual { max: a.max.max(b.max), first: a.first, last: a.last.min(b.last) })
}

fn one_sided_string(lhs: &Mat<Quad>, arg: &Mat<Quad>, v: &Potential, model: &ValidatedModel) -> Result<WindowResidual> {
    let s = arg.rows();
    let d = v.deg_prime();
    if s < d + 3 {
        return Err(Error::TruncationTooSmall(format!("operator size {s}")));
    }
    let vq = potential_prime_of(arg, v);
    let lt = lhs.transpose();
    let last = s - d - 1;
    let tn = Quad::from_f64(model.t() / model.n() as f64);
    let scale = vq.submatrix(0, 0, last + 1, last + 1).max_abs().max(1.0);
    let mut worst: f64 = 0.0;
    for n in 0..=last {
        for m in n.saturating_sub(1)..=(n + d).min(s - 1) {
            let mut expect = vq[(n, m)];
            if m + 1 == n {
                // gamma_{n-1} is the common superdiagonal entry.
                let g = arg[(n - 1, n)];
                expect -= tn * Quad::from_f64(n as f64) / g;
            }
            worst = worst.max((lt[(n, m)] - expect).to_f64().abs() / scale);
        }
    }
    Ok(WindowResidual { max: worst, first: 0, last })
}

/// [P^t, Q] - (T/N) Id on rows and columns [d1+d2, M-d1-d2).
pub fn heisenberg_residual(q: &BandOperator, p: &BandOperator, model: &ValidatedModel) -> Result<WindowResidual> {
    let s = q.size();
    let d = model.d1 + model.d2;
    if s <= 2 * d + 1 {
        return Err(Error::TruncationTooSmall(format!("operator size {s}")));
    }
    let pt = p.entries.transpose();
    let comm = pt.mul(&q.entries).sub(&q.entries.mul(&pt));
    let tn = Quad::from_f64(model.t() / model.n() as f64);
    let mut worst: f64 = 0.0;
    let last = s - d - 1;
    for i in d..=last {
        for j in d..=last {
            let target = if i == j { tn } else { Quad::ZERO };
            worst = worst.max((comm[(i, j)] - target).to_f64().abs());
        }
    }
    Ok(WindowResidual { max: worst / tn.to_f64(), first: d, last })
}

/// Max |Q_{n,n+1} - gamma_n| and |P_{n,n+1} - gamma_n|.
pub fn superdiagonal_deviation(q: &BandOperator, p: &BandOperator, family: &BiorthogonalFamily) -> f64 {
    let mut worst: f64 = 0.0;
    for n in 0..q.size() - 1 {
        let g = family.gamma(n).to_f64();
        worst = worst.max((q.get(n, n + 1) - g).abs()).max((p.get(n, n + 1) - g).abs());
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::biortho::build_family;
    use crate::model::{validate_model, ModelSpec};
    use crate::real::Precision;

    fn ops(spec: ModelSpec, m: usize) -> (BiorthogonalFamily, BandOperator, BandOperator) {
        let f = build_family(&validate_model(&spec).unwrap(), m, Precision::Extended).unwrap();
        let (q, p) = build_q_p(&f).unwrap();
        (f, q, p)
    }

    #[test]
    fn g0_is_tridiagonal_hermite() {
        let (f, q, p) = ops(ModelSpec::gaussian(1), 12);
        assert!((q.get(0, 1) - (1.0f64 / 3.0).sqrt()).abs() < 1e-14);
        for n in 0..q.size() {
            assert!(q.get(n, n).abs() < 1e-25);
        }
        assert!(q.leakage() < 1e-20 && p.leakage() < 1e-20);
        // alpha_1(n) = Q_{n,n-1} = 2 gamma_{n-1}
        for n in 1..q.size() {
            let g = f.gamma(n - 1).to_f64();
            assert!((q.get(n, n - 1) - 2.0 * g).abs() < 1e-13);
            assert!((p.get(n, n - 1) - q.get(n, n - 1)).abs() < 1e-13);
        }
        assert!(superdiagonal_deviation(&q, &p, &f) < 1e-14);
    }

    #[test]
    fn g0_string_subdiagonal() {
        // (P^t)_{n,n-1} = 4 gamma_{n-1} - n/(N gamma_{n-1}) = 2 gamma_{n-1} at gamma^2 = n/(3N).
        let (f, q, p) = ops(ModelSpec::gaussian(1), 12);
        let m = f.model.clone();
        for n in 1..q.size() {
            let g = f.gamma(n - 1).to_f64();
            assert!((p.get(n - 1, n) - (4.0 * g - n as f64 / g)).abs() < 1e-12);
        }
        assert!(string_equation_residual(&q, &p, &m).unwrap().max < 1e-20);
    }

    #[test]
    fn quartic_bands_and_identities() {
        let (f, q, p) = ops(ModelSpec::quartic_v1(0.1, 8), 25);
        assert_eq!((q.lower, p.lower), (1, 3));
        assert!(q.leakage() < 1e-8, "{}", q.leakage());
        assert!(p.leakage() < 1e-8, "{}", p.leakage());
        let s = string_equation_residual(&q, &p, &f.model).unwrap();
        assert!(s.max < 1e-8, "{s:?}");
        let h = heisenberg_residual(&q, &p, &f.model).unwrap();
        assert!(h.max < 1e-8, "{h:?}");
        assert!(superdiagonal_deviation(&q, &p, &f) < 1e-8);
    }

    #[test]
    fn heisenberg_g0() {
        let (f, q, p) = ops(ModelSpec::gaussian(4), 25);
        assert!(heisenberg_residual(&q, &p, &f.model).unwrap().max < 1e-8);
    }

    #[test]
    fn too_small_family_rejected() {
        let f = build_family(&validate_model(&ModelSpec::gaussian(1)).unwrap(), 5, Precision::Extended).unwrap();
        assert_eq!(build_q_p(&f).unwrap_err().code(), "TruncationTooSmall");
    }
}
