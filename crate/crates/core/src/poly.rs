//! Univariate and bivariate polynomial helpers: interpolation, evaluation,
//! complex roots.

use nalgebra::{Complex, DMatrix};
use qd::Quad;

use crate::error::{Error, Result};
use crate::real::Real;

pub type C64 = Complex<f64>;

/// Horner evaluation, coefficient k multiplies x^k.
pub fn eval<R: Real>(c: &[R], x: R) -> R {
    c.iter().rev().fold(R::zero(), |acc, &v| acc * x + v)
}

pub fn eval_c(c: &[f64], z: C64) -> C64 {
    c.iter().rev().fold(C64::new(0.0, 0.0), |acc, &v| acc * z + v)
}

/// Monomial coefficients of the interpolating polynomial through (xs, ys).
pub fn interpolate<R: Real>(xs: &[R], ys: &[R]) -> Vec<R> {
    let n = xs.len();
    // Newton divided differences.
    let mut dd = ys.to_vec();
    for j in 1..n {
        for i in (j..n).rev() {
            dd[i] = (dd[i] - dd[i - 1]) / (xs[i] - xs[i - j]);
        }
    }
    // Expand the Newton form into monomials.
    let mut c = vec![R::zero(); n];
    for k in (0..n).rev() {
        // c <- c * (x - xs[k]) + dd[k]
        let mut next = vec![R::zero(); n];
        for i in 0..n {
            if i + 1 < n {
                next[i + 1] += c[i];
            }
            next[i] -= c[i] * xs[k];
        }
        next[0] += dd[k];
        c = next;
    }
    c
}

/// Chebyshev points of the first kind scaled to [-r, r].
pub fn chebyshev_points(count: usize, r: f64) -> Vec<f64> {
    (0..count)
        .map(|k| r * (std::f64::consts::PI * (k as f64 + 0.5) / count as f64).cos())
        .collect()
}

/// Bivariate table, `coeffs[i][j]` multiplies x^i y^j.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Bivariate {
    pub coeffs: Vec<Vec<f64>>,
}

impl Bivariate {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let rows: Vec<f64> = self.coeffs.iter().map(|row| eval(row, y)).collect();
        eval(&rows, x)
    }

    pub fn eval_c(&self, x: C64, y: C64) -> C64 {
        let rows: Vec<C64> = self.coeffs.iter().map(|row| eval_c(row, y)).collect();
        rows.iter().rev().fold(C64::new(0.0, 0.0), |acc, &v| acc * x + v)
    }

    pub fn deg_x(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn deg_y(&self) -> usize {
        self.coeffs.first().map_or(0, |r| r.len().saturating_sub(1))
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Max coefficient difference, zero-padding the smaller table.
    pub fn max_diff(&self, other: &Bivariate) -> f64 {
        let nx = self.coeffs.len().max(other.coeffs.len());
        let ny = self.deg_y().max(other.deg_y()) + 1;
        let get = |b: &Bivariate, i: usize, j: usize| b.coeffs.get(i).and_then(|r| r.get(j)).copied().unwrap_or(0.0);
        let mut m: f64 = 0.0;
        for i in 0..nx {
            for j in 0..ny {
                m = m.max((get(self, i, j) - get(other, i, j)).abs());
            }
        }
        m
    }

    /// Degree (deg_x, deg_y) interpolant of f on a tensor grid, with the
    /// value at a held-out point checked to `tol` relative.
    pub fn interpolate(
        f: &dyn Fn(f64, f64) -> Result<f64>,
        deg_x: usize,
        deg_y: usize,
        xs: &[f64],
        ys: &[f64],
        held_out: (f64, f64),
        tol: f64,
    ) -> Result<Self> {
        assert!(xs.len() == deg_x + 1 && ys.len() == deg_y + 1);
        let xq: Vec<Quad> = xs.iter().map(|&v| Quad::from_f64(v)).collect();
        let yq: Vec<Quad> = ys.iter().map(|&v| Quad::from_f64(v)).collect();
        let mut by_x: Vec<Vec<Quad>> = Vec::with_capacity(xs.len());
        for &x in xs {
            let vals: Vec<Quad> = ys.iter().map(|&y| f(x, y).map(Quad::from_f64)).collect::<Result<_>>()?;
            by_x.push(interpolate(&yq, &vals));
        }
        let mut coeffs = vec![vec![0.0; deg_y + 1]; deg_x + 1];
        for j in 0..=deg_y {
            let col: Vec<Quad> = by_x.iter().map(|r| r[j]).collect();
            let cx = interpolate(&xq, &col);
            for i in 0..=deg_x {
                coeffs[i][j] = cx[i].to_f64();
            }
        }
        let b = Bivariate { coeffs };
        let (hx, hy) = held_out;
        let direct = f(hx, hy)?;
        let fitted = b.eval(hx, hy);
        let scale = b.max_abs().max(direct.abs()).max(f64::MIN_POSITIVE) * (1.0 + hx.abs()).powi(deg_x as i32) * (1.0 + hy.abs()).powi(deg_y as i32);
        if (direct - fitted).abs() > tol * scale {
            return Err(Error::InterpolationInconsistent(format!(
                "held-out value {direct:e} vs interpolant {fitted:e}"
            )));
        }
        Ok(b)
    }
}

/// Roots of sum_k c_k z^k via companion-matrix eigenvalues, polished by Newton.
pub fn roots(c: &[C64]) -> Vec<C64> {
    let mut deg = c.len() - 1;
    while deg > 0 && c[deg].norm() == 0.0 {
        deg -= 1;
    }
    if deg == 0 {
        return vec![];
    }
    let lead = c[deg];
    let mut comp = DMatrix::<C64>::zeros(deg, deg);
    for i in 1..deg {
        comp[(i, i - 1)] = C64::new(1.0, 0.0);
    }
    for i in 0..deg {
        comp[(i, deg - 1)] = -c[i] / lead;
    }
    let ev = comp.eigenvalues().map(|v| v.iter().copied().collect::<Vec<_>>()).unwrap_or_else(|| {
        nalgebra::Schur::new(comp.clone()).eigenvalues().map(|v| v.iter().copied().collect()).unwrap_or_default()
    });
    let p = &c[..=deg];
    let dp: Vec<C64> = (1..=deg).map(|k| p[k] * k as f64).collect();
    ev.into_iter()
        .map(|mut z| {
            for _ in 0..8 {
                let f = p.iter().rev().fold(C64::new(0.0, 0.0), |a, &v| a * z + v);
                let d = dp.iter().rev().fold(C64::new(0.0, 0.0), |a, &v| a * z + v);
                if d.norm() == 0.0 {
                    break;
                }
                let step = f / d;
                z -= step;
                if step.norm() < 1e-16 * z.norm().max(1.0) {
                    break;
                }
            }
            z
        })
        .collect()
}

pub fn roots_real(c: &[f64]) -> Vec<C64> {
    roots(&c.iter().map(|&v| C64::new(v, 0.0)).collect::<Vec<_>>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn interpolation_recovers_cubic() {
        let c = [1.0, -2.0, 0.5, 3.0];
        let xs = chebyshev_points(4, 2.0);
        let ys: Vec<f64> = xs.iter().map(|&x| eval(&c, x)).collect();
        let got = interpolate(&xs, &ys);
        for (a, b) in got.iter().zip(&c) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn bivariate_interpolation_and_holdout() {
        let f = |x: f64, y: f64| Ok(2.0 * y * y - 5.0 * x * y + 2.0 * x * x + 3.0);
        let b = Bivariate::interpolate(&f, 2, 2, &chebyshev_points(3, 2.0), &chebyshev_points(3, 2.0), (0.37, -1.3), 1e-12).unwrap();
        assert!((b.coeffs[1][1] + 5.0).abs() < 1e-12);
        assert!((b.coeffs[0][0] - 3.0).abs() < 1e-12);
        let g = |x: f64, y: f64| Ok(x * x * x + y);
        let err = Bivariate::interpolate(&g, 2, 1, &chebyshev_points(3, 2.0), &chebyshev_points(2, 2.0), (1.7, 0.2), 1e-10);
        assert_eq!(err.unwrap_err().code(), "InterpolationInconsistent");
    }

    proptest! {
        #[test]
        fn roots_reproduce_polynomial(a in -3.0f64..3.0, b in -3.0f64..3.0, c in 0.5f64..2.0) {
            let p = [a, b, 0.3, c];
            for z in roots_real(&p) {
                prop_assert!(eval_c(&p, z).norm() < 1e-10 * (1.0 + z.norm().powi(3)));
            }
        }
    }
}
