//! Genus-0 large-N spectral curve: rational parametrisation
//! x(z) = gamma z + sum_k a_k z^{-k}, y(z) = gamma~/z + sum_k b_k z^k,
//! sheets, branch points, moments and the equilibrium density.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::laurent::Laurent;
use crate::model::{Potential, ValidatedModel};
use crate::poly::{roots, Bivariate, C64};
use crate::quadrature::rule_on;

const NEWTON_TOL: f64 = 1e-13;
const CURVE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Serialize)]
pub struct RationalSpectralCurve {
    #[serde(skip)]
    pub model: ValidatedModel,
    pub gamma: f64,
    pub gamma_tilde: f64,
    /// a_0..a_{d2}
    pub a: Vec<f64>,
    /// b_0..b_{d1}
    pub b: Vec<f64>,
    /// Zeros of x'(z).
    pub branch_points: Vec<C64>,
    /// Zeros of y'(z).
    pub y_branch_points: Vec<C64>,
    pub residual: f64,
}

fn x_laurent_of(gamma: f64, a: &[f64]) -> Laurent {
    let mut c: Vec<f64> = a.iter().rev().copied().collect();
    c.push(gamma);
    Laurent { lo: -(a.len() as i32 - 1), c }
}

fn y_laurent_of(gamma_tilde: f64, b: &[f64]) -> Laurent {
    let mut c = vec![gamma_tilde];
    c.extend_from_slice(b);
    Laurent { lo: -1, c }
}

/// Asymptotic conditions at both poles with gamma~ = gamma.
fn curve_residual(u: &[f64], v1: &Potential, v2: &Potential, t: f64, d1: usize, d2: usize) -> Vec<f64> {
    let gamma = u[0];
    let a = &u[1..d2 + 2];
    let b = &u[d2 + 2..];
    let x = x_laurent_of(gamma, a);
    let y = y_laurent_of(gamma, b);
    let v1x = x.compose_poly(&v1.deriv_monomials());
    let v2y = y.compose_poly(&v2.deriv_monomials());
    let mut r = Vec::with_capacity(d1 + d2 + 4);
    for k in 0..=d1 {
        r.push(b[k] - v1x.coeff(k as i32));
    }
    r.push(gamma - v1x.coeff(-1) + t / gamma);
    for k in 0..=d2 {
        r.push(a[k] - v2y.coeff(-(k as i32)));
    }
    r.push(gamma - v2y.coeff(1) + t / gamma);
    r
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn newton(u0: &[f64], v1: &Potential, v2: &Potential, t: f64, d1: usize, d2: usize) -> Result<(Vec<f64>, f64)> {
    let mut u = u0.to_vec();
    let f = |u: &[f64]| curve_residual(u, v1, v2, t, d1, d2);
    let mut r = f(&u);
    for _ in 0..60 {
        let norm = inf_norm(&r);
        if norm < NEWTON_TOL {
            return Ok((u, norm));
        }
        let m = r.len();
        let n = u.len();
        let mut jac = DMatrix::<f64>::zeros(m, n);
        for j in 0..n {
            let h = 1e-7 * u[j].abs().max(1.0);
            let mut up = u.clone();
            let mut um = u.clone();
            up[j] += h;
            um[j] -= h;
            let (rp, rm) = (f(&up), f(&um));
            for i in 0..m {
                jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * h);
            }
        }
        let svd = jac.svd(true, true);
        let step = svd
            .solve(&DVector::from_vec(r.clone()), 1e-14)
            .map_err(|e| Error::NewtonDiverged(e.to_string()))?;
        // Damped update.
        let mut lambda = 1.0;
        loop {
            let trial: Vec<f64> = u.iter().zip(step.iter()).map(|(a, s)| a - lambda * s).collect();
            if trial[0] > 0.0 {
                let rt = f(&trial);
                if inf_norm(&rt) < norm || lambda < 1e-3 {
                    u = trial;
                    r = rt;
                    break;
                }
            }
            lambda *= 0.5;
            if lambda < 1e-6 {
                return Err(Error::NewtonDiverged("line search failed".into()));
            }
        }
        if !u.iter().all(|v| v.is_finite()) {
            return Err(Error::NewtonDiverged("non-finite iterate".into()));
        }
    }
    Err(Error::NewtonDiverged(format!("residual {:e} after 60 iterations", inf_norm(&r))))
}

fn deformed(p: &Potential, s: f64) -> Potential {
    Potential::new(p.coeffs.iter().enumerate().map(|(i, &g)| if i >= 2 { g * s } else { g }).collect())
}

/// Newton solve for the genus-0 curve, continued from the quadratic part
/// of the potentials.
pub fn solve_genus0_curve(model: &ValidatedModel) -> Result<RationalSpectralCurve> {
    let (d1, d2) = (model.d1, model.d2);
    let t = model.t();
    let g2 = model.v1().g(2);
    let gt2 = model.v2().g(2);
    if g2 * gt2 <= 1.0 {
        return Err(Error::NewtonDiverged(format!("quadratic part g2 g~2 = {} has no one-cut start", g2 * gt2)));
    }
    let gamma0 = (t / (g2 * gt2 - 1.0)).sqrt();
    let mut u = vec![0.0; d1 + d2 + 3];
    u[0] = gamma0;
    u[2] = gt2 * gamma0;
    u[d2 + 2 + 1] = g2 * gamma0;
    let (mut s, mut ds) = (0.0f64, 0.25f64);
    let (first, _) = newton(&u, &deformed(model.v1(), 0.0), &deformed(model.v2(), 0.0), t, d1, d2)?;
    u = first;
    while s < 1.0 {
        let next = (s + ds).min(1.0);
        match newton(&u, &deformed(model.v1(), next), &deformed(model.v2(), next), t, d1, d2) {
            Ok((v, _)) => {
                u = v;
                s = next;
                ds = (ds * 1.5).min(0.25);
            }
            Err(e) => {
                ds *= 0.5;
                if ds < 1e-4 {
                    return Err(e);
                }
            }
        }
    }
    let residual = inf_norm(&curve_residual(&u, model.v1(), model.v2(), t, d1, d2));
    if residual > CURVE_TOL {
        return Err(Error::NewtonDiverged(format!("final residual {residual:e}")));
    }
    Ok(RationalSpectralCurve::from_parts(model.clone(), u[0], u[0], u[1..d2 + 2].to_vec(), u[d2 + 2..].to_vec(), residual))
}

/// Result of following a root of a polynomial family along a path.
fn track_root(coeffs_at: &dyn Fn(C64) -> Vec<C64>, start: C64, end: C64, guess: C64) -> Result<C64> {
    let pick = |target: C64, near: C64| -> (C64, f64, f64) {
        let rs = roots(&coeffs_at(target));
        let mut d: Vec<(f64, C64)> = rs.iter().map(|r| ((r - near).norm(), *r)).collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0));
        let second = d.get(1).map_or(f64::INFINITY, |v| v.0);
        (d[0].1, d[0].0, second)
    };
    let (mut z, _, _) = pick(start, guess);
    let (mut s, mut ds) = (0.0f64, 0.02f64);
    while s < 1.0 {
        let next = (s + ds).min(1.0);
        let target = start + (end - start) * next;
        let (cand, d0, d1) = pick(target, z);
        if d0 < 0.3 * d1 || ds < 1e-9 {
            z = cand;
            s = next;
            ds = (ds * 1.5).min(0.05);
        } else {
            ds *= 0.5;
        }
    }
    Ok(z)
}

impl RationalSpectralCurve {
    fn from_parts(model: ValidatedModel, gamma: f64, gamma_tilde: f64, a: Vec<f64>, b: Vec<f64>, residual: f64) -> Self {
        let mut c = RationalSpectralCurve { model, gamma, gamma_tilde, a, b, branch_points: vec![], y_branch_points: vec![], residual };
        // z^{d2+1} x'(z) = gamma z^{d2+1} - sum_k k a_k z^{d2-k}
        let d2 = c.a.len() - 1;
        let mut px = vec![C64::new(0.0, 0.0); d2 + 2];
        px[d2 + 1] = C64::new(gamma, 0.0);
        for k in 1..=d2 {
            px[d2 - k] = C64::new(-(k as f64) * c.a[k], 0.0);
        }
        c.branch_points = sorted(roots(&px));
        // z^2 y'(z) = -gamma~ + sum_k k b_k z^{k+1}
        let d1 = c.b.len() - 1;
        let mut py = vec![C64::new(0.0, 0.0); d1 + 2];
        py[0] = C64::new(-gamma_tilde, 0.0);
        for k in 1..=d1 {
            py[k + 1] = C64::new(k as f64 * c.b[k], 0.0);
        }
        c.y_branch_points = sorted(roots(&py));
        c
    }

    pub fn x_laurent(&self) -> Laurent {
        x_laurent_of(self.gamma, &self.a)
    }

    pub fn y_laurent(&self) -> Laurent {
        y_laurent_of(self.gamma_tilde, &self.b)
    }

    pub fn x(&self, z: C64) -> C64 {
        self.x_laurent().eval(z)
    }

    pub fn y(&self, z: C64) -> C64 {
        self.y_laurent().eval(z)
    }

    pub fn dx(&self, z: C64) -> C64 {
        self.x_laurent().deriv().eval(z)
    }

    pub fn dy(&self, z: C64) -> C64 {
        self.y_laurent().deriv().eval(z)
    }

    /// Residue at z = infinity of f(z) dz, i.e. minus the z^{-1} coefficient.
    pub fn res_inf_x(f: &Laurent) -> f64 {
        -f.coeff(-1)
    }

    /// Residue at z = 0 of f(z) dz.
    pub fn res_inf_y(f: &Laurent) -> f64 {
        f.coeff(-1)
    }

    /// Res y dx at both poles (both equal T), then Res x^{-k} y dx + g_k and
    /// Res y^{-k} x dy + g~_k for k >= 1, all of which vanish on the curve.
    pub fn residue_conditions(&self) -> Vec<f64> {
        let (x, y) = (self.x_laurent(), self.y_laurent());
        let (dx, dy) = (x.deriv(), y.deriv());
        let t = self.model.t();
        let mut out = vec![
            Self::res_inf_x(&y.mul(&dx)) - t,
            Self::res_inf_y(&x.mul(&dy)) - t,
        ];
        let terms = 4 * (self.model.d1 + self.model.d2) + 8;
        let xinv = x.reciprocal(terms, true);
        let yinv = y.reciprocal(terms, false);
        for k in 1..=self.model.d1 {
            out.push(Self::res_inf_x(&xinv.pow(k).mul(&y).mul(&dx)) + self.model.v1().g(k));
        }
        for k in 1..=self.model.d2 {
            out.push(Self::res_inf_y(&yinv.pow(k).mul(&x).mul(&dy)) + self.model.v2().g(k));
        }
        out
    }

    /// lim (1/N) <tr M1^k> = (1/T) Res_{inf_x} x^k y dx.
    pub fn leading_moment(&self, k: usize) -> f64 {
        let x = self.x_laurent();
        Self::res_inf_x(&x.pow(k).mul(&self.y_laurent()).mul(&x.deriv())) / self.model.t()
    }

    /// lim (1/N) <tr M2^k> = (1/T) Res_{inf_y} y^k x dy.
    pub fn leading_moment_y(&self, k: usize) -> f64 {
        let y = self.y_laurent();
        Self::res_inf_y(&y.pow(k).mul(&self.x_laurent()).mul(&y.deriv())) / self.model.t()
    }

    fn scale(&self) -> f64 {
        1.0 + self.gamma.abs() + inf_norm(&self.a) + inf_norm(&self.b)
    }

    /// Physical-sheet preimage of x: the root of x(z) = x continued from
    /// z ~ x/gamma near infinity along a vertical path.
    pub fn physical_z_of_x(&self, xv: C64) -> Result<C64> {
        let d2 = self.a.len() - 1;
        let coeffs = |xt: C64| {
            let mut c: Vec<C64> = (0..=d2).map(|i| C64::new(self.a[d2 - i], 0.0)).collect();
            c[d2] -= xt;
            c.push(C64::new(self.gamma, 0.0));
            c
        };
        let l = 10.0 * (self.scale() + xv.norm());
        let sgn = if xv.im < 0.0 { -1.0 } else { 1.0 };
        let start = C64::new(xv.re, sgn * l);
        track_root(&coeffs, start, xv, start / self.gamma)
    }

    /// Physical-sheet preimage of y near z ~ gamma~/y.
    pub fn physical_z_of_y(&self, yv: C64) -> Result<C64> {
        let d1 = self.b.len() - 1;
        let coeffs = |yt: C64| {
            let mut c = vec![C64::new(self.gamma_tilde, 0.0), C64::new(self.b[0], 0.0) - yt];
            for k in 1..=d1 {
                c.push(C64::new(self.b[k], 0.0));
            }
            c
        };
        let l = 10.0 * (self.scale() + yv.norm());
        let sgn = if yv.im < 0.0 { -1.0 } else { 1.0 };
        let start = C64::new(yv.re, sgn * l);
        track_root(&coeffs, start, yv, C64::new(self.gamma_tilde, 0.0) / start)
    }

    /// Y(x) = V1'(x) - T W(x) on the physical sheet.
    pub fn big_y(&self, xv: C64) -> Result<C64> {
        Ok(self.y(self.physical_z_of_x(xv)?))
    }

    pub fn big_x(&self, yv: C64) -> Result<C64> {
        Ok(self.x(self.physical_z_of_y(yv)?))
    }

    /// Real branch points where the physical sheet meets the cut, sorted by x.
    pub fn cut_edges(&self) -> Vec<(C64, f64)> {
        let scale = self.scale();
        let mut edges: Vec<(C64, f64)> = self
            .branch_points
            .iter()
            .filter(|e| e.im.abs() < 1e-9 * scale)
            .filter_map(|&e| {
                let xe = self.x(e).re;
                let z = self.physical_z_of_x(C64::new(xe, 1e-8 * scale)).ok()?;
                ((z - e).norm() < 1e-2 * e.norm().max(1.0)).then_some((e, xe))
            })
            .collect();
        edges.sort_by(|a, b| a.1.total_cmp(&b.1));
        edges
    }

    pub fn cut(&self) -> Result<(f64, f64)> {
        let e = self.cut_edges();
        if e.len() != 2 {
            return Err(Error::NewtonDiverged(format!("expected one cut, found {} physical edges", e.len())));
        }
        Ok((e[0].1, e[1].1))
    }

    /// rho(x) = |Im Y(x + i0)| / (pi T) on the cut.
    pub fn equilibrium_density(&self, xv: f64) -> Result<f64> {
        let (lo, hi) = self.cut()?;
        if xv <= lo || xv >= hi {
            return Err(Error::OutsideCut(format!("x = {xv} outside [{lo}, {hi}]")));
        }
        let z = self.physical_z_of_x(C64::new(xv, 0.0))?;
        Ok(self.y(z).im.abs() / (std::f64::consts::PI * self.model.t()))
    }

    /// int rho x^k over the cut with x = m + h cos(theta).
    pub fn density_moment(&self, k: i32, nodes: usize) -> Result<f64> {
        let (lo, hi) = self.cut()?;
        let (m, h) = ((lo + hi) / 2.0, (hi - lo) / 2.0);
        let (th, w) = rule_on::<f64>(0.0, std::f64::consts::PI, nodes);
        let mut s = 0.0;
        for (t, wt) in th.iter().zip(&w) {
            let xv = m + h * t.cos();
            s += wt * h * t.sin() * self.equilibrium_density(xv)? * xv.powi(k);
        }
        Ok(s)
    }

    /// The large-N polynomial E(x,y) = (V1'(x) - y)(V2'(y) - x) - T P(x,y) + T,
    /// with P of degree (d1-1, d2-1) fitted so that E(x(z), y(z)) = 0.
    pub fn large_n_polynomial(&self) -> Result<Bivariate> {
        let (d1, d2) = (self.model.d1, self.model.d2);
        let t = self.model.t();
        let v1p = self.model.v1().deriv_monomials();
        let v2p = self.model.v2().deriv_monomials();
        let samples = 4 * (d1 * d2 + 2);
        let r = 1.3 * self.branch_points.iter().chain(&self.y_branch_points).fold(1.0f64, |m, e| m.max(e.norm()));
        let unknowns = d1 * d2;
        let mut a = DMatrix::<f64>::zeros(2 * samples, unknowns);
        let mut rhs = DVector::<f64>::zeros(2 * samples);
        for s in 0..samples {
            let z = C64::from_polar(r, 2.0 * std::f64::consts::PI * (s as f64 + 0.3) / samples as f64);
            let (xv, yv) = (self.x(z), self.y(z));
            let v1 = v1p.iter().rev().fold(C64::new(0.0, 0.0), |acc, &c| acc * xv + c);
            let v2 = v2p.iter().rev().fold(C64::new(0.0, 0.0), |acc, &c| acc * yv + c);
            let target = ((v1 - yv) * (v2 - xv) + t) / t;
            for i in 0..d1 {
                for j in 0..d2 {
                    let m = xv.powi(i as i32) * yv.powi(j as i32);
                    a[(2 * s, i * d2 + j)] = m.re;
                    a[(2 * s + 1, i * d2 + j)] = m.im;
                }
            }
            rhs[2 * s] = target.re;
            rhs[2 * s + 1] = target.im;
        }
        let p = a.clone().svd(true, true).solve(&rhs, 1e-14).map_err(|e| Error::InterpolationInconsistent(e.to_string()))?;
        let resid = (&a * &p - &rhs).amax();
        if resid > 1e-8 * rhs.amax().max(1.0) {
            return Err(Error::InterpolationInconsistent(format!("curve polynomial fit residual {resid:e}")));
        }
        let mut coeffs = vec![vec![0.0; d2 + 2]; d1 + 2];
        // (V1'(x) - y)(V2'(y) - x)
        for (i, &gi) in v1p.iter().enumerate() {
            for (j, &gj) in v2p.iter().enumerate() {
                coeffs[i][j] += gi * gj;
            }
            coeffs[i + 1][0] -= gi;
        }
        for (j, &gj) in v2p.iter().enumerate() {
            coeffs[0][j + 1] -= gj;
        }
        coeffs[1][1] += 1.0;
        coeffs[0][0] += t;
        for i in 0..d1 {
            for j in 0..d2 {
                coeffs[i][j] -= t * p[i * d2 + j];
            }
        }
        Ok(Bivariate { coeffs })
    }

    /// 1 - E(x,y) / ((x - X(y)) (y - Y(x))), the large-N limit of
    /// (T/N) <tr (x-M1)^{-1} (y-M2)^{-1}>.
    pub fn mixed_resolvent_large_n(&self, xv: C64, yv: C64) -> Result<C64> {
        let e = self.large_n_polynomial()?;
        let big_y = self.big_y(xv)?;
        let big_x = self.big_x(yv)?;
        Ok(C64::new(1.0, 0.0) - e.eval_c(xv, yv) / ((xv - big_x) * (yv - big_y)))
    }

    /// Branch data for each zero e of x'(z): x(e), x''(e), dy/dzeta at e
    /// with zeta = sqrt(x - x(e)), and the Schwarzian {z; zeta} at e.
    pub fn moduli(&self) -> Vec<BranchData> {
        let xl = self.x_laurent();
        let d2 = xl.deriv().deriv();
        let d3 = d2.deriv();
        let d4 = d3.deriv();
        self.branch_points
            .iter()
            .map(|&e| {
                let (x2, x3, x4) = (d2.eval(e), d3.eval(e), d4.eval(e));
                let s = (x2 / 2.0).sqrt();
                let p1 = x3 / (3.0 * x2);
                let p2 = x4 / (12.0 * x2);
                let (a1, a2, a3) = (s, s * p1 / 2.0, s * (p2 / 2.0 - p1 * p1 / 8.0));
                let schw_zeta_z = a3 * 6.0 / a1 - (a2 / a1) * (a2 / a1) * 6.0;
                BranchData {
                    z: e,
                    x: self.x(e),
                    x_second: x2,
                    dy_dzeta: self.dy(e) / s,
                    schwarzian: -schw_zeta_z / (a1 * a1),
                }
            })
            .collect()
    }
}

fn sorted(mut v: Vec<C64>) -> Vec<C64> {
    v.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    v
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct BranchData {
    pub z: C64,
    pub x: C64,
    pub x_second: C64,
    pub dy_dzeta: C64,
    pub schwarzian: C64,
}
