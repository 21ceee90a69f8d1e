//! Large-N asymptotics of psi_{N-k}(x) off the cut for genus-0 curves.

use serde::Serialize;

use crate::biortho::build_family;
use crate::curve::RationalSpectralCurve;
use crate::error::{Error, Result};
use crate::laurent::Laurent;
use crate::model::ValidatedModel;
use crate::poly::C64;
use crate::quadrature::rule_on;
use crate::real::Precision;

/// Composite Gauss-Legendre on [a, b], bisecting panels until a 16-node and
/// a 32-node rule agree.
fn adaptive_integral(f: &dyn Fn(f64) -> C64, a: f64, b: f64, tol: f64, depth: usize) -> C64 {
    let rule = |n: usize| {
        let (t, w) = rule_on::<f64>(a, b, n);
        t.iter().zip(&w).map(|(&t, &w)| f(t) * w).sum::<C64>()
    };
    let (coarse, fine) = (rule(16), rule(32));
    if (coarse - fine).norm() <= tol || depth == 0 {
        return fine;
    }
    let m = 0.5 * (a + b);
    adaptive_integral(f, a, m, 0.5 * tol, depth - 1) + adaptive_integral(f, m, b, 0.5 * tol, depth - 1)
}

/// Laurent part of y - V1'(x) (or x - V2'(y)) with the terms that vanish on
/// the curve removed: those of degree >= 0 at infinity (resp. <= 0 at zero).
fn decaying_part(l: &Laurent, at_infinity: bool) -> Laurent {
    let mut out = Laurent::zero();
    for k in l.lo..=l.hi() {
        if (at_infinity && k < 0) || (!at_infinity && k > 0) {
            out = out.add(&Laurent::monomial(k, l.coeff(k)));
        }
    }
    out
}

fn check_physical_x(curve: &RationalSpectralCurve, z: C64) -> Result<()> {
    let back = curve.physical_z_of_x(curve.x(z)).map_err(|e| Error::PathCrossesCut(e.to_string()))?;
    if (back - z).norm() > 1e-8 * (1.0 + z.norm()) {
        return Err(Error::PathCrossesCut(format!("z = {z} is not on the physical x-sheet")));
    }
    Ok(())
}

/// T(p) = V1(x) - T ln x + int_{inf_x}^p (y - V1'(x) + T/x) dx along the ray
/// from z to infinity.
pub fn effective_exponent(curve: &RationalSpectralCurve, z: C64) -> Result<C64> {
    for s in [1.0, 0.75, 0.5, 0.25] {
        check_physical_x(curve, z / s)?;
    }
    let m = &curve.model;
    let t = m.t();
    let xl = curve.x_laurent();
    let g = decaying_part(&curve.y_laurent().sub(&xl.compose_poly(&m.v1().deriv_monomials())), true);
    let scale = 1.0 + curve.gamma * z.norm();
    let f = |s: f64| -> C64 {
        if s == 0.0 {
            return C64::new(0.0, 0.0);
        }
        let zz = z / s;
        let (x, dx) = (xl.eval(zz), curve.dx(zz));
        (g.eval(zz) + t / x) * dx * (-z / (s * s))
    };
    for s in [1.0, 0.5, 0.1, 0.01] {
        if curve.x(z / s).norm() < 1e-10 * scale {
            return Err(Error::PathCrossesCut(format!("x vanishes on the path near z = {}", z / s)));
        }
    }
    let integral = adaptive_integral(&f, 0.0, 1.0, 1e-14, 24);
    let x = curve.x(z);
    Ok(C64::new(m.v1().value(x.re), 0.0) + v_imag(&m.v1().monomials(), x) - x.ln() * t + integral)
}

/// T~(p) = V2(y) - T ln y + int_{inf_y}^p (x - V2'(y) + T/y) dy along the ray
/// from 0 to z.
pub fn effective_exponent_dual(curve: &RationalSpectralCurve, z: C64) -> Result<C64> {
    let m = &curve.model;
    let t = m.t();
    let yl = curve.y_laurent();
    let g = decaying_part(&curve.x_laurent().sub(&yl.compose_poly(&m.v2().deriv_monomials())), false);
    for s in [1.0, 0.5, 0.1, 0.01] {
        if curve.y(z * s).norm() < 1e-10 {
            return Err(Error::PathCrossesCut(format!("y vanishes on the path near z = {}", z * s)));
        }
    }
    let f = |s: f64| -> C64 {
        if s == 0.0 {
            return C64::new(0.0, 0.0);
        }
        let zz = z * s;
        (g.eval(zz) + t / yl.eval(zz)) * curve.dy(zz) * z
    };
    let integral = adaptive_integral(&f, 0.0, 1.0, 1e-14, 24);
    let y = curve.y(z);
    Ok(C64::new(m.v2().value(y.re), 0.0) + v_imag(&m.v2().monomials(), y) - y.ln() * t + integral)
}

/// V(w) - V(Re w) for complex w, V given by monomial coefficients.
fn v_imag(mono: &[f64], w: C64) -> C64 {
    let full: C64 = mono.iter().enumerate().map(|(k, c)| w.powi(k as i32) * *c).sum();
    let re: f64 = mono.iter().enumerate().map(|(k, c)| w.re.powi(k as i32) * c).sum();
    full - re
}

/// mu = T(p) + T~(p) - x y, independent of p.
pub fn mu_at(curve: &RationalSpectralCurve, z: C64) -> Result<C64> {
    Ok(effective_exponent(curve, z)? + effective_exponent_dual(curve, z)? - curve.x(z) * curve.y(z))
}

pub fn h_factor(curve: &RationalSpectralCurve, z: C64) -> C64 {
    C64::new(curve.gamma, 0.0) / curve.dx(z)
}

pub fn h_factor_dual(curve: &RationalSpectralCurve, z: C64) -> C64 {
    -C64::new(curve.gamma_tilde, 0.0) / (z * z * curve.dy(z))
}

/// Predicted h_{N-k}.
pub fn norm_prediction(curve: &RationalSpectralCurve, n: usize, k: usize, mu: f64) -> f64 {
    let gg = curve.gamma * curve.gamma_tilde;
    let nf = n as f64;
    2.0 * std::f64::consts::PI / gg.powi(k as i32) * (2.0 * std::f64::consts::PI * gg / nf).sqrt() * (-nf * mu).exp()
}

#[derive(Debug, Clone, Serialize)]
pub struct AsymptoticPsi {
    pub z: C64,
    pub exponent: C64,
    pub mu: f64,
    pub h_pred: f64,
    pub psi: f64,
}

fn check_outside(curve: &RationalSpectralCurve, x: f64) -> Result<()> {
    let (lo, hi) = curve.cut()?;
    let margin = 0.1 * (hi - lo);
    if x > lo - margin && x < hi + margin {
        return Err(Error::InsideCutRegion(format!("x = {x} within [{}, {}]", lo - margin, hi + margin)));
    }
    Ok(())
}

/// psi_{N-k}(x) ~ sqrt(H/h~_k) (gamma z)^{-k} e^{-N T(p)} for T = 1.
pub fn asymptotic_psi(curve: &RationalSpectralCurve, n: usize, k: usize, x: f64) -> Result<AsymptoticPsi> {
    if (curve.model.t() - 1.0).abs() > 1e-14 {
        return Err(Error::ConfigInvalid("asymptotics are set up at T = 1".into()));
    }
    check_outside(curve, x)?;
    let z = curve.physical_z_of_x(C64::new(x, 0.0))?;
    let exponent = effective_exponent(curve, z)?;
    let mu = mu_at(curve, z)?.re;
    let h_pred = norm_prediction(curve, n, k, mu);
    let f = (h_factor(curve, z) / h_pred).sqrt() * (z * curve.gamma).powi(-(k as i32));
    let psi = f * (-exponent * n as f64).exp();
    Ok(AsymptoticPsi { z, exponent, mu, h_pred, psi: psi.re })
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub n: usize,
    pub k: usize,
    pub x: f64,
    pub psi_exact: f64,
    pub psi_asym: f64,
    pub rel_err: f64,
    pub h_ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorSweep {
    pub rows: Vec<SweepRow>,
    /// Fitted alpha in err ~ C N^{-alpha}, per (k, x), sorted like the input.
    pub exponents: Vec<(usize, f64, f64)>,
}

impl ErrorSweep {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("N,k,x,psi_exact,psi_asym,rel_err,h_ratio\n");
        for r in &self.rows {
            s += &format!("{},{},{},{:e},{:e},{:e},{}\n", r.n, r.k, r.x, r.psi_exact, r.psi_asym, r.rel_err, r.h_ratio);
        }
        s
    }
}

/// Least-squares slope of ln err against ln N, negated.
pub fn decay_exponent(ns: &[usize], errs: &[f64]) -> f64 {
    let lx: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let ly: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let (mx, my) = (lx.iter().sum::<f64>() / lx.len() as f64, ly.iter().sum::<f64>() / ly.len() as f64);
    let num: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let den: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    -num / den
}

/// Relative error of the asymptotic psi_{N-k} against the finite-N family.
pub fn asymptotic_error_sweep(model: &ValidatedModel, curve: &RationalSpectralCurve, ns: &[usize], ks: &[usize], xs: &[f64]) -> Result<ErrorSweep> {
    let mut rows = Vec::new();
    for &n in ns {
        let m = crate::model::validate_model(&model.spec.with_n(n))?;
        let fam = build_family(&m, n + 1, Precision::Extended)?;
        for &k in ks {
            for &x in xs {
                let a = asymptotic_psi(curve, n, k, x)?;
                let exact = fam.psi(n - k, x);
                let h = crate::real::Real::to_f64(fam.h(n - k));
                rows.push(SweepRow { n, k, x, psi_exact: exact, psi_asym: a.psi, rel_err: ((a.psi - exact) / exact).abs(), h_ratio: a.h_pred / h });
            }
        }
    }
    rows.sort_by(|a, b| a.n.cmp(&b.n).then(a.x.total_cmp(&b.x)).then(a.k.cmp(&b.k)));
    let mut exponents = Vec::new();
    for &k in ks {
        for &x in xs {
            let errs: Vec<f64> = ns.iter().map(|&n| rows.iter().find(|r| r.n == n && r.k == k && r.x == x).unwrap().rel_err).collect();
            exponents.push((k, x, decay_exponent(ns, &errs)));
        }
    }
    Ok(ErrorSweep { rows, exponents })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::solve_genus0_curve;
    use crate::loops::d_free_energy_d_t;
    use crate::model::{validate_model, ModelSpec};

    fn setup(spec: ModelSpec) -> (ValidatedModel, RationalSpectralCurve) {
        let m = validate_model(&spec).unwrap();
        let c = solve_genus0_curve(&m).unwrap();
        (m, c)
    }

    #[test]
    fn exponent_normalization_and_gaussian_value() {
        let (_, c) = setup(ModelSpec::gaussian(1));
        let far = C64::new(400.0, 0.0);
        let x = c.x(far);
        let d = effective_exponent(&c, far).unwrap() - (x * x - x.ln());
        assert!(d.norm() < 1e-4, "{d}");
        // one-matrix semicircle with variance 2/3, edge a
        let a2 = 8.0 / 3.0;
        let xv: f64 = 3.0;
        let r = (xv * xv - a2).sqrt();
        let oracle = xv * xv - ((xv + r) / 2.0).ln() - (xv * xv - xv * r) / a2 + 0.5;
        let z = c.physical_z_of_x(C64::new(xv, 0.0)).unwrap();
        let tp = effective_exponent(&c, z).unwrap();
        assert!((tp.re - oracle).abs() < 1e-12 && tp.im.abs() < 1e-12, "{tp} vs {oracle}");
    }

    #[test]
    fn mu_is_probe_independent_and_matches_free_energy() {
        for spec in [ModelSpec::gaussian(1), ModelSpec::quartic_v1(0.025, 1)] {
            let (_, c) = setup(spec);
            let probes: Vec<C64> = [2.5, 3.2, 4.0].iter().map(|&x| c.physical_z_of_x(C64::new(x, 0.0)).unwrap()).collect();
            let mus: Vec<C64> = probes.iter().map(|&z| mu_at(&c, z).unwrap()).collect();
            for m in &mus {
                assert!((m - mus[0]).norm() < 1e-8);
            }
            let closed = d_free_energy_d_t(&c, probes[0].re);
            assert!((mus[0].re - closed).abs() < 1e-10, "{} vs {closed}", mus[0]);
        }
    }

    #[test]
    fn h_factors_tend_to_one() {
        let (_, c) = setup(ModelSpec::quartic_v1(0.025, 1));
        assert!((h_factor(&c, C64::new(1e6, 0.0)) - 1.0).norm() < 1e-9);
        assert!((h_factor_dual(&c, C64::new(1e-6, 0.0)) - 1.0).norm() < 1e-9);
    }

    #[test]
    fn inside_cut_is_rejected() {
        let (_, c) = setup(ModelSpec::gaussian(1));
        assert_eq!(asymptotic_psi(&c, 8, 0, 1.0).unwrap_err().code(), "InsideCutRegion");
    }

    #[test]
    fn gaussian_sweep_converges() {
        let (m, c) = setup(ModelSpec::gaussian(1));
        let sweep = asymptotic_error_sweep(&m, &c, &[8, 12, 16], &[0, 1], &[2.5, 4.0]).unwrap();
        let row = sweep.rows.iter().find(|r| r.n == 12 && r.k == 0 && r.x == 2.5).unwrap();
        assert!(row.rel_err < 0.1, "{row:?}");
        assert!((0.9..=1.1).contains(&row.h_ratio), "{row:?}");
        for (k, x, alpha) in &sweep.exponents {
            assert!((0.7..=1.3).contains(alpha), "k={k} x={x} alpha={alpha}");
        }
        let e = |x: f64| sweep.rows.iter().find(|r| r.n == 16 && r.k == 0 && r.x == x).unwrap().rel_err;
        assert!(e(4.0) < e(2.5));
    }
}
