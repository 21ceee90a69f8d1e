//! Observables of the genus-0 curve: free energy and its first
//! derivatives, Bergmann two-point functions, and the 1/N^2 correction to
//! the resolvent by residues at the branch points.

use serde::Serialize;

use crate::band::BandOperator;
use crate::curve::RationalSpectralCurve;
use crate::error::{Error, Result};
use crate::laurent::Laurent;
use crate::poly::{roots, C64};
use crate::real::Real;

const OUTER_NODES: usize = 96;
const INNER_NODES: usize = 64;

#[derive(Debug, Clone, Serialize)]
pub struct FreeEnergy {
    /// dF/dg_k for k = 1..d1+1.
    pub d_g: Vec<f64>,
    /// dF/dg~_k for k = 1..d2+1.
    pub d_gt: Vec<f64>,
    /// dF/dT at each probe point.
    pub d_t_probes: Vec<f64>,
    pub d_t: f64,
    /// -1/2 Res_{inf_x} x y^2 dx, the derivative along the coupling of tr M1 M2.
    pub d_h: f64,
    pub f0: f64,
}

/// Sum_{k in range} c_k z^{k+1}/(k+1) for the Laurent terms of `l` with
/// exponent in [lo, hi], skipping -1.
fn antiderivative(l: &Laurent, lo: i32, hi: i32, z: f64) -> f64 {
    (lo.max(l.lo)..=hi.min(l.hi())).filter(|&k| k != -1).map(|k| l.coeff(k) * z.powi(k + 1) / (k + 1) as f64).sum()
}

/// dF/dT from the regularized integrals in closed Laurent form at a real
/// probe point z_p > 0 on both physical sheets.
pub fn d_free_energy_d_t(curve: &RationalSpectralCurve, zp: f64) -> f64 {
    let (x, y) = (curve.x_laurent(), curve.y_laurent());
    let m = &curve.model;
    let l1 = y.sub(&x.compose_poly(&m.v1().deriv_monomials())).mul(&x.deriv());
    let l2 = x.sub(&y.compose_poly(&m.v2().deriv_monomials())).mul(&y.deriv());
    let z = C64::new(zp, 0.0);
    let (xp, yp) = (curve.x(z).re, curve.y(z).re);
    let t = m.t();
    antiderivative(&l1, i32::MIN / 2, -2, zp) + antiderivative(&l2, 0, i32::MAX / 2, zp) + m.v1().value(xp) + m.v2().value(yp)
        - xp * yp
        - t * (curve.gamma * curve.gamma_tilde).ln()
}

pub fn free_energy(curve: &RationalSpectralCurve, probes: &[f64]) -> FreeEnergy {
    let (x, y) = (curve.x_laurent(), curve.y_laurent());
    let (dx, dy) = (x.deriv(), y.deriv());
    let m = &curve.model;
    let d_g: Vec<f64> = (1..=m.d1 + 1)
        .map(|k| RationalSpectralCurve::res_inf_x(&x.pow(k).mul(&y).mul(&dx)) / k as f64)
        .collect();
    let d_gt: Vec<f64> = (1..=m.d2 + 1)
        .map(|k| RationalSpectralCurve::res_inf_y(&y.pow(k).mul(&x).mul(&dy)) / k as f64)
        .collect();
    let d_t_probes: Vec<f64> = probes.iter().map(|&z| d_free_energy_d_t(curve, z)).collect();
    let d_t = d_t_probes[0];
    let d_h = -0.5 * RationalSpectralCurve::res_inf_x(&x.mul(&y).mul(&y).mul(&dx));
    let sum_g: f64 = d_g.iter().enumerate().map(|(i, d)| m.v1().g(i + 1) * d).sum();
    let sum_gt: f64 = d_gt.iter().enumerate().map(|(i, d)| m.v2().g(i + 1) * d).sum();
    let f0 = 0.5 * (sum_g + sum_gt + m.t() * d_t + d_h);
    FreeEnergy { d_g, d_gt, d_t_probes, d_t, d_h, f0 }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct TwoPoint {
    pub w11: C64,
    pub w22: C64,
    pub w12: C64,
}

fn schwarzian_in_z(l: &Laurent, z: C64) -> C64 {
    let d1 = l.deriv();
    let d2 = d1.deriv();
    let d3 = d2.deriv();
    let (a, b, c) = (d1.eval(z), d2.eval(z), d3.eval(z));
    c / a - (b / a) * (b / a) * 1.5
}

/// Genus-0 two-point functions at (x(z1), x(z2)), (y(z1), y(z2)) and
/// (x(z1), y(z2)); the diagonal of W11, W22 is (1/6) S.
pub fn bergmann_two_point(curve: &RationalSpectralCurve, z1: C64, z2: C64) -> Result<TwoPoint> {
    let (xl, yl) = (curve.x_laurent(), curve.y_laurent());
    let (dx1, dx2) = (curve.dx(z1), curve.dx(z2));
    let (dy1, dy2) = (curve.dy(z1), curve.dy(z2));
    let scale = 1.0 + z1.norm();
    if (z1 - z2).norm() < 1e-9 * scale {
        return Err(Error::CoincidentPoints(format!("z1 = z2 = {z1}; use two_point_diagonal")));
    }
    let b = 1.0 / ((z1 - z2) * (z1 - z2));
    let (x1, x2) = (xl.eval(z1), xl.eval(z2));
    let (y1, y2) = (yl.eval(z1), yl.eval(z2));
    Ok(TwoPoint {
        w11: b / (dx1 * dx2) - 1.0 / ((x1 - x2) * (x1 - x2)),
        w22: b / (dy1 * dy2) - 1.0 / ((y1 - y2) * (y1 - y2)),
        w12: -b / (dx1 * dy2),
    })
}

/// W11(x;x) and W22(y;y) at z: (1/6) {z; x} and (1/6) {z; y}.
pub fn two_point_diagonal(curve: &RationalSpectralCurve, z: C64) -> (C64, C64) {
    let (xl, yl) = (curve.x_laurent(), curve.y_laurent());
    let (dx, dy) = (curve.dx(z), curve.dy(z));
    (-schwarzian_in_z(&xl, z) / (dx * dx) / 6.0, -schwarzian_in_z(&yl, z) / (dy * dy) / 6.0)
}

/// Leading connected <tr M1^k tr M1^l>_c as the double residue of x^k x^l B
/// at infinity: sum_{m>0} m [z^{-m}] x^k [z^m] x^l.
pub fn connected_two_point_moment(curve: &RationalSpectralCurve, k: usize, l: usize) -> f64 {
    let x = curve.x_laurent();
    let (xk, xl) = (x.pow(k), x.pow(l));
    (1..=xk.hi().max(-xk.lo).max(1)).map(|m| m as f64 * xk.coeff(-m) * xl.coeff(m)).sum()
}

/// (1/2 pi i) around a circle of radius r centred at c.
fn circle_integral(c: C64, r: f64, n: usize, f: &mut dyn FnMut(C64) -> C64) -> C64 {
    let mut s = C64::new(0.0, 0.0);
    for j in 0..n {
        let u = C64::from_polar(1.0, 2.0 * std::f64::consts::PI * (j as f64 + 0.5) / n as f64);
        s += f(c + u * r) * u;
    }
    s * (r / n as f64)
}

/// Distance from q to the nearest other solution p' of x(p') = x(q) or
/// y(p') = y(q), and to the poles at 0.
fn inner_radius(curve: &RationalSpectralCurve, q: C64, avoid: Option<C64>) -> f64 {
    let d2 = curve.a.len() - 1;
    let xq = curve.x(q);
    let mut cx: Vec<C64> = (0..=d2).map(|i| C64::new(curve.a[d2 - i], 0.0)).collect();
    cx[d2] -= xq;
    cx.push(C64::new(curve.gamma, 0.0));
    let d1 = curve.b.len() - 1;
    let yq = curve.y(q);
    let mut cy = vec![C64::new(curve.gamma_tilde, 0.0), C64::new(curve.b[0], 0.0) - yq];
    cy.extend((1..=d1).map(|k| C64::new(curve.b[k], 0.0)));
    let mut best = avoid.map_or(q.norm(), |p| q.norm().min((p - q).norm()));
    for rs in [roots(&cx), roots(&cy)] {
        let mut d: Vec<f64> = rs.iter().map(|r| (r - q).norm()).collect();
        d.sort_by(f64::total_cmp);
        // the smallest distance is q itself
        if let Some(&v) = d.get(1) {
            best = best.min(v);
        }
    }
    0.5 * best
}

/// 1/2 sum_i Res_{q -> e_i} Res_{p' -> q} K(q, p') B(q,p') / ((y(q)-y(p'))(x(q)-x(p'))).
fn branch_double_residue(curve: &RationalSpectralCurve, avoid: Option<C64>, kern: &dyn Fn(C64, C64) -> C64) -> Result<C64> {
    let (xl, yl) = (curve.x_laurent(), curve.y_laurent());
    let x2 = xl.deriv().deriv();
    let mut total = C64::new(0.0, 0.0);
    let specials: Vec<C64> = curve.branch_points.iter().chain(&curve.y_branch_points).copied().chain([C64::new(0.0, 0.0)]).collect();
    for &e in &curve.branch_points {
        let scale = 1.0 + e.norm();
        if x2.eval(e).norm() < 1e-8 * scale {
            return Err(Error::DegenerateBranchPoint(format!("x''(e) ~ 0 at e = {e}")));
        }
        let mut d = specials.iter().filter(|&&s| (s - e).norm() > 1e-12 * scale).fold(f64::INFINITY, |m, s| m.min((s - e).norm()));
        if let Some(p) = avoid {
            d = d.min((p - e).norm());
        }
        let r_out = 0.3 * d;
        let mut outer = |q: C64| -> C64 {
            let (xq, yq) = (xl.eval(q), yl.eval(q));
            let r_in = inner_radius(curve, q, avoid);
            circle_integral(q, r_in, INNER_NODES, &mut |p: C64| {
                let dz = q - p;
                kern(q, p) / (dz * dz * (yq - yl.eval(p)) * (xq - xl.eval(p)))
            })
        };
        total += circle_integral(e, r_out, OUTER_NODES, &mut outer);
    }
    // overall orientation fixed against the Gaussian 1/N^2 moments
    Ok(total * -0.5)
}

/// T W1^(1)(x(z)) x'(z) at each z of the grid.
pub fn resolvent_subleading(curve: &RationalSpectralCurve, zs: &[C64]) -> Result<Vec<C64>> {
    zs.iter()
        .map(|&zp| branch_double_residue(curve, Some(zp), &|q, p| 1.0 / (zp - q) - 1.0 / (zp - p)))
        .collect()
}

/// W1^(1)(x) at x off the cut, from the physical preimage.
pub fn resolvent_subleading_at_x(curve: &RationalSpectralCurve, x: C64) -> Result<C64> {
    let z = curve.physical_z_of_x(x)?;
    Ok(resolvent_subleading(curve, &[z])?[0] / (curve.dx(z) * curve.model.t()))
}

/// Coefficient of x^{-k-1} in W1^(1)(x), i.e. the 1/N^2 part of (1/N)<tr M1^k>.
pub fn subleading_moment(curve: &RationalSpectralCurve, k: usize) -> Result<f64> {
    let pk = curve.x_laurent().pow(k).nonnegative_part();
    let v = branch_double_residue(curve, None, &|q, p| pk.eval(q) - pk.eval(p))?;
    Ok(v.re / curve.model.t())
}

/// Laurent coefficients c_{-m}, m = 1..=max_order, of T W1^(1) dx around each
/// branch point on a circle of radius `r`.
pub fn subleading_pole_structure(curve: &RationalSpectralCurve, r: f64, max_order: usize) -> Result<Vec<Vec<C64>>> {
    let mut out = Vec::new();
    for &e in &curve.branch_points {
        let n = 48;
        let pts: Vec<C64> = (0..n).map(|j| e + C64::from_polar(r, 2.0 * std::f64::consts::PI * (j as f64 + 0.5) / n as f64)).collect();
        let vals = resolvent_subleading(curve, &pts)?;
        let coeffs = (1..=max_order)
            .map(|m| {
                let mut s = C64::new(0.0, 0.0);
                for (p, v) in pts.iter().zip(&vals) {
                    let w = p - e;
                    s += v * w.powi(m as i32);
                }
                s / n as f64
            })
            .collect();
        out.push(coeffs);
    }
    Ok(out)
}

/// <tr M1^k> for k = 0..=kmax at finite N, as sum_{n<N} (Q^k)_{nn}.
pub fn finite_n_moments(q: &BandOperator, n: usize, kmax: usize) -> Result<Vec<f64>> {
    let s = q.size();
    if n + kmax > s {
        return Err(Error::TruncationTooSmall(format!("need Q of size {} for N={n}, k={kmax}", n + kmax)));
    }
    let mut out = Vec::with_capacity(kmax + 1);
    let mut pw = crate::linalg::Mat::<qd::Quad>::identity(s);
    for _ in 0..=kmax {
        out.push((0..n).fold(qd::Quad::ZERO, |a, i| a + pw[(i, i)]).to_f64());
        pw = pw.mul(&q.entries);
    }
    Ok(out)
}

/// Fit v(N) = a + b/N^2 + c/N^4 through three points; returns (a, b, c).
pub fn richardson_inverse_square(ns: &[usize; 3], vals: &[f64; 3]) -> (f64, f64, f64) {
    let m = nalgebra::Matrix3::from_fn(|i, j| (1.0 / (ns[i] as f64).powi(2)).powi(j as i32));
    let v = nalgebra::Vector3::from_column_slice(vals);
    let s = m.lu().solve(&v).expect("distinct N");
    (s[0], s[1], s[2])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::band::build_q_p;
    use crate::biortho::build_family;
    use crate::curve::solve_genus0_curve;
    use crate::model::{validate_model, ModelSpec};
    use crate::real::Precision;

    fn curve(spec: ModelSpec) -> RationalSpectralCurve {
        solve_genus0_curve(&validate_model(&spec).unwrap()).unwrap()
    }

    #[test]
    fn gaussian_subleading_moments() {
        let c = curve(ModelSpec::gaussian(1));
        let t4 = subleading_moment(&c, 4).unwrap();
        assert!((t4 - 4.0 / 9.0).abs() < 1e-10, "{t4}");
        for k in [0, 1, 2, 3] {
            assert!(subleading_moment(&c, k).unwrap().abs() < 1e-11, "k={k}");
        }
        // 1/N^2 part of <tr M^6>/N for variance s2 is 10 s2^3
        let t6 = subleading_moment(&c, 6).unwrap();
        assert!((t6 - 10.0 * (2.0f64 / 3.0).powi(3)).abs() < 1e-10, "{t6}");
    }

    #[test]
    fn subleading_grid_agrees_with_moments() {
        let c = curve(ModelSpec::quartic_v1(0.025, 1));
        // W1^(1)(x) = sum_k T_k^(1) x^{-k-1}, compared far out on the physical sheet.
        let x = C64::new(0.0, 7.0);
        let w = resolvent_subleading_at_x(&c, x).unwrap();
        let series: C64 = (0..40).map(|k| subleading_moment(&c, k).unwrap() * x.powi(-(k as i32) - 1)).sum();
        assert!((w - series).norm() < 1e-9 * w.norm(), "{w} vs {series}");
    }

    #[test]
    fn subleading_poles_are_residue_free_and_at_most_fourth_order() {
        for spec in [ModelSpec::gaussian(1), ModelSpec::quartic_v1(0.025, 1)] {
            let c = curve(spec);
            let pole = subleading_pole_structure(&c, 0.25, 6).unwrap();
            for coeffs in pole {
                let top = coeffs[3].norm();
                assert!(top > 1e-3);
                assert!(coeffs[0].norm() < 1e-9 * top, "residue {}", coeffs[0]);
                assert!(coeffs[4].norm() < 1e-9 * top && coeffs[5].norm() < 1e-9 * top);
            }
        }
    }

    #[test]
    fn finite_n_gaussian_fourth_moment() {
        // <tr M1^4> = N (2 s2^2) + s2^2 / N with s2 = 2/3
        for n in [4, 8] {
            let f = build_family(&validate_model(&ModelSpec::gaussian(n)).unwrap(), n + 10, Precision::Extended).unwrap();
            let (q, _) = build_q_p(&f).unwrap();
            let m = finite_n_moments(&q, n, 4).unwrap();
            let s4 = 4.0 / 9.0;
            assert!((m[4] - (2.0 * n as f64 * s4 + s4 / n as f64)).abs() < 1e-20f64.max(1e-13 * m[4]));
            assert!((m[0] - n as f64).abs() < 1e-20);
        }
    }

    #[test]
    fn free_energy_derivatives_are_consistent() {
        let c = curve(ModelSpec::gaussian(1));
        let fe = free_energy(&c, &[1.0, 1.3, 2.0]);
        assert!((fe.d_g[1] - 1.0 / 3.0).abs() < 1e-14);
        for v in &fe.d_t_probes {
            assert!((v - fe.d_t).abs() < 1e-12);
        }
        assert!((fe.d_t - (1.0 + 3.0f64.ln())).abs() < 1e-12, "{}", fe.d_t);
        // finite differences of F0 in g4, g2 and T on a quartic model
        let base = ModelSpec::quartic_v1(0.03, 1);
        let f0 = |s: ModelSpec| free_energy(&curve(s), &[1.2]).f0;
        let fe = free_energy(&curve(base.clone()), &[1.2, 1.5, 2.5]);
        let h = 1e-5;
        for k in [2usize, 4] {
            let (mut p, mut m) = (base.clone(), base.clone());
            p.v1.coeffs[k - 1] += h;
            m.v1.coeffs[k - 1] -= h;
            let fd = (f0(p) - f0(m)) / (2.0 * h);
            assert!((fd - fe.d_g[k - 1]).abs() < 1e-6, "g{k}: {fd} vs {}", fe.d_g[k - 1]);
        }
        let fd = (f0(base.with_t(1.0 + h)) - f0(base.with_t(1.0 - h))) / (2.0 * h);
        assert!((fd - fe.d_t).abs() < 1e-6, "T: {fd} vs {}", fe.d_t);
        for v in &fe.d_t_probes {
            assert!((v - fe.d_t).abs() < 1e-8);
        }
    }

    #[test]
    fn two_point_functions() {
        let c = curve(ModelSpec::gaussian(1));
        assert!((connected_two_point_moment(&c, 2, 2) - 8.0 / 9.0).abs() < 1e-14);
        let (z1, z2) = (C64::new(2.3, 0.4), C64::new(-1.9, 1.1));
        let a = bergmann_two_point(&c, z1, z2).unwrap();
        let b = bergmann_two_point(&c, z2, z1).unwrap();
        assert!((a.w11 - b.w11).norm() < 1e-14 && (a.w22 - b.w22).norm() < 1e-14);
        let z = C64::new(2.1, 0.7);
        let (d11, _) = two_point_diagonal(&c, z);
        let near = (bergmann_two_point(&c, z, z + 2e-3).unwrap().w11 + bergmann_two_point(&c, z, z - 2e-3).unwrap().w11) * 0.5;
        assert!((near - d11).norm() < 1e-5 * d11.norm(), "{near} vs {d11}");
        assert_eq!(bergmann_two_point(&c, z, z).unwrap_err().code(), "CoincidentPoints");
        // nested contour extraction of <tr M1^2 tr M1^2>_c
        let (r1, r2) = (4.0, 3.0);
        let n = 128;
        let mut s = C64::new(0.0, 0.0);
        for i in 0..n {
            let u1 = C64::from_polar(1.0, 2.0 * std::f64::consts::PI * i as f64 / n as f64);
            for j in 0..n {
                let u2 = C64::from_polar(1.0, 2.0 * std::f64::consts::PI * j as f64 / n as f64);
                let (p, q) = (u1 * r1, u2 * r2);
                let w = bergmann_two_point(&c, p, q).unwrap().w11;
                s += c.x(p).powi(2) * c.x(q).powi(2) * w * c.dx(p) * c.dx(q) * p * q;
            }
        }
        let v = s / (n * n) as f64;
        assert!((v.re - 8.0 / 9.0).abs() < 1e-10, "{v}");
    }
}
