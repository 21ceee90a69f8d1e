//! Folding onto a window of consecutive wave functions, the differential
//! systems in x and y, their duality and the finite-n spectral curve.

use qd::Quad;

use crate::band::{potential_prime_of, BandOperator};
use crate::cd::{commutator_with_projector, CdMatrix};
use crate::error::{Error, Result};
use crate::linalg::{det, Mat};
use crate::model::ValidatedModel;
use crate::poly::{chebyshev_points, interpolate, Bivariate};
use crate::real::Real;

fn q(v: f64) -> Quad {
    Quad::from_f64(v)
}

/// Rows m_lo..=m_hi of the solution u of M u = rhs_low (u supported on m < n)
/// and M u = rhs_up (u supported on m >= n), for a banded M with the given
/// lower and upper bandwidths. Columns of u index a window of width w.
#[allow(clippy::too_many_arguments)]
fn fold_solve(
    m: &Mat<Quad>,
    lower: usize,
    upper: usize,
    n: usize,
    w: usize,
    rhs_low: &dyn Fn(usize, usize) -> Quad,
    rhs_up: &dyn Fn(usize, usize) -> Quad,
    m_lo: usize,
    m_hi: usize,
) -> Mat<Quad> {
    let s = m.rows();
    let lo_start = m_lo.min(n);
    let mut u = Mat::<Quad>::zeros(m_hi.max(n) + 1, w);
    // Back substitution for the part below n.
    if n > 0 {
        let mut i = n - 1 + lower;
        loop {
            let target = i - lower;
            if target < lo_start {
                break;
            }
            let piv = m[(i, target)];
            for slot in 0..w {
                let mut v = rhs_low(i, slot);
                for mp in target + 1..=(i + upper).min(n - 1) {
                    v -= m[(i, mp)] * u[(mp, slot)];
                }
                u[(target, slot)] = v / piv;
            }
            if target == 0 || i == lower {
                break;
            }
            i -= 1;
        }
    }
    // Forward substitution for the part at and above n.
    let mut i = n.saturating_sub(upper);
    while i + upper <= m_hi && i < s && i + upper < s {
        let target = i + upper;
        if target >= n {
            let piv = m[(i, target)];
            for slot in 0..w {
                let mut v = rhs_up(i, slot);
                for mp in n.max(i.saturating_sub(lower))..target {
                    v -= m[(i, mp)] * u[(mp, slot)];
                }
                u[(target, slot)] = v / piv;
            }
        }
        i += 1;
    }
    Mat::from_fn(m_hi - m_lo + 1, w, |r, c| u[(m_lo + r, c)])
}

fn shifted(op: &Mat<Quad>, x: Quad) -> Mat<Quad> {
    op.add_diag(-x)
}

fn check_window(op: &BandOperator, other_band: usize, n: usize) -> Result<()> {
    let d2 = op.lower;
    let s = op.size();
    if n <= d2.max(other_band) || n + d2 + other_band + 2 >= s {
        return Err(Error::TruncationTooSmall(format!(
            "window n={n} needs max(d1,d2) < n and n + d1 + d2 + 2 < {s}"
        )));
    }
    Ok(())
}

/// Rows m_lo..=m_hi of F_n(x), with psi_m = sum_j F_{m,j} psi_j over the
/// window j = n-d2..n, from the one-sided inverses of Q - x applied to A_n.
pub fn folding_matrix(q_op: &BandOperator, n: usize, x: Quad, m_lo: usize, m_hi: usize) -> Result<Mat<Quad>> {
    let d2 = q_op.lower;
    if n < d2 || m_hi + 1 >= q_op.size() {
        return Err(Error::TruncationTooSmall(format!("rows up to {m_hi} in size {}", q_op.size())));
    }
    let a = commutator_with_projector(q_op, n)?;
    let mx = shifted(&q_op.entries, x);
    let col0 = n - d2;
    let low = |i: usize, slot: usize| a.at(i, col0 + slot);
    let up = |i: usize, slot: usize| -a.at(i, col0 + slot);
    Ok(fold_solve(&mx, d2, 1, n, d2 + 1, &low, &up, m_lo, m_hi))
}

/// Rows m_lo..=m_hi of the folding of phi~_m onto the dual window
/// n-1..n+d2-1, from the one-sided inverses of Q^t - x applied to A_n^t.
pub fn dual_folding_matrix(q_op: &BandOperator, n: usize, x: Quad, m_lo: usize, m_hi: usize) -> Result<Mat<Quad>> {
    let d2 = q_op.lower;
    if n < d2.max(1) || m_hi + d2 >= q_op.size() {
        return Err(Error::TruncationTooSmall(format!("rows up to {m_hi} in size {}", q_op.size())));
    }
    let a = commutator_with_projector(q_op, n)?;
    let mx = shifted(&q_op.entries.transpose(), x);
    let low = |i: usize, slot: usize| -a.at(n - 1 + slot, i);
    let up = |i: usize, slot: usize| a.at(n - 1 + slot, i);
    Ok(fold_solve(&mx, 1, d2, n, d2 + 1, &low, &up, m_lo, m_hi))
}

/// Same rows of F_n(x) from the three-term recurrence run upward and downward.
pub fn folding_by_recursion(q_op: &BandOperator, n: usize, x: Quad, m_lo: usize, m_hi: usize) -> Mat<Quad> {
    let d2 = q_op.lower;
    let qm = &q_op.entries;
    let w = d2 + 1;
    let top = m_hi.max(n);
    let mut f = Mat::<Quad>::zeros(top + 1, w);
    for slot in 0..w {
        f[(n - d2 + slot, slot)] = Quad::from_f64(1.0);
    }
    for m in n + 1..=top {
        let g = qm[(m - 1, m)];
        for slot in 0..w {
            let mut v = x * f[(m - 1, slot)];
            for k in 0..=d2.min(m - 1) {
                v -= qm[(m - 1, m - 1 - k)] * f[(m - 1 - k, slot)];
            }
            f[(m, slot)] = v / g;
        }
    }
    let mut m = n - d2;
    while m > m_lo {
        m -= 1;
        let top_idx = m + d2;
        let piv = qm[(top_idx, m)];
        for slot in 0..w {
            let mut v = x * f[(top_idx, slot)] - qm[(top_idx, top_idx + 1)] * f[(top_idx + 1, slot)];
            for k in 0..d2 {
                v -= qm[(top_idx, top_idx - k)] * f[(top_idx - k, slot)];
            }
            f[(m, slot)] = v / piv;
        }
    }
    Mat::from_fn(m_hi - m_lo + 1, w, |r, c| f[(m_lo + r, c)])
}

/// D_{1,n}(x) as rows n-d2..n of P^t F_n(x).
pub fn d1_from_folding(q_op: &BandOperator, p_op: &BandOperator, n: usize, x: Quad) -> Result<Mat<Quad>> {
    let (d1, d2) = (p_op.lower, q_op.lower);
    let lo = n - d2 - 1;
    let f = folding_matrix(q_op, n, x, lo, n + d1)?;
    let pm = &p_op.entries;
    Ok(Mat::from_fn(d2 + 1, d2 + 1, |r, c| {
        let m = n - d2 + r;
        let mut v = Quad::ZERO;
        for k in m - 1..=m + d1 {
            v += pm[(k, m)] * f[(k - lo, c)];
        }
        v
    }))
}

/// D~_{1,n}(x) as rows n-1..n+d2-1 of P F~_n(x).
pub fn d1_dual_from_folding(q_op: &BandOperator, p_op: &BandOperator, n: usize, x: Quad) -> Result<Mat<Quad>> {
    let (d1, d2) = (p_op.lower, q_op.lower);
    let lo = n - 1 - d1;
    let f = dual_folding_matrix(q_op, n, x, lo, n + d2)?;
    let pm = &p_op.entries;
    Ok(Mat::from_fn(d2 + 1, d2 + 1, |r, c| {
        let m = n - 1 + r;
        let mut v = Quad::ZERO;
        for k in m - d1..=m + 1 {
            v += pm[(m, k)] * f[(k - lo, c)];
        }
        v
    }))
}

/// D_{1,n}(x) from the explicit three-term formula: an upper-triangular
/// block of V1'(Q), the companion part weighted by gamma, and the divided
/// difference (V1'(Q) - V1'(x))/(Q - x) applied to A_n.
pub fn d1_explicit(q_op: &BandOperator, model: &ValidatedModel, n: usize, x: Quad) -> Result<Mat<Quad>> {
    let d2 = q_op.lower;
    let qm = &q_op.entries;
    let s = qm.rows();
    let v1 = model.v1();
    let vq = potential_prime_of(qm, v1);
    let w = d2 + 1;
    let idx = |r: usize| n - d2 + r;
    let mut out = Mat::<Quad>::zeros(w, w);
    for r in 0..d2 {
        for c in r..d2 {
            out[(r, c)] = vq[(idx(r), idx(c))];
        }
    }
    out[(d2, d2)] = v1.deriv(x);
    // Companion part.
    let alpha = |k: usize, m: usize| qm[(m, m - k)];
    let gamma = |m: usize| qm[(m, m + 1)];
    let ad = alpha(d2, n - 1);
    let mut comp = Mat::<Quad>::zeros(w, w);
    for c in 0..d2 {
        let k = d2 - 1 - c;
        comp[(0, c)] = if k == 0 { (x - alpha(0, n - 1)) / ad } else { -alpha(k, n - 1) / ad };
    }
    comp[(0, d2)] = -gamma(n - 1) / ad;
    for r in 1..w {
        comp[(r, r - 1)] = Quad::from_f64(1.0);
    }
    for r in 0..w {
        let g = gamma(n - d2 - 1 + r);
        for c in 0..w {
            out[(r, c)] += g * comp[(r, c)];
        }
    }
    // Divided difference sum_{j<d1} Q^j sum_{k>j} g_{k+1} x^{k-1-j}.
    let coeffs: Vec<Quad> = v1.deriv_monomials().iter().map(|&g| q(g)).collect();
    let d1 = coeffs.len() - 1;
    let mut dd = Mat::<Quad>::zeros(s, s);
    let mut qpow = Mat::<Quad>::identity(s);
    for j in 0..d1 {
        let mut scal = Quad::ZERO;
        let mut xp = Quad::from_f64(1.0);
        for &ck in coeffs.iter().skip(j + 1) {
            scal += ck * xp;
            xp *= x;
        }
        dd = dd.add(&qpow.scale(scal));
        qpow = qpow.mul(qm);
    }
    let a = commutator_with_projector(q_op, n)?;
    for r in 0..w {
        for c in 0..w {
            let mut v = Quad::ZERO;
            for k in 0..w {
                v += dd[(idx(r), n - 1 + k)] * a.block[(k, c)];
            }
            out[(r, c)] -= v;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum SystemKind {
    D1,
    D1Dual,
    D2,
    D2Dual,
}

/// Square matrix polynomial in one variable, `coeffs[k]` multiplies t^k.
#[derive(Debug, Clone)]
pub struct DifferentialSystem {
    pub kind: SystemKind,
    pub n: usize,
    pub coeffs: Vec<Mat<Quad>>,
    /// Relative mismatch of the interpolant at held-out points.
    pub holdout_residual: f64,
}

impl DifferentialSystem {
    pub fn size(&self) -> usize {
        self.coeffs[0].rows()
    }

    pub fn eval(&self, t: Quad) -> Mat<Quad> {
        let mut acc = Mat::<Quad>::zeros(self.size(), self.size());
        for c in self.coeffs.iter().rev() {
            acc = acc.scale(t).add(c);
        }
        acc
    }

    pub fn eval_f64(&self, t: f64) -> Mat<f64> {
        self.eval(q(t)).to_f64()
    }

    pub fn trace(&self, t: f64) -> f64 {
        let m = self.eval(q(t));
        (0..self.size()).fold(Quad::ZERO, |a, i| a + m[(i, i)]).to_f64()
    }

    /// Largest coefficient of degree above `deg`, relative to the largest overall.
    pub fn excess_degree(&self, deg: usize) -> f64 {
        let all = self.coeffs.iter().fold(0.0f64, |m, c| m.max(c.max_abs()));
        let hi = self.coeffs.iter().skip(deg + 1).fold(0.0f64, |m, c| m.max(c.max_abs()));
        hi / all.max(f64::MIN_POSITIVE)
    }

    /// Max coefficient difference relative to the largest coefficient.
    pub fn max_rel_diff(&self, other: &DifferentialSystem) -> f64 {
        let mut diff: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for k in 0..self.coeffs.len().max(other.coeffs.len()) {
            let z = Mat::zeros(self.size(), self.size());
            let a = self.coeffs.get(k).unwrap_or(&z);
            let b = other.coeffs.get(k).unwrap_or(&z);
            diff = diff.max(a.sub(b).max_abs());
            scale = scale.max(a.max_abs()).max(b.max_abs());
        }
        diff / scale.max(f64::MIN_POSITIVE)
    }

    /// Leading-coefficient-scaled det(y Id - D(t)) as a bivariate table in (t, y).
    pub fn characteristic(&self, lead: f64, deg_t: usize, r: f64) -> Result<Bivariate> {
        let w = self.size();
        let f = |t: f64, y: f64| -> Result<f64> {
            let d = self.eval(q(t));
            let m = Mat::from_fn(w, w, |i, j| if i == j { q(y) - d[(i, j)] } else { -d[(i, j)] });
            Ok((q(lead) * det(&m)).to_f64())
        };
        Bivariate::interpolate(&f, deg_t, w, &chebyshev_points(deg_t + 1, r), &chebyshev_points(w + 1, r), (0.31 * r, -0.57 * r), 1e-9)
    }
}

/// Samples a matrix-valued function at deg+2 Chebyshev points, fits degree
/// deg+1 polynomials entrywise and checks a held-out point.
fn fit_system(kind: SystemKind, n: usize, deg: usize, r: f64, f: &dyn Fn(Quad) -> Result<Mat<Quad>>) -> Result<DifferentialSystem> {
    let pts: Vec<Quad> = chebyshev_points(deg + 2, r).into_iter().map(q).collect();
    let vals: Vec<Mat<Quad>> = pts.iter().map(|&t| f(t)).collect::<Result<_>>()?;
    let w = vals[0].rows();
    let mut coeffs = vec![Mat::<Quad>::zeros(w, w); deg + 2];
    for i in 0..w {
        for j in 0..w {
            let ys: Vec<Quad> = vals.iter().map(|m| m[(i, j)]).collect();
            let c = interpolate(&pts, &ys);
            for (k, ck) in c.into_iter().enumerate() {
                coeffs[k][(i, j)] = ck;
            }
        }
    }
    let sys = DifferentialSystem { kind, n, coeffs, holdout_residual: 0.0 };
    let mut worst: f64 = 0.0;
    for t in [0.123 * r, -0.77 * r] {
        let direct = f(q(t))?;
        let fitted = sys.eval(q(t));
        worst = worst.max(direct.sub(&fitted).max_abs() / direct.max_abs().max(1e-300));
    }
    if worst > 1e-8 {
        return Err(Error::InterpolationInconsistent(format!("held-out mismatch {worst:e}")));
    }
    Ok(DifferentialSystem { holdout_residual: worst, ..sys })
}

#[derive(Debug, Clone)]
pub struct D1Pair {
    pub folding: DifferentialSystem,
    pub explicit: DifferentialSystem,
    pub discrepancy: f64,
}

fn sample_radius(model: &ValidatedModel) -> f64 {
    model.r_bound.clamp(1.0, 3.0)
}

/// Both constructions of D_{1,n}; ConstructionsDisagree above 1e-6.
pub fn build_d1(q_op: &BandOperator, p_op: &BandOperator, model: &ValidatedModel, n: usize) -> Result<D1Pair> {
    check_window(q_op, p_op.lower, n)?;
    let r = sample_radius(model);
    let d1 = p_op.lower;
    let a = fit_system(SystemKind::D1, n, d1, r, &|x| d1_from_folding(q_op, p_op, n, x))?;
    let b = fit_system(SystemKind::D1, n, d1, r, &|x| d1_explicit(q_op, model, n, x))?;
    let discrepancy = a.max_rel_diff(&b);
    if discrepancy > 1e-6 {
        return Err(Error::ConstructionsDisagree(format!("D1 constructions differ by {discrepancy:e}")));
    }
    Ok(D1Pair { folding: a, explicit: b, discrepancy })
}

pub fn build_d1_dual(q_op: &BandOperator, p_op: &BandOperator, model: &ValidatedModel, n: usize) -> Result<DifferentialSystem> {
    check_window(q_op, p_op.lower, n)?;
    let r = sample_radius(model);
    fit_system(SystemKind::D1Dual, n, p_op.lower, r, &|x| d1_dual_from_folding(q_op, p_op, n, x))
}

/// max over xs of |A_n D1(x) - D~1(x)^t A_n| relative to |A_n| |D1(x)|.
pub fn duality_residual(d1: &DifferentialSystem, d1_dual: &DifferentialSystem, a: &CdMatrix, xs: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for &x in xs {
        let d = d1.eval(q(x));
        let dt = d1_dual.eval(q(x));
        let lhs = a.block.mul(&d);
        let rhs = dt.transpose().mul(&a.block);
        let scale = a.block.max_abs() * d.max_abs().max(dt.max_abs());
        worst = worst.max(lhs.sub(&rhs).max_abs() / scale.max(f64::MIN_POSITIVE));
    }
    worst
}

/// tr D~1(x) = V1'(x) - g~_{d2}/g~_{d2+1} + [d2 = 1] x/g~_2.
pub fn trace_formula(model: &ValidatedModel, x: f64) -> f64 {
    let v2 = model.v2();
    let d2 = model.d2;
    let mut t = model.v1().deriv(x) - v2.g(d2) / v2.g(d2 + 1);
    if d2 == 1 {
        t += x / v2.g(2);
    }
    t
}

/// Max over xs of |tr D~1(x) - trace_formula(x)| relative to max(1, |formula|).
pub fn trace_identity_residual(d1_dual: &DifferentialSystem, model: &ValidatedModel, xs: &[f64]) -> f64 {
    xs.iter()
        .map(|&x| {
            let f = trace_formula(model, x);
            (d1_dual.trace(x) - f).abs() / f.abs().max(1.0)
        })
        .fold(0.0, f64::max)
}

/// Propagates (T/N) Phi' = D~1 Phi from x0 with Phi(x0) = Id by RK4 and
/// returns the max deviation of ln det Phi(x) from (N/T) int_{x0}^x tr D~1,
/// the latter taken from the closed-form trace.
pub fn wronskian_residual(d1_dual: &DifferentialSystem, model: &ValidatedModel, x0: f64, x1: f64, steps: usize) -> f64 {
    let w = d1_dual.size();
    let c = model.coupling();
    let rhs = |x: f64, phi: &nalgebra::DMatrix<f64>| -> nalgebra::DMatrix<f64> {
        d1_dual.eval_f64(x).to_nalgebra() * phi * c
    };
    let mut phi = nalgebra::DMatrix::<f64>::identity(w, w);
    let h = (x1 - x0) / steps as f64;
    let v2 = model.v2();
    let ratio = v2.g(model.d2) / v2.g(model.d2 + 1);
    let extra = if model.d2 == 1 { 0.5 / v2.g(2) } else { 0.0 };
    let primitive = |x: f64| model.v1().value(x) - ratio * x + extra * x * x;
    let mut worst: f64 = 0.0;
    for k in 0..steps {
        let x = x0 + k as f64 * h;
        let k1 = rhs(x, &phi);
        let k2 = rhs(x + h / 2.0, &(&phi + &k1 * (h / 2.0)));
        let k3 = rhs(x + h / 2.0, &(&phi + &k2 * (h / 2.0)));
        let k4 = rhs(x + h, &(&phi + &k3 * h));
        phi += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        if (k + 1) % (steps / 10).max(1) == 0 {
            let xe = x + h;
            let expect = c * (primitive(xe) - primitive(x0));
            let got = phi.determinant().ln();
            worst = worst.max((got - expect).abs() / expect.abs().max(1.0));
        }
    }
    worst
}

#[derive(Debug, Clone)]
pub struct FourSystems {
    pub d1: D1Pair,
    pub d1_dual: DifferentialSystem,
    pub d2: D1Pair,
    pub d2_dual: DifferentialSystem,
    /// E_n(x, y) from each system, `coeffs[i][j]` on x^i y^j.
    pub curves: [Bivariate; 4],
    /// Max pairwise coefficient difference relative to the largest coefficient.
    pub curve_mismatch: f64,
}

fn transpose_table(b: &Bivariate) -> Bivariate {
    let (nx, ny) = (b.coeffs.len(), b.deg_y() + 1);
    Bivariate { coeffs: (0..ny).map(|j| (0..nx).map(|i| b.coeffs[i][j]).collect()).collect() }
}

/// All four systems at window n with their spectral curves. The y-side
/// systems come from the same code applied to (P, Q) and the swapped model.
pub fn spectral_curve_finite_n(q_op: &BandOperator, p_op: &BandOperator, model: &ValidatedModel, n: usize) -> Result<FourSystems> {
    let sw = model.swapped();
    let d1 = build_d1(q_op, p_op, model, n)?;
    let d1_dual = build_d1_dual(q_op, p_op, model, n)?;
    let d2 = build_d1(p_op, q_op, &sw, n)?;
    let d2_dual = build_d1_dual(p_op, q_op, &sw, n)?;
    let d2 = D1Pair {
        folding: DifferentialSystem { kind: SystemKind::D2, ..d2.folding },
        explicit: DifferentialSystem { kind: SystemKind::D2, ..d2.explicit },
        discrepancy: d2.discrepancy,
    };
    let d2_dual = DifferentialSystem { kind: SystemKind::D2Dual, ..d2_dual };
    let r = sample_radius(model);
    let (dx, dy) = (model.d1 + 1, model.d2 + 1);
    let g_lead = model.v1().leading();
    let gt_lead = model.v2().leading();
    let curves = [
        d1.folding.characteristic(gt_lead, dx, r)?,
        d1_dual.characteristic(gt_lead, dx, r)?,
        transpose_table(&d2.folding.characteristic(g_lead, dy, r)?),
        transpose_table(&d2_dual.characteristic(g_lead, dy, r)?),
    ];
    let scale = curves.iter().fold(0.0f64, |m, c| m.max(c.max_abs()));
    let mut mismatch: f64 = 0.0;
    for i in 0..4 {
        for j in i + 1..4 {
            mismatch = mismatch.max(curves[i].max_diff(&curves[j]) / scale);
        }
    }
    Ok(FourSystems { d1, d1_dual, d2, d2_dual, curves, curve_mismatch: mismatch })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::band::build_q_p;
    use crate::biortho::{build_family, BiorthogonalFamily};
    use crate::model::{validate_model, ModelSpec};
    use crate::real::Precision;

    fn setup(spec: ModelSpec, m: usize) -> (BiorthogonalFamily, BandOperator, BandOperator) {
        let f = build_family(&validate_model(&spec).unwrap(), m, Precision::Extended).unwrap();
        let (q, p) = build_q_p(&f).unwrap();
        (f, q, p)
    }

    #[test]
    fn folding_reproduces_wave_functions() {
        for spec in [ModelSpec::gaussian(4), ModelSpec::quartic_v2(0.1, 4)] {
            let (f, q_op, _) = setup(spec, 20);
            let n = 6;
            let d2 = q_op.lower;
            for x in [0.7, -1.3] {
                let xq = q(x);
                let lo = n - d2 - 3;
                let fm = folding_matrix(&q_op, n, xq, lo, n + 3).unwrap();
                let fr = folding_by_recursion(&q_op, n, xq, lo, n + 3);
                let window: Vec<Quad> = (n - d2..=n).map(|j| f.psi_q(j, xq)).collect();
                for r in 0..fm.rows() {
                    let m = lo + r;
                    let val = (0..=d2).fold(Quad::ZERO, |a, c| a + fm[(r, c)] * window[c]);
                    let direct = f.psi_q(m, xq);
                    let scale = window.iter().fold(0.0f64, |s, v| s.max(v.to_f64().abs()));
                    assert!((val - direct).to_f64().abs() < 1e-10 * scale, "m={m}");
                    for c in 0..=d2 {
                        let d = (fm[(r, c)] - fr[(r, c)]).to_f64().abs();
                        assert!(d < 1e-10 * fr[(r, c)].to_f64().abs().max(1.0), "m={m} c={c}");
                        if m >= n - d2 && m <= n {
                            let unit = if m - (n - d2) == c { 1.0 } else { 0.0 };
                            assert!((fm[(r, c)].to_f64() - unit).abs() < 1e-20);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn g0_folding_row_above_window() {
        let (_, q_op, _) = setup(ModelSpec::gaussian(4), 16);
        let n = 5;
        let x = q(0.7);
        let fm = folding_matrix(&q_op, n, x, n + 1, n + 1).unwrap();
        let g = q_op.entries[(n, n + 1)];
        let a1 = q_op.entries[(n, n - 1)];
        assert!((fm[(0, 1)] - (x - q_op.entries[(n, n)]) / g).to_f64().abs() < 1e-25);
        assert!((fm[(0, 0)] + a1 / g).to_f64().abs() < 1e-25);
    }

    #[test]
    fn dual_folding_reproduces_transforms() {
        let (f, q_op, _) = setup(ModelSpec::quartic_v2(0.1, 3), 20);
        let n = 6;
        let d2 = q_op.lower;
        let x = 0.4;
        let vals = f.phi_tilde_all(x, n + d2 + 4).unwrap();
        let fm = dual_folding_matrix(&q_op, n, q(x), n - 3, n + d2 + 2).unwrap();
        let scale = vals[n - 1..n + d2].iter().fold(0.0f64, |s, v| s.max(v.abs()));
        for r in 0..fm.rows() {
            let m = n - 3 + r;
            let v: f64 = (0..=d2).map(|c| fm[(r, c)].to_f64() * vals[n - 1 + c]).sum();
            assert!((v - vals[m]).abs() < 1e-9 * scale, "m={m}: {v} vs {}", vals[m]);
        }
    }

    #[test]
    fn g0_d1_closed_form() {
        let (f, q_op, p_op) = setup(ModelSpec::gaussian(4), 16);
        let n = 5;
        let pair = build_d1(&q_op, &p_op, &f.model, n).unwrap();
        let g = f.gamma(n - 1).to_f64();
        for x in [0.0, 0.8, -1.7] {
            let d = pair.folding.eval_f64(x);
            let expect = [[x / 2.0, 1.5 * g], [-3.0 * g, 2.0 * x]];
            for i in 0..2 {
                for j in 0..2 {
                    assert!((d[(i, j)] - expect[i][j]).abs() < 1e-12, "({i},{j}) at {x}");
                }
            }
        }
        assert!(pair.discrepancy < 1e-20);
        let four = spectral_curve_finite_n(&q_op, &p_op, &f.model, n).unwrap();
        // 2 det(y - D1) = 2y^2 - 5xy + 2x^2 + 9 gamma^2
        let e = &four.curves[0];
        assert!((e.coeffs[0][2] - 2.0).abs() < 1e-10);
        assert!((e.coeffs[1][1] + 5.0).abs() < 1e-10);
        assert!((e.coeffs[2][0] - 2.0).abs() < 1e-10);
        assert!((e.coeffs[0][0] - 9.0 * g * g).abs() < 1e-10);
        assert!(four.curve_mismatch < 1e-10);
    }

    #[test]
    fn quartic_systems_agree() {
        for spec in [ModelSpec::quartic_v1(0.1, 6), ModelSpec::quartic_v2(0.1, 6)] {
            let (f, q_op, p_op) = setup(spec, 24);
            let n = 8;
            let four = spectral_curve_finite_n(&q_op, &p_op, &f.model, n).unwrap();
            assert!(four.d1.discrepancy < 1e-12, "{}", four.d1.discrepancy);
            assert!(four.d2.discrepancy < 1e-12, "{}", four.d2.discrepancy);
            assert!(four.curve_mismatch < 1e-10, "{}", four.curve_mismatch);
            assert!(four.d1.folding.excess_degree(f.model.d1) < 1e-12);
            let a = commutator_with_projector(&q_op, n).unwrap();
            let xs: Vec<f64> = (0..10).map(|i| -1.8 + 0.4 * i as f64).chain([0.0]).collect();
            assert!(duality_residual(&four.d1.folding, &four.d1_dual, &a, &xs) < 1e-12);
            assert!(trace_identity_residual(&four.d1_dual, &f.model, &xs) < 1e-12);
        }
    }

    #[test]
    fn d1_generates_derivatives() {
        let (f, q_op, p_op) = setup(ModelSpec::quartic_v1(0.1, 5), 22);
        let n = 7;
        let pair = build_d1(&q_op, &p_op, &f.model, n).unwrap();
        let dual = build_d1_dual(&q_op, &p_op, &f.model, n).unwrap();
        let tn = f.model.t() / f.model.n() as f64;
        let d2 = q_op.lower;
        for x in [-1.1, 0.25, 0.9] {
            let xq = q(x);
            let d = pair.folding.eval(xq);
            for r in 0..=d2 {
                let lhs = -tn * f.psi_deriv_q(n - d2 + r, xq).to_f64();
                let rhs: f64 = (0..=d2).map(|c| d[(r, c)].to_f64() * f.psi(n - d2 + c, x)).sum();
                assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1e-3), "{lhs} vs {rhs}");
            }
            let (v, dv) = f.phi_tilde_with_deriv(x, n + d2).unwrap();
            let dd = dual.eval_f64(x);
            for r in 0..=d2 {
                let lhs = tn * dv[n - 1 + r];
                let rhs: f64 = (0..=d2).map(|c| dd[(r, c)] * v[n - 1 + c]).sum();
                assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1e-3), "{lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn wronskian_follows_trace() {
        let (f, q_op, p_op) = setup(ModelSpec::quartic_v2(0.1, 4), 20);
        let dual = build_d1_dual(&q_op, &p_op, &f.model, 6).unwrap();
        assert!(wronskian_residual(&dual, &f.model, -0.5, 0.8, 4000) < 1e-6);
    }

    #[test]
    fn window_bounds_checked() {
        let (f, q_op, p_op) = setup(ModelSpec::gaussian(2), 10);
        assert_eq!(build_d1(&q_op, &p_op, &f.model, 1).unwrap_err().code(), "TruncationTooSmall");
        assert_eq!(build_d1(&q_op, &p_op, &f.model, 8).unwrap_err().code(), "TruncationTooSmall");
    }
}
