//! Unitary-group integrals: Haar sampling, the HCIZ determinant, the
//! Morozov two-resolvent formula, and the finite-N mixed resolvent built
//! from the band operators.

use nalgebra::{Complex, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::band::BandOperator;
use crate::error::{Error, Result};
use crate::model::ValidatedModel;
use crate::poly::C64;
use crate::quadrature::rule_on;

pub const MAX_HAAR_N: usize = 6;
const VANDERMONDE_FLOOR: f64 = 1e-8;

fn haar_from_rng(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<C64> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let z = DMatrix::<C64>::from_fn(n, n, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex::new(re * s, im * s)
    });
    let qr = z.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..n {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { Complex::new(1.0, 0.0) };
        for i in 0..n {
            q[(i, j)] *= phase;
        }
    }
    q
}

/// Haar-distributed unitary of size n <= 6, deterministic per seed.
pub fn haar_sample(n: usize, seed: u64) -> Result<DMatrix<C64>> {
    if n == 0 || n > MAX_HAAR_N {
        return Err(Error::ConfigInvalid(format!("haar sampling supports 1 <= N <= {MAX_HAAR_N}, got {n}")));
    }
    Ok(haar_from_rng(n, &mut ChaCha8Rng::seed_from_u64(seed)))
}

/// `count` Haar samples from one seeded stream, reduced to |U_ij|^2.
fn haar_moduli(n: usize, count: usize, seed: u64) -> Result<impl Iterator<Item = DMatrix<f64>>> {
    if n == 0 || n > MAX_HAAR_N {
        return Err(Error::ConfigInvalid(format!("haar sampling supports 1 <= N <= {MAX_HAAR_N}, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count).map(move |_| haar_from_rng(n, &mut rng).map(|u| u.norm_sqr())))
}

/// Spectra of A = diag(a) and B = diag(b).
#[derive(Debug, Clone, Serialize)]
pub struct DiagonalPair {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

fn vandermonde(v: &[f64]) -> f64 {
    let mut p = 1.0;
    for j in 0..v.len() {
        for i in 0..j {
            p *= v[j] - v[i];
        }
    }
    p
}

impl DiagonalPair {
    pub fn new(a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if a.len() != b.len() || a.is_empty() {
            return Err(Error::ConfigInvalid("spectra must be nonempty and of equal length".into()));
        }
        Ok(DiagonalPair { a, b })
    }

    pub fn n(&self) -> usize {
        self.a.len()
    }

    pub fn e_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n(), self.n(), |i, j| (self.a[i] * self.b[j]).exp())
    }

    /// sum_ij a_i b_j |U_ij|^2 = tr A U B U^dagger.
    fn exponent(&self, moduli: &DMatrix<f64>) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n() {
            for j in 0..self.n() {
                s += self.a[i] * self.b[j] * moduli[(i, j)];
            }
        }
        s
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct HcizReport {
    /// det(e^{a_i b_j}) / (Delta(a) Delta(b)), Delta(v) = prod_{i<j} (v_j - v_i).
    pub formula: f64,
    pub mc_mean: f64,
    pub mc_err: f64,
    /// mc_mean / formula, the empirical normalization constant.
    pub ratio: f64,
    pub ratio_err: f64,
}

pub fn hciz_determinant(pair: &DiagonalPair) -> Result<f64> {
    let vdm = vandermonde(&pair.a) * vandermonde(&pair.b);
    if vdm.abs() < VANDERMONDE_FLOOR {
        return Err(Error::NearDegenerateSpectrum(format!("Vandermonde product {vdm:e}")));
    }
    Ok(pair.e_matrix().determinant() / vdm)
}

/// Haar average of exp(tr A U B U^dagger) with its standard error.
pub fn hciz_monte_carlo(pair: &DiagonalPair, samples: usize, seed: u64) -> Result<(f64, f64)> {
    let (mut s1, mut s2) = (0.0, 0.0);
    for m in haar_moduli(pair.n(), samples, seed)? {
        let w = pair.exponent(&m).exp();
        s1 += w;
        s2 += w * w;
    }
    let mean = s1 / samples as f64;
    let var = (s2 / samples as f64 - mean * mean).max(0.0);
    Ok((mean, (var / samples as f64).sqrt()))
}

pub fn hciz_value(pair: &DiagonalPair, samples: usize, seed: u64) -> Result<HcizReport> {
    let formula = hciz_determinant(pair)?;
    let (mc_mean, mc_err) = hciz_monte_carlo(pair, samples, seed)?;
    Ok(HcizReport {
        formula,
        mc_mean,
        mc_err,
        ratio: mc_mean / formula,
        ratio_err: mc_err / formula.abs(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MorozovReport {
    pub formula: f64,
    pub mc_mean: f64,
    pub mc_err: f64,
}

/// 1 - det(1 - (x-A)^{-1} E (y-B)^{-1} E^{-1}).
pub fn morozov_formula(pair: &DiagonalPair, x: f64, y: f64) -> Result<f64> {
    let n = pair.n();
    let scale_a = pair.a.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let scale_b = pair.b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    if pair.a.iter().any(|&a| (x - a).abs() < 1e-12 * scale_a) || pair.b.iter().any(|&b| (y - b).abs() < 1e-12 * scale_b) {
        return Err(Error::SingularShift(format!("x={x} or y={y} hits the spectrum")));
    }
    let e = pair.e_matrix();
    let einv = e.clone().try_inverse().ok_or_else(|| Error::NearDegenerateSpectrum("E is singular".into()))?;
    let ra = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 / (x - pair.a[i]) } else { 0.0 });
    let rb = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 / (y - pair.b[i]) } else { 0.0 });
    let m = DMatrix::<f64>::identity(n, n) - ra * &e * rb * einv;
    Ok(1.0 - m.determinant())
}

/// Self-normalized Haar estimate of <tr (x-A)^{-1} U (y-B)^{-1} U^dagger>
/// under the weight exp(tr A U B U^dagger), with a delta-method error.
pub fn morozov_monte_carlo(pair: &DiagonalPair, x: f64, y: f64, samples: usize, seed: u64) -> Result<(f64, f64)> {
    let n = pair.n();
    let mut ws = Vec::with_capacity(samples);
    let mut fs = Vec::with_capacity(samples);
    for m in haar_moduli(n, samples, seed)? {
        let mut f = 0.0;
        for i in 0..n {
            for j in 0..n {
                f += m[(i, j)] / ((x - pair.a[i]) * (y - pair.b[j]));
            }
        }
        ws.push(pair.exponent(&m).exp());
        fs.push(f);
    }
    let sw: f64 = ws.iter().sum();
    let mean = ws.iter().zip(&fs).map(|(w, f)| w * f).sum::<f64>() / sw;
    let var: f64 = ws.iter().zip(&fs).map(|(w, f)| (w * (f - mean)).powi(2)).sum::<f64>() / (sw * sw);
    Ok((mean, var.sqrt()))
}

pub fn morozov_generating(pair: &DiagonalPair, x: f64, y: f64, samples: usize, seed: u64) -> Result<MorozovReport> {
    let formula = morozov_formula(pair, x, y)?;
    let (mc_mean, mc_err) = morozov_monte_carlo(pair, x, y, samples, seed)?;
    Ok(MorozovReport { formula, mc_mean, mc_err })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MixedResolvent {
    pub value: C64,
    pub coarse: C64,
    pub difference: f64,
    pub m_trunc: usize,
    pub m_coarse: usize,
}

fn mixed_at(q: &BandOperator, p: &BandOperator, n: usize, t: f64, x: C64, y: C64, m: usize) -> Result<C64> {
    let qm = DMatrix::<C64>::from_fn(m, m, |i, j| {
        let d = if i == j { x } else { C64::new(0.0, 0.0) };
        d - C64::new(q.get(i, j), 0.0)
    });
    let pm = DMatrix::<C64>::from_fn(m, m, |i, j| {
        let d = if i == j { y } else { C64::new(0.0, 0.0) };
        d - C64::new(p.get(j, i), 0.0)
    });
    let singular = || Error::SingularShift(format!("x={x} or y={y} in the truncated spectrum"));
    let rx = qm.try_inverse().ok_or_else(singular)?;
    let ry = pm.try_inverse().ok_or_else(singular)?;
    let k = (rx * ry).view((0, 0), (n, n)).into_owned() * C64::new(t / n as f64, 0.0);
    let v = C64::new(1.0, 0.0) - (DMatrix::<C64>::identity(n, n) - k).determinant();
    if !v.re.is_finite() || !v.im.is_finite() {
        return Err(singular());
    }
    Ok(v)
}

/// (T/N) <tr (x-M1)^{-1} (y-M2)^{-1}> as
/// 1 - det(Id_N - (T/N) Pi_{N-1} (x-Q)^{-1} (y-P^t)^{-1} Pi_{N-1}) on the
/// leading m_trunc block, compared with the block d1+d2 smaller.
pub fn mixed_resolvent_finite(q: &BandOperator, p: &BandOperator, n: usize, t: f64, x: C64, y: C64, m_trunc: usize) -> Result<MixedResolvent> {
    let d = q.lower + p.lower;
    if m_trunc < n + 3 * d || m_trunc > q.size() {
        return Err(Error::TruncationTooSmall(format!(
            "m_trunc={m_trunc} must lie in [{}, {}]",
            n + 3 * d,
            q.size()
        )));
    }
    let m_coarse = m_trunc - d;
    let value = mixed_at(q, p, n, t, x, y, m_trunc)?;
    let coarse = mixed_at(q, p, n, t, x, y, m_coarse)?;
    let difference = (value - coarse).norm();
    if difference > 1e-6 {
        return Err(Error::TruncationNotConverged(format!(
            "truncations {m_coarse} and {m_trunc} differ by {difference:e}"
        )));
    }
    Ok(MixedResolvent { value, coarse, difference, m_trunc, m_coarse })
}

/// <(x-M1)^{-1}(y-M2)^{-1}> at N = 1 by tensor Gauss-Legendre on the weight
/// support, for x and y off the real axis.
pub fn mixed_resolvent_oracle_n1(model: &ValidatedModel, x: C64, y: C64) -> Result<C64> {
    if model.n() != 1 {
        return Err(Error::OracleTooLarge(format!("oracle needs N = 1, got {}", model.n())));
    }
    if x.im.abs() < 0.5 || y.im.abs() < 0.5 {
        return Err(Error::SingularShift("oracle needs |Im x|, |Im y| >= 0.5".into()));
    }
    let r = model.r_bound;
    let panels = 16;
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    for k in 0..panels {
        let lo = -r + 2.0 * r * k as f64 / panels as f64;
        let (t, w) = rule_on::<f64>(lo, lo + 2.0 * r / panels as f64, 32);
        nodes.extend(t);
        weights.extend(w);
    }
    let c = model.coupling();
    let (mut num, mut den) = (C64::new(0.0, 0.0), 0.0);
    for (i, &s) in nodes.iter().enumerate() {
        for (j, &t) in nodes.iter().enumerate() {
            let w = weights[i] * weights[j] * (-c * model.spec.action(s, t)).exp();
            den += w;
            num += w / ((x - s) * (y - t));
        }
    }
    Ok(num / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::band::build_q_p;
    use crate::biortho::build_family;
    use crate::model::{validate_model, ModelSpec};
    use crate::real::Precision;

    #[test]
    fn haar_is_unitary_and_seeded() {
        for n in 1..=MAX_HAAR_N {
            let u = haar_sample(n, 5).unwrap();
            let g = u.adjoint() * &u;
            assert!((g - DMatrix::<C64>::identity(n, n)).norm() < 1e-12);
        }
        assert_eq!(haar_sample(3, 9).unwrap(), haar_sample(3, 9).unwrap());
        assert!(haar_sample(7, 1).is_err());
    }

    #[test]
    fn haar_second_moment() {
        let n = 3;
        let count = 100_000;
        let vals: Vec<f64> = haar_moduli(n, count, 21).unwrap().map(|m| m[(0, 0)]).collect();
        let mean = vals.iter().sum::<f64>() / count as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / count as f64;
        let sigma = (var / count as f64).sqrt();
        assert!((mean - 1.0 / n as f64).abs() < 3.0 * sigma, "{mean}");
    }

    #[test]
    fn haar_left_invariance() {
        // Kolmogorov-Smirnov distance between |U_00|^2 and |(V U)_00|^2.
        let n = 2;
        let count = 20_000;
        let v = haar_sample(n, 999).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut plain: Vec<f64> = (0..count).map(|_| haar_from_rng(n, &mut rng)[(0, 0)].norm_sqr()).collect();
        let mut rotated: Vec<f64> = (0..count).map(|_| (&v * haar_from_rng(n, &mut rng))[(0, 0)].norm_sqr()).collect();
        plain.sort_by(f64::total_cmp);
        rotated.sort_by(f64::total_cmp);
        let mut ks: f64 = 0.0;
        let (mut i, mut j) = (0, 0);
        while i < count && j < count {
            if plain[i] <= rotated[j] {
                i += 1;
            } else {
                j += 1;
            }
            ks = ks.max((i as f64 - j as f64).abs() / count as f64);
        }
        // 1% critical value for two samples of this size.
        assert!(ks < 1.63 * (2.0 / count as f64).sqrt(), "{ks}");
    }

    #[test]
    fn hciz_zero_and_symmetry() {
        let zero = DiagonalPair::new(vec![0.0, 0.0], vec![1.0, -1.0]).unwrap();
        let (mean, err) = hciz_monte_carlo(&zero, 1000, 1).unwrap();
        assert_eq!((mean, err), (1.0, 0.0));
        assert_eq!(hciz_determinant(&zero).unwrap_err().code(), "NearDegenerateSpectrum");
        let p = DiagonalPair::new(vec![-0.4, 0.3, 1.0], vec![-0.9, 0.2, 0.5]).unwrap();
        let t = 1.7;
        let ta = DiagonalPair::new(p.a.iter().map(|v| v * t).collect(), p.b.clone()).unwrap();
        let tb = DiagonalPair::new(p.a.clone(), p.b.iter().map(|v| v * t).collect()).unwrap();
        let (fa, fb) = (hciz_determinant(&ta).unwrap(), hciz_determinant(&tb).unwrap());
        assert!((fa - fb).abs() < 1e-12 * fa.abs());
    }

    #[test]
    fn hciz_constant_is_pair_independent() {
        let pairs = [
            (vec![-1.0, 1.0], vec![-1.0, 1.0]),
            (vec![-0.5, 0.8], vec![-0.3, 1.1]),
            (vec![0.0, 1.2], vec![-0.7, 0.4]),
        ];
        let reports: Vec<HcizReport> = pairs
            .iter()
            .enumerate()
            .map(|(i, (a, b))| hciz_value(&DiagonalPair::new(a.clone(), b.clone()).unwrap(), 200_000, 40 + i as u64).unwrap())
            .collect();
        for r in &reports[1..] {
            let z = (r.ratio - reports[0].ratio) / (r.ratio_err.hypot(reports[0].ratio_err));
            assert!(z.abs() < 4.0, "{r:?} vs {:?}", reports[0]);
        }
    }

    #[test]
    fn morozov_limits() {
        let p1 = DiagonalPair::new(vec![0.4], vec![-0.2]).unwrap();
        let v = morozov_formula(&p1, 2.0, 3.0).unwrap();
        assert!((v - 1.0 / (1.6 * 3.2)).abs() < 1e-14);
        let (mc, _) = morozov_monte_carlo(&p1, 2.0, 3.0, 100, 1).unwrap();
        assert!((mc - v).abs() < 1e-14);
        let p = DiagonalPair::new(vec![1.0, -1.0], vec![1.0, -1.0]).unwrap();
        let y = 4.0;
        let lead: f64 = p.b.iter().map(|b| 1.0 / (y - b)).sum();
        let big = 1e6;
        assert!((big * morozov_formula(&p, big, y).unwrap() - lead).abs() < 1e-5);
        assert_eq!(morozov_formula(&p, 1.0, y).unwrap_err().code(), "SingularShift");
    }

    #[test]
    fn morozov_matches_monte_carlo() {
        let p = DiagonalPair::new(vec![1.0, -1.0], vec![1.0, -1.0]).unwrap();
        let r = morozov_generating(&p, 3.0, 4.0, 200_000, 17).unwrap();
        assert!((r.mc_mean - r.formula).abs() < 3.0 * r.mc_err, "{r:?}");
    }

    fn operators(spec: ModelSpec, m: usize) -> (BandOperator, BandOperator) {
        let f = build_family(&validate_model(&spec).unwrap(), m, Precision::Extended).unwrap();
        build_q_p(&f).unwrap()
    }

    #[test]
    fn mixed_resolvent_n1_oracle() {
        let model = validate_model(&ModelSpec::gaussian(1)).unwrap();
        let (q, p) = operators(ModelSpec::gaussian(1), 44);
        for (x, y) in [(C64::new(0.0, 3.0), C64::new(0.0, 3.0)), (C64::new(2.0, 2.0), C64::new(-1.0, 3.0))] {
            let got = mixed_resolvent_finite(&q, &p, 1, 1.0, x, y, 42).unwrap();
            let want = mixed_resolvent_oracle_n1(&model, x, y).unwrap();
            assert!((got.value - want).norm() < 1e-5, "{} vs {want}", got.value);
        }
    }

    #[test]
    fn mixed_resolvent_leading_term_and_swap() {
        let spec = ModelSpec::quartic_v1(0.05, 4);
        let (q, p) = operators(spec.clone(), 30);
        let big = C64::new(0.0, 400.0);
        let v = mixed_resolvent_finite(&q, &p, 4, 1.0, big, big * 1.5, 28).unwrap();
        let lead = 1.0 / (big * big * 1.5);
        assert!((v.value / lead - 1.0).norm() < 1e-2);
        let sw = validate_model(&spec).unwrap().swapped().spec;
        let (qs, ps) = operators(sw, 30);
        let (x, y) = (C64::new(1.0, 2.5), C64::new(-0.5, 2.0));
        let a = mixed_resolvent_finite(&q, &p, 4, 1.0, x, y, 28).unwrap();
        let b = mixed_resolvent_finite(&qs, &ps, 4, 1.0, y, x, 28).unwrap();
        assert!((a.value - b.value).norm() < 1e-6);
        assert_eq!(mixed_resolvent_finite(&q, &p, 4, 1.0, x, y, 10).unwrap_err().code(), "TruncationTooSmall");
    }

    #[test]
    fn mixed_resolvent_approaches_large_n() {
        let spec = ModelSpec::gaussian(1);
        let c = crate::curve::solve_genus0_curve(&validate_model(&spec).unwrap()).unwrap();
        let (x, y) = (C64::new(2.0, 1.0), C64::new(1.5, -1.0));
        let lim = c.mixed_resolvent_large_n(x, y).unwrap();
        let devs: Vec<f64> = [4usize, 8]
            .iter()
            .map(|&n| {
                let (q, p) = operators(spec.with_n(n), n + 24);
                (mixed_resolvent_finite(&q, &p, n, 1.0, x, y, n + 22).unwrap().value - lim).norm()
            })
            .collect();
        let ratio = devs[0] / devs[1];
        assert!((3.0..5.0).contains(&ratio), "{devs:?}");
    }
}
