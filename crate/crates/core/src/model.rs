//! Potentials, model specification and admissibility checks.
//!
//! Potentials use the convention V(x) = sum_k g_k x^k / k, so that
//! V'(x) = sum_k g_k x^(k-1). The constant term is always zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

/// Weight ratio below which the integrand is considered negligible.
pub const WEIGHT_FLOOR_LN: f64 = 30.0 * std::f64::consts::LN_10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Potential {
    /// g_1, ..., g_{d+1}
    pub coeffs: Vec<f64>,
}

impl Potential {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Potential { coeffs }
    }

    /// deg V = d+1.
    pub fn degree(&self) -> usize {
        self.coeffs.len()
    }

    /// d = deg V'.
    pub fn deg_prime(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    /// g_k for k >= 1; zero outside the stored range.
    pub fn g(&self, k: usize) -> f64 {
        if k == 0 || k > self.coeffs.len() {
            0.0
        } else {
            self.coeffs[k - 1]
        }
    }

    pub fn leading(&self) -> f64 {
        *self.coeffs.last().unwrap_or(&0.0)
    }

    pub fn value<R: Real>(&self, x: R) -> R {
        let mut acc = R::zero();
        for k in (1..=self.coeffs.len()).rev() {
            acc = (acc + R::from_f64(self.coeffs[k - 1]) / R::from_usize(k)) * x;
        }
        acc
    }

    pub fn deriv<R: Real>(&self, x: R) -> R {
        let mut acc = R::zero();
        for k in (1..=self.coeffs.len()).rev() {
            acc = acc * x + R::from_f64(self.coeffs[k - 1]);
        }
        acc
    }

    pub fn deriv2(&self, x: f64) -> f64 {
        let mut acc = 0.0;
        for k in (2..=self.coeffs.len()).rev() {
            acc = acc * x + self.coeffs[k - 1] * (k - 1) as f64;
        }
        acc
    }

    /// Monomial coefficients of V'(x): entry j multiplies x^j.
    pub fn deriv_monomials(&self) -> Vec<f64> {
        self.coeffs.clone()
    }

    /// Monomial coefficients of V(x): entry j multiplies x^j (entry 0 is zero).
    pub fn monomials(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.coeffs.len() + 1];
        for (i, g) in self.coeffs.iter().enumerate() {
            out[i + 1] = g / (i + 1) as f64;
        }
        out
    }

    pub fn from_monomials(m: &[f64]) -> Self {
        let coeffs = m.iter().enumerate().skip(1).map(|(k, c)| c * k as f64).collect();
        Potential { coeffs }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub v1: Potential,
    pub v2: Potential,
    #[serde(rename = "T")]
    pub t: f64,
    #[serde(rename = "N")]
    pub n: usize,
}

impl ModelSpec {
    pub fn new(v1: Vec<f64>, v2: Vec<f64>, t: f64, n: usize) -> Self {
        ModelSpec {
            v1: Potential::new(v1),
            v2: Potential::new(v2),
            t,
            n,
        }
    }

    /// V1 = x^2, V2 = y^2, T = 1.
    pub fn gaussian(n: usize) -> Self {
        ModelSpec::new(vec![0.0, 2.0], vec![0.0, 2.0], 1.0, n)
    }

    /// V1 = x^2 + t x^4 / 4, V2 = y^2, T = 1.
    pub fn quartic_v1(t: f64, n: usize) -> Self {
        ModelSpec::new(vec![0.0, 2.0, 0.0, t], vec![0.0, 2.0], 1.0, n)
    }

    /// V1 = x^2, V2 = y^2 + t y^4 / 4, T = 1.
    pub fn quartic_v2(t: f64, n: usize) -> Self {
        ModelSpec::new(vec![0.0, 2.0], vec![0.0, 2.0, 0.0, t], 1.0, n)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::ConfigInvalid(format!("model JSON: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn with_n(&self, n: usize) -> Self {
        ModelSpec { n, ..self.clone() }
    }

    pub fn with_t(&self, t: f64) -> Self {
        ModelSpec { t, ..self.clone() }
    }

    /// Exponent S(x,y) = V1(x) + V2(y) - xy.
    pub fn action<R: Real>(&self, x: R, y: R) -> R {
        self.v1.value(x) + self.v2.value(y) - x * y
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidatedModel {
    pub spec: ModelSpec,
    pub d1: usize,
    pub d2: usize,
    /// Weight at |x| = R (or |y| = R) is below 1e-30 of its maximum.
    pub r_bound: f64,
}

impl ValidatedModel {
    /// N/T, the coupling in front of the action.
    pub fn coupling(&self) -> f64 {
        self.spec.n as f64 / self.spec.t
    }

    pub fn v1(&self) -> &Potential {
        &self.spec.v1
    }

    pub fn v2(&self) -> &Potential {
        &self.spec.v2
    }

    pub fn n(&self) -> usize {
        self.spec.n
    }

    pub fn t(&self) -> f64 {
        self.spec.t
    }

    /// The model with the two matrices exchanged.
    pub fn swapped(&self) -> ValidatedModel {
        ValidatedModel {
            spec: ModelSpec {
                v1: self.spec.v2.clone(),
                v2: self.spec.v1.clone(),
                t: self.spec.t,
                n: self.spec.n,
            },
            d1: self.d2,
            d2: self.d1,
            r_bound: self.r_bound,
        }
    }
}

fn check_potential(p: &Potential, name: &str) -> Result<()> {
    if p.coeffs.is_empty() {
        return Err(Error::NonHermitianModel(format!("{name} is empty")));
    }
    if p.coeffs.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonHermitianModel(format!("{name} has non-finite coefficients")));
    }
    let lead = p.leading();
    if lead == 0.0 {
        return Err(Error::NonHermitianModel(format!("{name} has zero leading coefficient")));
    }
    if p.deg_prime() % 2 == 0 {
        return Err(Error::NonHermitianModel(format!(
            "deg {name}' = {} is even",
            p.deg_prime()
        )));
    }
    if lead < 0.0 {
        return Err(Error::NonHermitianModel(format!("{name} has negative leading coefficient")));
    }
    Ok(())
}

/// Minimum of `f` on [lo, hi] by a scan followed by golden-section refinement.
pub(crate) fn scan_min(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, samples: usize) -> (f64, f64) {
    let step = (hi - lo) / samples as f64;
    let mut best = (lo, f(lo));
    for i in 1..=samples {
        let t = lo + step * i as f64;
        let v = f(t);
        if v < best.1 {
            best = (t, v);
        }
    }
    let (mut a, mut b) = ((best.0 - step).max(lo), (best.0 + step).min(hi));
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..80 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    let t = 0.5 * (a + b);
    let v = f(t);
    if v < best.1 {
        (t, v)
    } else {
        best
    }
}

/// Distance from `center` at which `excess(t) = g(t) - g(center)` first
/// exceeds `threshold`, searched separately to the left and to the right.
pub(crate) fn decay_interval(g: &dyn Fn(f64) -> f64, center: f64, threshold: f64) -> Result<(f64, f64)> {
    let g0 = g(center);
    let find = |dir: f64| -> Result<f64> {
        let mut step = 0.25;
        let mut t = center;
        for _ in 0..400 {
            let next = t + dir * step;
            if g(next) - g0 >= threshold {
                let (mut a, mut b) = (t, next);
                for _ in 0..60 {
                    let m = 0.5 * (a + b);
                    if g(m) - g0 >= threshold {
                        b = m;
                    } else {
                        a = m;
                    }
                }
                return Ok(b);
            }
            t = next;
            step *= 1.25;
        }
        Err(Error::NonHermitianModel("weight does not decay".into()))
    };
    Ok((find(-1.0)?, find(1.0)?))
}

/// Profile of the action in one variable: min over the other variable.
fn profile(spec: &ModelSpec, along_x: bool, t: f64, span: f64) -> f64 {
    let f = |s: f64| {
        if along_x {
            spec.action(t, s)
        } else {
            spec.action(s, t)
        }
    };
    let guess_span = span.max(4.0 * (1.0 + t.abs()));
    scan_min(&f, -guess_span, guess_span, 400).1
}

/// Validates the model for the real-line contour and computes the
/// integration bound R.
pub fn validate_model(spec: &ModelSpec) -> Result<ValidatedModel> {
    check_potential(&spec.v1, "V1")?;
    check_potential(&spec.v2, "V2")?;
    if !(spec.t > 0.0 && spec.t.is_finite()) {
        return Err(Error::NonHermitianModel(format!("temperature must be positive, got {}", spec.t)));
    }
    if spec.n == 0 {
        return Err(Error::NonHermitianModel("N must be positive".into()));
    }
    let d1 = spec.v1.deg_prime();
    let d2 = spec.v2.deg_prime();
    if d1 == 1 && d2 == 1 {
        let (g2, tg2) = (spec.v1.g(2), spec.v2.g(2));
        if !(g2 > 0.0 && g2 * tg2 > 1.0) {
            return Err(Error::NonHermitianModel(format!(
                "quadratic form is not positive definite (g2 * g~2 = {})",
                g2 * tg2
            )));
        }
    }
    // Coarse-grid minimum must sit strictly inside the grid.
    let l = 6.0;
    let m = 60;
    let mut best = (f64::INFINITY, 0usize, 0usize);
    for i in 0..=m {
        for j in 0..=m {
            let x = -l + 2.0 * l * i as f64 / m as f64;
            let y = -l + 2.0 * l * j as f64 / m as f64;
            let s = spec.action(x, y);
            if s < best.0 {
                best = (s, i, j);
            }
        }
    }
    if !best.0.is_finite() || best.1 == 0 || best.1 == m || best.2 == 0 || best.2 == m {
        return Err(Error::NonHermitianModel("action is not bounded below on the real plane".into()));
    }
    let c = spec.n as f64 / spec.t;
    let threshold = WEIGHT_FLOOR_LN / c;
    let mut r: f64 = 0.0;
    for along_x in [true, false] {
        let g = |t: f64| profile(spec, along_x, t, l);
        let (center, _) = scan_min(&g, -l, l, 120);
        let (lo, hi) = decay_interval(&g, center, threshold)?;
        r = r.max(lo.abs()).max(hi.abs());
    }
    Ok(ValidatedModel {
        spec: spec.clone(),
        d1,
        d2,
        r_bound: r,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_accepted() {
        let m = validate_model(&ModelSpec::new(vec![0.0, 2.0], vec![0.0, 2.0], 1.0, 4)).unwrap();
        assert_eq!((m.d1, m.d2), (1, 1));
    }

    #[test]
    fn degenerate_quadratic_rejected() {
        let e = validate_model(&ModelSpec::new(vec![0.0, 1.0], vec![0.0, 1.0], 1.0, 4)).unwrap_err();
        assert_eq!(e.code(), "NonHermitianModel");
    }

    #[test]
    fn quartic_accepted() {
        let m = validate_model(&ModelSpec::quartic_v1(0.1, 8)).unwrap();
        assert_eq!((m.d1, m.d2), (3, 1));
        assert!((m.spec.v1.value(2.0f64) - (4.0 + 16.0 / 40.0)).abs() < 1e-14);
    }

    #[test]
    fn even_derivative_degree_rejected() {
        let e = validate_model(&ModelSpec::new(vec![0.0, 2.0, 1.0], vec![0.0, 2.0], 1.0, 1)).unwrap_err();
        assert_eq!(e.code(), "NonHermitianModel");
        let e = validate_model(&ModelSpec::new(vec![0.0, 2.0, 0.0, -1.0], vec![0.0, 2.0], 1.0, 1)).unwrap_err();
        assert_eq!(e.code(), "NonHermitianModel");
    }

    #[test]
    fn bound_has_tiny_weight() {
        for spec in [ModelSpec::gaussian(1), ModelSpec::gaussian(8), ModelSpec::quartic_v1(0.1, 8)] {
            let m = validate_model(&spec).unwrap();
            let c = m.coupling();
            // Weight of the x-marginal envelope at R, relative to its maximum.
            let env = |x: f64| scan_min(&|y| spec.action(x, y), -20.0, 20.0, 2000).1;
            let ratio = (-c * (env(m.r_bound) - env(0.0))).exp();
            assert!(ratio <= 1.0001e-30, "ratio {ratio}");
            // Validation is idempotent.
            assert_eq!(validate_model(&m.spec).unwrap(), m);
        }
    }

    #[test]
    fn json_roundtrip() {
        let s = ModelSpec::quartic_v1(0.025, 12);
        let text = s.to_json();
        assert!(text.contains("\"T\"") && text.contains("\"N\""));
        assert_eq!(ModelSpec::from_json(&text).unwrap(), s);
        assert_eq!(ModelSpec::from_json("{\"v1\":[0,2]}").unwrap_err().code(), "ConfigInvalid");
    }

    #[test]
    fn potential_monomials_roundtrip() {
        let p = Potential::new(vec![0.5, 2.0, 0.0, 0.3]);
        assert_eq!(Potential::from_monomials(&p.monomials()), p);
        assert!((p.deriv(1.5f64) - (0.5 + 3.0 + 0.3 * 3.375)).abs() < 1e-14);
        assert!((p.deriv2(1.5) - (2.0 + 0.9 * 2.25)).abs() < 1e-14);
    }
}
