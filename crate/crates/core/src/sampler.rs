//! Metropolis chain on ordered eigenvalue configurations of the two-matrix
//! model, used as a Monte-Carlo oracle for one-point densities.

use qd::Quad;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{det, Mat};
use crate::model::ValidatedModel;
use crate::real::Real;

pub const MAX_SAMPLER_N: usize = 8;
const TARGET_ACCEPTANCE: f64 = 0.35;

#[derive(Debug, Clone, Serialize)]
pub struct SamplerDiagnostics {
    pub proposals: usize,
    pub burn_in: usize,
    pub acceptance: f64,
    pub step_x: f64,
    pub step_y: f64,
    pub sweeps_recorded: usize,
}

#[derive(Debug, Clone)]
pub struct SamplerOutput {
    /// One configuration per sweep: x_1 < ... < x_N then y_1 < ... < y_N.
    pub samples: Vec<Vec<f64>>,
    pub diagnostics: SamplerDiagnostics,
}

struct Chain<'a> {
    model: &'a ValidatedModel,
    n: usize,
    state: Vec<f64>,
    log_p: f64,
}

impl<'a> Chain<'a> {
    fn log_density(&self, s: &[f64]) -> f64 {
        let n = self.n;
        let c = self.model.coupling();
        let (xs, ys) = s.split_at(n);
        let mut lp = 0.0;
        for v in [xs, ys] {
            for j in 0..n {
                for i in 0..j {
                    let d = v[j] - v[i];
                    if d <= 0.0 {
                        return f64::NEG_INFINITY;
                    }
                    lp += d.ln();
                }
            }
        }
        for i in 0..n {
            lp -= c * (self.model.v1().value(xs[i]) + self.model.v2().value(ys[i]));
        }
        // Rows scaled by e^{-c x_i y_max} to keep entries bounded.
        let ymax = ys[n - 1];
        let e = Mat::<Quad>::from_fn(n, n, |i, j| (Quad::from_f64(c * xs[i]) * Quad::from_f64(ys[j] - ymax)).exp());
        let de = det(&e);
        if de.to_f64() <= 0.0 {
            return f64::NEG_INFINITY;
        }
        lp + de.ln().to_f64() + c * ymax * xs.iter().sum::<f64>()
    }
}

/// Runs `steps` single-coordinate proposals after an adaptive burn-in and
/// records the configuration after every sweep of 2N proposals.
pub fn metropolis_sampler(model: &ValidatedModel, steps: usize, seed: u64) -> Result<SamplerOutput> {
    let n = model.n();
    if n > MAX_SAMPLER_N {
        return Err(Error::ConfigInvalid(format!("sampler supports N <= {MAX_SAMPLER_N}, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spread = (1.0 / model.coupling()).sqrt().max(0.3 / n as f64);
    let mut state = vec![0.0; 2 * n];
    for i in 0..n {
        let t = (i as f64 + 0.5) / n as f64 - 0.5;
        state[i] = 2.0 * t * spread * (n as f64).sqrt();
        state[n + i] = state[i];
    }
    let mut chain = Chain { model, n, log_p: 0.0, state };
    chain.log_p = chain.log_density(&chain.state);
    let mut step = [spread, spread];
    let burn_in = (steps / 10).max(20_000);
    let sweep = 2 * n;
    let mut accepted = [0usize; 2];
    let mut tried = [0usize; 2];
    let mut samples = Vec::with_capacity(steps / sweep + 1);
    let mut total_acc = 0usize;
    let mut scratch = chain.state.clone();
    for it in 0..burn_in + steps {
        let k = rng.random_range(0..sweep);
        let side = (k >= n) as usize;
        let z: f64 = rng.sample(StandardNormal);
        scratch.copy_from_slice(&chain.state);
        scratch[k] += step[side] * z;
        let lp = chain.log_density(&scratch);
        let u: f64 = rng.random();
        let accept = lp.is_finite() && u.ln() < lp - chain.log_p;
        if accept {
            chain.state.copy_from_slice(&scratch);
            chain.log_p = lp;
        }
        if it < burn_in {
            tried[side] += 1;
            accepted[side] += accept as usize;
            if tried[side] == 200 {
                let rate = accepted[side] as f64 / 200.0;
                step[side] *= (2.0 * (rate - TARGET_ACCEPTANCE)).exp();
                tried[side] = 0;
                accepted[side] = 0;
            }
        } else {
            total_acc += accept as usize;
            if (it - burn_in + 1) % sweep == 0 {
                samples.push(chain.state.clone());
            }
        }
    }
    let acceptance = total_acc as f64 / steps.max(1) as f64;
    if !(0.1..=0.7).contains(&acceptance) {
        return Err(Error::ChainNotMixed(format!("acceptance {acceptance:.3}")));
    }
    Ok(SamplerOutput {
        diagnostics: SamplerDiagnostics {
            proposals: steps,
            burn_in,
            acceptance,
            step_x: step[0],
            step_y: step[1],
            sweeps_recorded: samples.len(),
        },
        samples,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub density: Vec<f64>,
    /// Standard error from batch means.
    pub sigma: Vec<f64>,
}

/// Density of the x (side 0) or y (side 1) eigenvalues per unit length,
/// normalized so that it integrates to the fraction of mass inside the edges.
pub fn histogram(out: &SamplerOutput, n: usize, side: usize, edges: &[f64], batches: usize) -> Histogram {
    let bins = edges.len() - 1;
    let per = out.samples.len() / batches;
    let mut batch_density = vec![vec![0.0; bins]; batches];
    for (b, bd) in batch_density.iter_mut().enumerate() {
        for s in &out.samples[b * per..(b + 1) * per] {
            for &v in &s[side * n..(side + 1) * n] {
                if v < edges[0] || v >= edges[bins] {
                    continue;
                }
                let idx = edges.partition_point(|&e| e <= v) - 1;
                bd[idx] += 1.0;
            }
        }
        for (i, v) in bd.iter_mut().enumerate() {
            *v /= (per * n) as f64 * (edges[i + 1] - edges[i]);
        }
    }
    let mut density = vec![0.0; bins];
    let mut sigma = vec![0.0; bins];
    for i in 0..bins {
        let mean = batch_density.iter().map(|b| b[i]).sum::<f64>() / batches as f64;
        let var = batch_density.iter().map(|b| (b[i] - mean).powi(2)).sum::<f64>() / (batches - 1) as f64;
        density[i] = mean;
        sigma[i] = (var / batches as f64).sqrt();
    }
    Histogram { edges: edges.to_vec(), density, sigma }
}
