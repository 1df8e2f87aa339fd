use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use super::{DerivativeField, DerivativeKind, Direction};
use crate::density::smoothing::{bin_linear, gaussian_smooth};
use crate::density::{silverman_bandwidth, Bandwidth, GridSpec, BULK_FRACTION};
use crate::error::{Error, Result};
use crate::simulate::PathEnsemble;

/// Options for [`empirical_derivative`].
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalOptions {
    pub bandwidth: Bandwidth,
    /// Subtract the future Brownian increments `σ ΣΔW / h` from forward
    /// quotients. They have conditional mean zero given `X_t`, so the target
    /// is unchanged while the variance drops from `O(σ²/h)` to `O(1)`.
    pub control_variate: bool,
    /// Poisson-bootstrap replicates for the standard error; 0 disables it.
    pub n_bootstrap: usize,
    pub bootstrap_seed: u64,
    /// Nodes whose effective local sample count is below this are masked.
    pub min_effective: f64,
}

impl Default for EmpiricalOptions {
    fn default() -> Self {
        EmpiricalOptions {
            bandwidth: Bandwidth::Auto,
            control_variate: true,
            n_bootstrap: 32,
            bootstrap_seed: 0,
            min_effective: 50.0,
        }
    }
}

/// A kernel-regression estimate with its uncertainty.
#[derive(Debug, Clone)]
pub struct EmpiricalDerivative {
    pub field: DerivativeField,
    /// Bootstrap standard error per node and component (zero if disabled).
    pub standard_error: Vec<f64>,
    /// Kish effective sample count `(Σw)² / Σw²` per node.
    pub effective_count: Vec<f64>,
    pub bandwidth: Vec<f64>,
}

impl EmpiricalDerivative {
    /// Largest standard error over valid nodes.
    pub fn max_standard_error(&self) -> f64 {
        let d = self.field.components();
        (0..self.field.grid().n_nodes())
            .filter(|&n| self.field.mask()[n])
            .flat_map(|n| self.standard_error[n * d..(n + 1) * d].iter())
            .fold(0.0, |m, v| m.max(*v))
    }
}

fn steps_of(x: f64, dt: f64) -> Result<usize> {
    let k = (x / dt).round();
    if k < 0.0 || (x / dt - k).abs() > 1e-6 {
        return Err(Error::OffGrid { t: x, dt });
    }
    Ok(k as usize)
}

/// Nadaraya–Watson regression of `(X_{t+h} − X_t)/h` (forward) or
/// `(X_t − X_{t−h})/h` (backward) on `X_t`, evaluated at the grid nodes.
///
/// The Gaussian kernel is applied by linear binning and separable
/// convolution. Nodes outside the bulk of the kernel density of `X_t`, or
/// with fewer than `min_effective` effective samples, are masked.
pub fn empirical_derivative(
    ensemble: &PathEnsemble,
    t: f64,
    h_lag: f64,
    direction: Direction,
    grid: &GridSpec,
    options: &EmpiricalOptions,
) -> Result<EmpiricalDerivative> {
    let d = ensemble.dim();
    if grid.dim() != d {
        return Err(Error::Dimension {
            expected: grid.dim(),
            got: d,
        });
    }
    if !(h_lag > 0.0) {
        return Err(Error::InvalidParameter("h_lag must be positive".into()));
    }
    let dt = ensemble.dt();
    let k = steps_of(t, dt)?;
    let lag = steps_of(h_lag, dt)?;
    let (from, to) = match direction {
        Direction::Forward => (k, k + lag),
        Direction::Backward => (k.checked_sub(lag).ok_or(Error::OffGrid { t: t - h_lag, dt })?, k),
    };
    if to > ensemble.n_steps() {
        return Err(Error::OffGrid { t: t + h_lag, dt });
    }
    let n = ensemble.n_paths();
    let sigma = ensemble.spec().sigma;
    let subtract_noise = options.control_variate && direction == Direction::Forward && !ensemble.is_reversed();

    let mut points = Vec::with_capacity(n * d);
    let mut responses = vec![Vec::with_capacity(n); d];
    for p in 0..n {
        let x = ensemble.state(p, k);
        points.extend_from_slice(x);
        let (a, b) = (ensemble.state(p, from), ensemble.state(p, to));
        for i in 0..d {
            let mut y = b[i] - a[i];
            if subtract_noise {
                y -= sigma * (from..to).map(|j| ensemble.increment(p, j)[i]).sum::<f64>();
            }
            responses[i].push(y / h_lag);
        }
    }

    let kind = match direction {
        Direction::Forward => DerivativeKind::Dplus,
        Direction::Backward => DerivativeKind::Dminus,
    };
    kernel_regression(&points, &responses, None, grid, options, kind, ensemble.time(k))
}

/// Nadaraya–Watson regression of `responses[i][p]` on `points[p]` at the grid
/// nodes, with optional per-sample weights (zero drops a sample).
pub fn kernel_regression(
    points: &[f64],
    responses: &[Vec<f64>],
    sample_weights: Option<&[f64]>,
    grid: &GridSpec,
    options: &EmpiricalOptions,
    kind: DerivativeKind,
    t: f64,
) -> Result<EmpiricalDerivative> {
    let d = grid.dim();
    let c = responses.len();
    let n = points.len() / d;
    if n == 0 {
        return Err(Error::InsufficientSamples("empty sample".into()));
    }
    let bw = match &options.bandwidth {
        Bandwidth::Auto => silverman_bandwidth(points, d, grid),
        Bandwidth::Fixed(h) => {
            if h.len() != d || h.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::InvalidParameter("bandwidth must be positive per axis".into()));
            }
            h.clone()
        }
    };
    let base: Vec<f64> = sample_weights.map_or_else(|| vec![1.0; n], |w| w.to_vec());

    let regress = |weights: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let weighted: Vec<Vec<f64>> = responses
            .iter()
            .map(|r| {
                r.iter()
                    .zip(weights)
                    .map(|(y, w)| if *w == 0.0 { 0.0 } else { y * w })
                    .collect()
            })
            .collect();
        let mut channels: Vec<&[f64]> = vec![weights];
        channels.extend(weighted.iter().map(|v| v.as_slice()));
        let binned = bin_linear(grid, points, &channels);
        let smooth: Vec<Vec<f64>> = binned.iter().map(|b| gaussian_smooth(grid, b, &bw)).collect();
        let mut m = vec![0.0; grid.n_nodes() * c];
        for node in 0..grid.n_nodes() {
            let s0 = smooth[0][node];
            for i in 0..c {
                m[node * c + i] = if s0 > 0.0 { smooth[i + 1][node] / s0 } else { 0.0 };
            }
        }
        (m, smooth.into_iter().next().expect("weight channel"))
    };

    let (estimate, s0) = regress(&base);

    // K_h² = K_{h/√2} / (2√π h) per axis gives Σ w² by the same machinery.
    let narrow: Vec<f64> = bw.iter().map(|h| h / std::f64::consts::SQRT_2).collect();
    let norm: f64 = bw
        .iter()
        .map(|h| 1.0 / (2.0 * std::f64::consts::PI.sqrt() * h))
        .product();
    let squared: Vec<f64> = base.iter().map(|w| w * w).collect();
    let binned = bin_linear(grid, points, &[&squared]);
    let s2 = gaussian_smooth(grid, &binned[0], &narrow);
    let effective_count: Vec<f64> = s0
        .iter()
        .zip(&s2)
        .map(|(a, b)| if *b > 0.0 { a * a / (b * norm) } else { 0.0 })
        .collect();

    let top = s0.iter().cloned().fold(0.0, f64::max);
    let mask: Vec<bool> = (0..grid.n_nodes())
        .map(|node| s0[node] >= BULK_FRACTION * top && s0[node] > 0.0 && effective_count[node] >= options.min_effective)
        .collect();
    if !mask.iter().any(|m| *m) {
        return Err(Error::InsufficientSamples(format!(
            "no node reaches {} effective samples",
            options.min_effective
        )));
    }

    let mut standard_error = vec![0.0; grid.n_nodes() * c];
    if options.n_bootstrap > 1 {
        let mut rng = ChaCha8Rng::seed_from_u64(options.bootstrap_seed);
        let poisson = Poisson::new(1.0).expect("unit rate");
        let mut sum = vec![0.0; grid.n_nodes() * c];
        let mut sum_sq = vec![0.0; grid.n_nodes() * c];
        for _ in 0..options.n_bootstrap {
            let w: Vec<f64> = base.iter().map(|b| b * poisson.sample(&mut rng)).collect();
            let (m, _) = regress(&w);
            for (j, v) in m.iter().enumerate() {
                sum[j] += v;
                sum_sq[j] += v * v;
            }
        }
        let b = options.n_bootstrap as f64;
        for j in 0..standard_error.len() {
            let mean = sum[j] / b;
            standard_error[j] = ((sum_sq[j] / b - mean * mean).max(0.0) * b / (b - 1.0)).sqrt();
        }
    }

    Ok(EmpiricalDerivative {
        field: DerivativeField::new(kind, grid.clone(), t, c, estimate, mask)?,
        standard_error,
        effective_count,
        bandwidth: bw,
    })
}
