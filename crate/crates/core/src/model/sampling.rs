use rand::Rng;
use rand_distr::StandardNormal;

use super::InitialLaw;
use crate::density::GridSpec;

/// Precomputed sampler for an [`InitialLaw`].
#[derive(Debug, Clone)]
pub enum InitialSampler {
    Point(Vec<f64>),
    Gaussian {
        mean: Vec<f64>,
        chol: Vec<f64>,
    },
    /// Node chosen by cumulative mass, then a uniform offset inside its cell.
    Grid {
        grid: GridSpec,
        cdf: Vec<f64>,
    },
}

impl InitialSampler {
    pub fn new(law: &InitialLaw) -> Self {
        match law {
            InitialLaw::PointMass(x) => InitialSampler::Point(x.clone()),
            InitialLaw::Gaussian { mean, cov } => InitialSampler::Gaussian {
                mean: mean.clone(),
                chol: psd_cholesky(mean.len(), cov),
            },
            InitialLaw::Grid(field) => {
                let grid = field.grid().clone();
                let weights = grid.trapezoid_weights();
                let mut acc = 0.0;
                let cdf = field
                    .values()
                    .iter()
                    .zip(&weights)
                    .map(|(p, w)| {
                        acc += p * w;
                        acc
                    })
                    .collect::<Vec<_>>();
                let total = acc;
                let cdf = cdf.into_iter().map(|c| c / total).collect();
                InitialSampler::Grid { grid, cdf }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match self {
            InitialSampler::Point(x) => out.copy_from_slice(x),
            InitialSampler::Gaussian { mean, chol } => {
                let d = mean.len();
                let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                for i in 0..d {
                    out[i] = mean[i] + (0..=i).map(|j| chol[i * d + j] * z[j]).sum::<f64>();
                }
            }
            InitialSampler::Grid { grid, cdf } => {
                let u: f64 = rng.gen();
                let node = cdf.partition_point(|c| *c < u).min(cdf.len() - 1);
                let coords = grid.node_coords(node);
                for (axis, c) in coords.iter().enumerate() {
                    let h = grid.spacing(axis);
                    let jitter: f64 = rng.gen_range(-0.5..0.5);
                    out[axis] = (c + jitter * h).clamp(grid.lower(axis), grid.upper(axis));
                }
            }
        }
    }
}

/// Lower-triangular factor of a symmetric positive semi-definite matrix;
/// columns with a vanishing pivot are zeroed.
fn psd_cholesky(d: usize, a: &[f64]) -> Vec<f64> {
    let mut l = vec![0.0; d * d];
    for j in 0..d {
        let s: f64 = (0..j).map(|k| l[j * d + k] * l[j * d + k]).sum();
        let pivot = a[j * d + j] - s;
        if pivot <= 1e-300 {
            continue;
        }
        let diag = pivot.sqrt();
        l[j * d + j] = diag;
        for i in j + 1..d {
            let s: f64 = (0..j).map(|k| l[i * d + k] * l[j * d + k]).sum();
            l[i * d + j] = (a[i * d + j] - s) / diag;
        }
    }
    l
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_reconstructs() {
        let a = [4.0, 2.0, 2.0, 3.0];
        let l = psd_cholesky(2, &a);
        let r00 = l[0] * l[0];
        let r10 = l[2] * l[0];
        let r11 = l[2] * l[2] + l[3] * l[3];
        assert!((r00 - 4.0).abs() < 1e-14 && (r10 - 2.0).abs() < 1e-14 && (r11 - 3.0).abs() < 1e-14);
    }

    #[test]
    fn cholesky_tolerates_degenerate() {
        let l = psd_cholesky(2, &[0.0, 0.0, 0.0, 1.0]);
        assert_eq!(l, vec![0.0, 0.0, 0.0, 1.0]);
    }
}
