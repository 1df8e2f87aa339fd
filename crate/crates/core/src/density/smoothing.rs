//! Linear binning and separable Gaussian smoothing on a grid; shared by the
//! kernel density estimator and the kernel regression in `nelson`.

use rayon::prelude::*;

use super::GridSpec;

/// Kernel support in bandwidths.
const TRUNCATION: f64 = 5.0;

/// Distributes each point's channel weights over the `2^d` surrounding nodes.
///
/// `points` is flat (`n * d`); `channels[c]` holds one weight per point.
/// Points outside the grid are dropped.
pub(crate) fn bin_linear(grid: &GridSpec, points: &[f64], channels: &[&[f64]]) -> Vec<Vec<f64>> {
    let d = grid.dim();
    let mut out = vec![vec![0.0; grid.n_nodes()]; channels.len()];
    for (p, x) in points.chunks_exact(d).enumerate() {
        let Ok(stencil) = grid.stencil(x) else {
            continue;
        };
        for (node, w) in stencil {
            for (c, ch) in channels.iter().enumerate() {
                out[c][node] += w * ch[p];
            }
        }
    }
    out
}

/// Convolves a binned grid function with a Gaussian of per-axis bandwidth.
///
/// The result approximates `Σ_p w_p K_h(x − X_p)`; the kernel is truncated
/// at five bandwidths and mass falling outside the grid is lost.
pub(crate) fn gaussian_smooth(grid: &GridSpec, data: &[f64], bandwidth: &[f64]) -> Vec<f64> {
    let mut cur = data.to_vec();
    for axis in 0..grid.dim() {
        cur = smooth_axis(grid, &cur, axis, bandwidth[axis]);
    }
    cur
}

fn smooth_axis(grid: &GridSpec, data: &[f64], axis: usize, h: f64) -> Vec<f64> {
    let dx = grid.spacing(axis);
    let n = grid.nodes(axis);
    let s = grid.stride(axis);
    let half = ((TRUNCATION * h / dx).ceil() as usize).min(n - 1);
    let norm = 1.0 / (h * (2.0 * std::f64::consts::PI).sqrt());
    let taps: Vec<f64> = (0..=half)
        .map(|k| {
            let u = k as f64 * dx / h;
            norm * (-0.5 * u * u).exp()
        })
        .collect();
    let mut out = vec![0.0; data.len()];
    out.par_iter_mut().enumerate().for_each(|(node, o)| {
        let i = grid.axis_index(node, axis);
        let base = node - i * s;
        let lo = i.saturating_sub(half);
        let hi = (i + half).min(n - 1);
        let mut acc = 0.0;
        for j in lo..=hi {
            acc += taps[i.abs_diff(j)] * data[base + j * s];
        }
        *o = acc;
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binning_conserves_weight() {
        let grid = GridSpec::cube(2, -1.0, 1.0, 17).unwrap();
        let pts = [0.13, -0.41, 0.5, 0.5, 2.0, 0.0];
        let w = [1.0, 2.0, 5.0];
        let b = bin_linear(&grid, &pts, &[&w]);
        assert!((b[0].iter().sum::<f64>() - 3.0).abs() < 1e-14);
    }

    #[test]
    fn smoothing_a_spike_gives_a_gaussian() {
        let grid = GridSpec::cube(1, -3.0, 3.0, 601).unwrap();
        let b = bin_linear(&grid, &[0.0], &[&[1.0]]);
        let k = gaussian_smooth(&grid, &b[0], &[0.3]);
        for (node, v) in k.iter().enumerate() {
            let x = grid.node_coords(node)[0];
            if x.abs() > 1.5 {
                assert_eq!(*v, 0.0);
                continue;
            }
            let exact = (-0.5 * (x / 0.3).powi(2)).exp() / (0.3 * (2.0 * std::f64::consts::PI).sqrt());
            assert!((v - exact).abs() < 1e-10);
        }
    }
}
