//! Uniform grids, cubic interpolation with linear extrapolation, and
//! Gaussian smoothing stencils for shifted evaluation on a grid.

use serde::{Deserialize, Serialize};

use super::quad::GaussHermite;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformGrid {
    pub x0: f64,
    pub dx: f64,
    pub n: usize,
}

/// Asymptotic slopes used outside the grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Extrap {
    pub left: f64,
    pub right: f64,
}

impl Extrap {
    pub const FLAT: Extrap = Extrap { left: 0.0, right: 0.0 };

    /// |x|-type growth with the given rate.
    pub fn abs(rate: f64) -> Self {
        Extrap { left: -rate, right: rate }
    }
}

impl UniformGrid {
    /// n points spanning [−half_width, half_width].
    pub fn symmetric(half_width: f64, n: usize) -> Self {
        assert!(n >= 4);
        Self { x0: -half_width, dx: 2.0 * half_width / (n - 1) as f64, n }
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        self.x0 + i as f64 * self.dx
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.x(i)).collect()
    }

    pub fn half_width(&self) -> f64 {
        -self.x0
    }

    /// Value at (possibly out-of-range) integer index.
    #[inline]
    pub fn at(&self, f: &[f64], j: isize, ex: Extrap) -> f64 {
        if j < 0 {
            f[0] + ex.left * j as f64 * self.dx
        } else if j as usize >= self.n {
            f[self.n - 1] + ex.right * (j as f64 - (self.n - 1) as f64) * self.dx
        } else {
            f[j as usize]
        }
    }

    /// Four-point Lagrange interpolation at x.
    pub fn interp(&self, f: &[f64], x: f64, ex: Extrap) -> f64 {
        let s = (x - self.x0) / self.dx;
        let j0 = s.floor();
        let w = lagrange4(s - j0);
        let j0 = j0 as isize;
        let mut acc = 0.0;
        for r in 0..4 {
            acc += w[r] * self.at(f, j0 - 1 + r as isize, ex);
        }
        acc
    }

    /// Centered first and second differences with ghost values from `ex`.
    pub fn derivatives(&self, f: &[f64], ex: Extrap) -> (Vec<f64>, Vec<f64>) {
        let n = self.n;
        let mut d1 = vec![0.0; n];
        let mut d2 = vec![0.0; n];
        let inv = 1.0 / self.dx;
        for i in 0..n {
            let l = self.at(f, i as isize - 1, ex);
            let r = self.at(f, i as isize + 1, ex);
            d1[i] = 0.5 * (r - l) * inv;
            d2[i] = (r - 2.0 * f[i] + l) * inv * inv;
        }
        (d1, d2)
    }
}

#[inline]
pub fn lagrange4(t: f64) -> [f64; 4] {
    [
        -t * (t - 1.0) * (t - 2.0) / 6.0,
        (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
        -(t + 1.0) * t * (t - 2.0) / 2.0,
        (t + 1.0) * t * (t - 1.0) / 6.0,
    ]
}

/// Evaluation of f(x_i + a·z_k) for all grid points x_i and quadrature
/// nodes z_k, sharing one interpolation stencil per node.
pub struct ShiftStencil {
    pub offsets: Vec<isize>,
    pub lw: Vec<[f64; 4]>,
    pub qw: Vec<f64>,
    pub shift: Vec<f64>,
}

impl ShiftStencil {
    pub fn new(grid: &UniformGrid, a: f64, quad: &GaussHermite) -> Self {
        let mut offsets = Vec::with_capacity(quad.nodes.len());
        let mut lw = Vec::with_capacity(quad.nodes.len());
        let mut shift = Vec::with_capacity(quad.nodes.len());
        for &z in &quad.nodes {
            let s = a * z / grid.dx;
            let j0 = s.floor();
            offsets.push(j0 as isize - 1);
            lw.push(lagrange4(s - j0));
            shift.push(a * z);
        }
        Self { offsets, lw, qw: quad.weights.clone(), shift }
    }

    pub fn len(&self) -> usize {
        self.qw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.qw.is_empty()
    }

    /// f(x_i + a z_k).
    #[inline]
    pub fn sample(&self, grid: &UniformGrid, f: &[f64], i: usize, k: usize, ex: Extrap) -> f64 {
        let base = i as isize + self.offsets[k];
        let w = &self.lw[k];
        if base >= 0 && (base + 3) < grid.n as isize {
            let b = base as usize;
            w[0] * f[b] + w[1] * f[b + 1] + w[2] * f[b + 2] + w[3] * f[b + 3]
        } else {
            let mut acc = 0.0;
            for r in 0..4 {
                acc += w[r] * grid.at(f, base + r as isize, ex);
            }
            acc
        }
    }
}

/// (1/m) log Σ_k w_k exp(m v_k) computed stably; plain mean when m = 0.
/// Also writes the normalized tilt weights into `tilt`.
#[inline]
pub fn tilted_mean(m: f64, vals: &[f64], qw: &[f64], tilt: &mut [f64]) -> f64 {
    if m == 0.0 {
        let mut acc = 0.0;
        for k in 0..vals.len() {
            tilt[k] = qw[k];
            acc += qw[k] * vals[k];
        }
        return acc;
    }
    let mut mx = f64::NEG_INFINITY;
    for &v in vals {
        mx = mx.max(m * v);
    }
    let mut s = 0.0;
    for k in 0..vals.len() {
        let e = qw[k] * (m * vals[k] - mx).exp();
        tilt[k] = e;
        s += e;
    }
    for t in tilt.iter_mut().take(vals.len()) {
        *t /= s;
    }
    (mx + s.ln()) / m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interp_exact_on_cubics() {
        let g = UniformGrid::symmetric(3.0, 61);
        let f: Vec<f64> = g.points().iter().map(|x| x * x * x - 2.0 * x).collect();
        for &x in &[-2.33, 0.0, 0.017, 1.5, 2.75] {
            assert!((g.interp(&f, x, Extrap::FLAT) - (x * x * x - 2.0 * x)).abs() < 1e-10);
        }
    }

    #[test]
    fn linear_extrapolation() {
        let g = UniformGrid::symmetric(5.0, 101);
        let f: Vec<f64> = g.points().iter().map(|x: &f64| x.abs()).collect();
        assert!((g.interp(&f, 7.3, Extrap::abs(1.0)) - 7.3).abs() < 1e-12);
        assert!((g.interp(&f, -9.0, Extrap::abs(1.0)) - 9.0).abs() < 1e-12);
    }

    #[test]
    fn tilted_mean_limits() {
        let vals = [1.0, 2.0, 3.0];
        let qw = [0.25, 0.5, 0.25];
        let mut t = [0.0; 3];
        assert!((tilted_mean(0.0, &vals, &qw, &mut t) - 2.0).abs() < 1e-15);
        let v = tilted_mean(1e-8, &vals, &qw, &mut t);
        assert!((v - 2.0).abs() < 1e-7);
        let v = tilted_mean(1.0, &vals, &qw, &mut t);
        let exact = (0.25 * 1f64.exp() + 0.5 * 2f64.exp() + 0.25 * 3f64.exp()).ln();
        assert!((v - exact).abs() < 1e-14);
    }
}
