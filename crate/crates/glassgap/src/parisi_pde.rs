//! The one-dimensional Parisi PDE
//!
//!   ∂ₜφ + ½ξ″(t)(∂ₓ²φ + m(t)(∂ₓφ)²) = 0,  φ(1, x) = log cosh x,
//!
//! for step-function m (CDFs of atomic measures), solved either by the
//! exponential linearization on each constancy interval or by a
//! semi-implicit finite-difference scheme, together with expectations along
//! the local field process dX = ξ″ m ∂ₓφ ds + √ξ″ dW, X₀ = h.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::AtomicMeasure;
use crate::model::MixtureSpec;
use crate::numerics::grid::{lagrange4, tilted_mean, Extrap, ShiftStencil, UniformGrid};
use crate::numerics::quad::GaussHermite;
use crate::numerics::tridiag::solve_tridiag;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridParams {
    pub n_x: usize,
    /// Half-width L of [−L, L]; `None` selects [`default_half_width`].
    pub half_width: Option<f64>,
    pub quad_order: usize,
    /// Finite-difference time steps per unit time.
    pub fd_steps: usize,
    /// Finite-difference slices are stored every this many steps.
    pub fd_save_every: usize,
}

impl Default for GridParams {
    fn default() -> Self {
        Self { n_x: 2048, half_width: None, quad_order: 128, fd_steps: 4000, fd_save_every: 20 }
    }
}

/// max(8 + |h| + 4√ξ′(1), 10).
pub fn default_half_width(spec: &MixtureSpec) -> f64 {
    (8.0 + spec.h.abs() + 4.0 * spec.dxi(1.0).max(0.0).sqrt()).max(10.0)
}

pub fn log_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PdeMethod {
    Recursion,
    FiniteDifference,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Slice {
    pub t: f64,
    pub phi: Vec<f64>,
    pub phi_x: Vec<f64>,
    pub phi_xx: Vec<f64>,
}

impl Slice {
    fn from_phi(grid: &UniformGrid, t: f64, phi: Vec<f64>) -> Self {
        let (phi_x, phi_xx) = grid.derivatives(&phi, Extrap::abs(1.0));
        Self { t, phi, phi_x, phi_xx }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParisiSolution {
    pub method: PdeMethod,
    pub spec: MixtureSpec,
    pub measure: AtomicMeasure,
    pub grid: UniformGrid,
    pub quad_order: usize,
    /// Ascending in t; the first is t = 0 and the last t = 1.
    pub slices: Vec<Slice>,
}

/// Gaussian-smoothing engine shared by the 1D solvers.
pub(crate) struct Engine1d {
    pub grid: UniformGrid,
    pub quad: GaussHermite,
}

impl Engine1d {
    pub fn new(grid: UniformGrid, quad_order: usize) -> Self {
        Self { grid, quad: GaussHermite::new(quad_order) }
    }

    /// (1/m) log E exp(m f(x + aZ)) at every grid point, together with tilted
    /// averages of the auxiliary fields.
    pub fn step(&self, f: &[f64], ex: Extrap, a: f64, m: f64, aux: &[(&[f64], Extrap)]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let n = self.grid.n;
        if a == 0.0 {
            return (f.to_vec(), aux.iter().map(|(g, _)| g.to_vec()).collect());
        }
        if a >= CONV_MIN_SHIFT * self.grid.dx {
            return self.conv_step(f, ex, a, m, aux);
        }
        if a < HEAT_MAX_SHIFT * self.grid.dx {
            return self.heat_window(f, ex, a, m, aux, 0, n as isize);
        }
        let st = ShiftStencil::new(&self.grid, a, &self.quad);
        let nq = st.len();
        let mut out = vec![0.0; n];
        let mut aux_out = vec![vec![0.0; n]; aux.len()];
        let mut vals = vec![0.0; nq];
        let mut tilt = vec![0.0; nq];
        for i in 0..n {
            for k in 0..nq {
                vals[k] = st.sample(&self.grid, f, i, k, ex);
            }
            out[i] = tilted_mean(m, &vals, &st.qw, &mut tilt);
            for (j, (g, gex)) in aux.iter().enumerate() {
                let mut acc = 0.0;
                for k in 0..nq {
                    acc += tilt[k] * st.sample(&self.grid, g, i, k, *gex);
                }
                aux_out[j][i] = acc;
            }
        }
        (out, aux_out)
    }

    /// Same step evaluated at a single point x.
    pub fn point(&self, f: &[f64], ex: Extrap, a: f64, m: f64, x: f64, aux: &[(&[f64], Extrap)]) -> (f64, Vec<f64>) {
        if a == 0.0 {
            return (self.grid.interp(f, x, ex), aux.iter().map(|(g, gex)| self.grid.interp(g, x, *gex)).collect());
        }
        if a >= CONV_MIN_SHIFT * self.grid.dx {
            return self.conv_point(f, ex, a, m, x, aux);
        }
        if a < HEAT_MAX_SHIFT * self.grid.dx {
            let g = &self.grid;
            let j = ((x - g.x0) / g.dx).floor() as isize;
            let (v, av) = self.heat_window(f, ex, a, m, aux, j - 1, j + 3);
            let w = lagrange4((x - g.x0) / g.dx - j as f64);
            let dot = |u: &[f64]| (0..4).map(|r| w[r] * u[r]).sum::<f64>();
            return (dot(&v), av.iter().map(|u| dot(u)).collect());
        }
        let nq = self.quad.nodes.len();
        let mut vals = vec![0.0; nq];
        let mut tilt = vec![0.0; nq];
        for k in 0..nq {
            vals[k] = self.grid.interp(f, x + a * self.quad.nodes[k], ex);
        }
        let v = tilted_mean(m, &vals, &self.quad.weights, &mut tilt);
        let aux_v = aux
            .iter()
            .map(|(g, gex)| (0..nq).map(|k| tilt[k] * self.grid.interp(g, x + a * self.quad.nodes[k], *gex)).sum())
            .collect();
        (v, aux_v)
    }

    /// Values on grid indices lo..hi (possibly outside the grid).
    fn padded(&self, f: &[f64], ex: Extrap, lo: isize, hi: isize) -> Vec<f64> {
        (lo..hi).map(|j| self.grid.at(f, j, ex)).collect()
    }

    /// Shifts below one grid spacing: the Gaussian average is the heat flow
    /// for time a²/2 of e^{mf}, run by Crank–Nicolson with the fourth-order
    /// compact Laplacian on a padded window. Unlike interpolation at x ± aZ,
    /// the error vanishes as a → 0. Returns indices lo..hi.
    fn heat_window(
        &self,
        f: &[f64],
        ex: Extrap,
        a: f64,
        m: f64,
        aux: &[(&[f64], Extrap)],
        lo: isize,
        hi: isize,
    ) -> (Vec<f64>, Vec<Vec<f64>>) {
        let pad = 4 + (CONV_CUTOFF * a / self.grid.dx).ceil() as isize;
        let fe = self.padded(f, ex, lo - pad, hi + pad);
        let r = 0.25 * a * a / (self.grid.dx * self.grid.dx);
        let keep = pad as usize..(pad + hi - lo) as usize;
        let ge: Vec<Vec<f64>> = aux.iter().map(|(g, gex)| self.padded(g, *gex, lo - pad, hi + pad)).collect();
        if m == 0.0 {
            let out = heat_cn(&fe, r, 2)[keep.clone()].to_vec();
            return (out, ge.iter().map(|g| heat_cn(g, r, 2)[keep.clone()].to_vec()).collect());
        }
        let c = fe.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let dev = c - fe.iter().cloned().fold(f64::INFINITY, f64::min);
        let use_m1 = m * dev <= 1.0;
        let mut t: Vec<f64> = fe.iter().map(|v| if use_m1 { (m * (v - c)).exp_m1() } else { (m * (v - c)).exp() }).collect();
        let ht = heat_cn(&t, r, 2);
        let out = keep.clone().map(|i| c + if use_m1 { ht[i].ln_1p() } else { ht[i].ln() } / m).collect();
        if aux.is_empty() {
            return (out, Vec::new());
        }
        if use_m1 {
            t.iter_mut().for_each(|v| *v += 1.0);
        }
        let den = heat_cn(&t, r, 2);
        let aux_out = ge
            .iter()
            .map(|g| {
                let tg: Vec<f64> = t.iter().zip(g).map(|(a, b)| a * b).collect();
                let num = heat_cn(&tg, r, 2);
                keep.clone().map(|i| num[i] / den[i]).collect()
            })
            .collect();
        (out, aux_out)
    }

    /// Trapezoid rule on the grid nodes themselves: for a ≫ dx the Gaussian
    /// weighted integrand is resolved and the rule is spectrally accurate.
    fn conv_step(&self, f: &[f64], ex: Extrap, a: f64, m: f64, aux: &[(&[f64], Extrap)]) -> (Vec<f64>, Vec<Vec<f64>>) {
        const BLOCK: usize = 128;
        let n = self.grid.n;
        let pad = (CONV_CUTOFF * a / self.grid.dx).ceil() as isize;
        let mut w: Vec<f64> = (-pad..=pad)
            .map(|j| {
                let y = j as f64 * self.grid.dx / a;
                (-0.5 * y * y).exp()
            })
            .collect();
        let ws: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= ws);
        let width = w.len();
        let fe = self.padded(f, ex, -pad, n as isize + pad);
        let ge: Vec<Vec<f64>> = aux.iter().map(|(g, gex)| self.padded(g, *gex, -pad, n as isize + pad)).collect();
        let mut out = vec![0.0; n];
        let mut aux_out = vec![vec![0.0; n]; aux.len()];
        let mut t = vec![0.0; BLOCK + width];
        for b0 in (0..n).step_by(BLOCK) {
            let b1 = (b0 + BLOCK).min(n);
            let win = &fe[b0..b1 + width - 1];
            // tilt factors exp(m(f − c)) relative to a per-block reference; the
            // expm1 form keeps small m accurate
            let c = fe[(b0 + b1) / 2 + pad as usize];
            let dev = win.iter().map(|v| (v - c).abs()).fold(0.0, f64::max);
            let use_m1 = m * dev <= 1.0;
            for (k, &v) in win.iter().enumerate() {
                let z = m * (v - c);
                t[k] = if use_m1 { z.exp_m1() } else { z.exp() };
            }
            for i in b0..b1 {
                let r = i - b0;
                if m == 0.0 {
                    out[i] = w.iter().zip(&fe[i..i + width]).map(|(a, b)| a * b).sum();
                } else {
                    let s: f64 = w.iter().zip(&t[r..r + width]).map(|(a, b)| a * b).sum();
                    out[i] = c + if use_m1 { s.ln_1p() } else { s.ln() } / m;
                }
            }
            if aux.is_empty() {
                continue;
            }
            if use_m1 {
                t[..win.len()].iter_mut().for_each(|v| *v += 1.0);
            }
            for i in b0..b1 {
                let r = i - b0;
                let den: f64 = w.iter().zip(&t[r..r + width]).map(|(a, b)| a * b).sum();
                for (gi, g) in ge.iter().enumerate() {
                    let num: f64 = (0..width).map(|k| w[k] * t[r + k] * g[i + k]).sum();
                    aux_out[gi][i] = num / den;
                }
            }
        }
        (out, aux_out)
    }

    fn conv_point(&self, f: &[f64], ex: Extrap, a: f64, m: f64, x: f64, aux: &[(&[f64], Extrap)]) -> (f64, Vec<f64>) {
        let g = &self.grid;
        let lo = ((x - CONV_CUTOFF * a - g.x0) / g.dx).floor() as isize;
        let hi = ((x + CONV_CUTOFF * a - g.x0) / g.dx).ceil() as isize + 1;
        let mut w: Vec<f64> = (lo..hi)
            .map(|j| {
                let y = (g.x0 + j as f64 * g.dx - x) / a;
                (-0.5 * y * y).exp()
            })
            .collect();
        let ws: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= ws);
        let fe = self.padded(f, ex, lo, hi);
        let mut tilt = vec![0.0; w.len()];
        let v = tilted_mean(m, &fe, &w, &mut tilt);
        let aux_v = aux
            .iter()
            .map(|(gv, gex)| {
                let ge = self.padded(gv, *gex, lo, hi);
                tilt.iter().zip(&ge).map(|(t, v)| t * v).sum()
            })
            .collect();
        (v, aux_v)
    }
}

/// Shifts of at least this many grid spacings use the on-grid trapezoid rule.
const CONV_MIN_SHIFT: f64 = 3.0;
/// Shifts below this many grid spacings use the heat step.
const HEAT_MAX_SHIFT: f64 = 1.0;

/// `steps` Crank–Nicolson steps of v ↦ (B − ½rD)⁻¹(B + ½rD)v with D the
/// second difference and B = I + D/12, end values held fixed; the total
/// time is steps·r·dx² for the flow ∂ₜv = ∂²v.
fn heat_cn(v: &[f64], r: f64, steps: usize) -> Vec<f64> {
    let n = v.len();
    let mut cur = v.to_vec();
    let (off_l, diag_l) = (1.0 / 12.0 - 0.5 * r, 10.0 / 12.0 + r);
    let (off_r, diag_r) = (1.0 / 12.0 + 0.5 * r, 10.0 / 12.0 - r);
    let m = n - 2;
    let sub = vec![off_l; m];
    let dia = vec![diag_l; m];
    let sup = vec![off_l; m];
    let mut rhs = vec![0.0; m];
    let mut scratch = Vec::new();
    for _ in 0..steps {
        for i in 1..n - 1 {
            rhs[i - 1] = off_r * (cur[i - 1] + cur[i + 1]) + diag_r * cur[i];
        }
        rhs[0] -= off_l * cur[0];
        rhs[m - 1] -= off_l * cur[n - 1];
        solve_tridiag(&sub, &dia, &sup, &mut rhs, &mut scratch);
        cur[1..n - 1].copy_from_slice(&rhs);
    }
    cur
}
/// Gaussian weights are truncated beyond this many standard deviations.
const CONV_CUTOFF: f64 = 8.5;

fn check_params(spec: &MixtureSpec, params: &GridParams) -> Result<UniformGrid> {
    spec.validate()?;
    if params.quad_order < 32 {
        return Err(Error::Domain("quadrature order must be >= 32".into()));
    }
    if params.n_x < 16 {
        return Err(Error::Domain("grid needs at least 16 points".into()));
    }
    let l = params.half_width.unwrap_or_else(|| default_half_width(spec));
    if l < 8.0 + spec.h.abs() {
        return Err(Error::GridTooSmall(format!("half-width {l} below 8 + |h|")));
    }
    Ok(UniformGrid::symmetric(l, params.n_x))
}

fn terminal(grid: &UniformGrid) -> Vec<f64> {
    grid.points().iter().map(|&x| log_cosh(x)).collect()
}

fn check_boundary(sol: &ParisiSolution) -> Result<()> {
    let s = &sol.slices[0];
    let n = sol.grid.n;
    let dl = (s.phi_x[0] + 1.0).abs();
    let dr = (s.phi_x[n - 1] - 1.0).abs();
    if dl > 1e-8 || dr > 1e-8 {
        return Err(Error::GridTooSmall(format!(
            "boundary slope deviates from ±1 by {:.3e}; enlarge the half-width",
            dl.max(dr)
        )));
    }
    Ok(())
}

/// Exponential-linearization recursion between the atoms of ν.
pub fn solve_recursion(spec: &MixtureSpec, nu: &AtomicMeasure, params: &GridParams) -> Result<ParisiSolution> {
    let grid = check_params(spec, params)?;
    let eng = Engine1d::new(grid, params.quad_order);
    let cdf = nu.step_cdf();
    let mut phi = terminal(&grid);
    let mut rev = vec![Slice::from_phi(&grid, 1.0, phi.clone())];
    for j in (0..cdf.values.len()).rev() {
        let (a, b, m) = (cdf.knots[j], cdf.knots[j + 1], cdf.values[j]);
        let s = (spec.dxi(b) - spec.dxi(a)).max(0.0).sqrt();
        phi = eng.step(&phi, Extrap::abs(1.0), s, m, &[]).0;
        rev.push(Slice::from_phi(&grid, a, phi.clone()));
    }
    rev.reverse();
    let sol = ParisiSolution {
        method: PdeMethod::Recursion,
        spec: spec.clone(),
        measure: nu.clone(),
        grid,
        quad_order: params.quad_order,
        slices: rev,
    };
    check_boundary(&sol)?;
    Ok(sol)
}

/// φ(0, h) alone, skipping the full grid on the last interval.
pub fn phi0_at_h(spec: &MixtureSpec, nu: &AtomicMeasure, params: &GridParams) -> Result<f64> {
    let grid = check_params(spec, params)?;
    let eng = Engine1d::new(grid, params.quad_order);
    let cdf = nu.step_cdf();
    let mut phi = terminal(&grid);
    for j in (1..cdf.values.len()).rev() {
        let (a, b, m) = (cdf.knots[j], cdf.knots[j + 1], cdf.values[j]);
        let s = (spec.dxi(b) - spec.dxi(a)).max(0.0).sqrt();
        phi = eng.step(&phi, Extrap::abs(1.0), s, m, &[]).0;
    }
    let (b, m) = (cdf.knots[1], cdf.values[0]);
    let s = (spec.dxi(b) - spec.dxi(0.0)).max(0.0).sqrt();
    Ok(eng.point(&phi, Extrap::abs(1.0), s, m, spec.h, &[]).0)
}

/// Crank–Nicolson diffusion with a Heun predictor–corrector for the
/// nonlinear term; Neumann data ∂ₓφ(±L) = ±1.
pub fn solve_fd(spec: &MixtureSpec, nu: &AtomicMeasure, params: &GridParams) -> Result<ParisiSolution> {
    let grid = check_params(spec, params)?;
    let n = grid.n;
    let dx = grid.dx;
    let cdf = nu.step_cdf();
    let mut phi = terminal(&grid);
    let mut rev = vec![Slice::from_phi(&grid, 1.0, phi.clone())];

    let inv2 = 1.0 / (dx * dx);
    // A φ + c with ghost values from the Neumann data
    let apply = |f: &[f64], out: &mut [f64]| {
        out[0] = (2.0 * f[1] - 2.0 * f[0] + 2.0 * dx) * inv2;
        out[n - 1] = (2.0 * f[n - 2] - 2.0 * f[n - 1] + 2.0 * dx) * inv2;
        for i in 1..n - 1 {
            out[i] = (f[i + 1] - 2.0 * f[i] + f[i - 1]) * inv2;
        }
    };
    let nonlin = |f: &[f64], out: &mut [f64]| {
        out[0] = 1.0;
        out[n - 1] = 1.0;
        for i in 1..n - 1 {
            let d = (f[i + 1] - f[i - 1]) / (2.0 * dx);
            out[i] = d * d;
        }
    };
    let mut lap = vec![0.0; n];
    let mut nl0 = vec![0.0; n];
    let mut nl1 = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    let mut pred = vec![0.0; n];
    let (mut sub, mut diag, mut sup) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut scratch = Vec::new();
    let save_every = params.fd_save_every.max(1);

    for j in (0..cdf.values.len()).rev() {
        let (a, b, m) = (cdf.knots[j], cdf.knots[j + 1], cdf.values[j]);
        let steps = (((b - a) * params.fd_steps as f64).ceil() as usize).max(1);
        let dt = (b - a) / steps as f64;
        let amax = 0.5 * spec.ddxi(a).max(spec.ddxi(b));
        if 2.0 * dt * amax * m > dx {
            return Err(Error::Unstable(format!("advective CFL number {:.3} exceeds 1", 2.0 * dt * amax * m / dx)));
        }
        for s in 0..steps {
            let t_old = b - s as f64 * dt;
            let t_new = t_old - dt;
            let a_old = 0.5 * spec.ddxi(t_old);
            let a_new = 0.5 * spec.ddxi(t_new);
            let alpha = 0.5 * dt * a_new * inv2;
            for i in 0..n {
                diag[i] = 1.0 + 2.0 * alpha;
                sub[i] = -alpha;
                sup[i] = -alpha;
            }
            sup[0] = -2.0 * alpha;
            sub[n - 1] = -2.0 * alpha;
            // the constant part of the boundary rows goes to the right side
            let bc_new = 0.5 * dt * a_new * 2.0 * dx * inv2;
            apply(&phi, &mut lap);
            nonlin(&phi, &mut nl0);
            for i in 0..n {
                rhs[i] = phi[i] + 0.5 * dt * a_old * lap[i] + dt * a_old * m * nl0[i];
            }
            rhs[0] += bc_new;
            rhs[n - 1] += bc_new;
            pred.copy_from_slice(&rhs);
            solve_tridiag(&sub, &diag, &sup, &mut pred, &mut scratch);
            nonlin(&pred, &mut nl1);
            for i in 0..n {
                rhs[i] = phi[i] + 0.5 * dt * a_old * lap[i] + 0.5 * dt * m * (a_old * nl0[i] + a_new * nl1[i]);
            }
            rhs[0] += bc_new;
            rhs[n - 1] += bc_new;
            solve_tridiag(&sub, &diag, &sup, &mut rhs, &mut scratch);
            std::mem::swap(&mut phi, &mut rhs);
            let last = s + 1 == steps;
            if last || (s + 1) % save_every == 0 {
                let t = if last { a } else { t_new };
                rev.push(Slice::from_phi(&grid, t, phi.clone()));
            }
        }
    }
    rev.reverse();
    let sol = ParisiSolution {
        method: PdeMethod::FiniteDifference,
        spec: spec.clone(),
        measure: nu.clone(),
        grid,
        quad_order: params.quad_order,
        slices: rev,
    };
    check_boundary(&sol)?;
    Ok(sol)
}

impl ParisiSolution {
    pub fn time_knots(&self) -> Vec<f64> {
        self.slices.iter().map(|s| s.t).collect()
    }

    /// φ(0, x) by interpolation.
    pub fn phi0(&self, x: f64) -> f64 {
        self.grid.interp(&self.slices[0].phi, x, Extrap::abs(1.0))
    }

    pub fn phi0_at_h(&self) -> f64 {
        self.phi0(self.spec.h)
    }

    fn engine(&self) -> Engine1d {
        Engine1d::new(self.grid, self.quad_order)
    }

    /// The solution at an arbitrary time: exact for the recursion, linear
    /// in time between stored slices for finite differences.
    pub fn slice_at(&self, t: f64) -> Result<Slice> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Domain(format!("t = {t} outside [0,1]")));
        }
        if let Some(s) = self.slices.iter().find(|s| s.t == t) {
            return Ok(s.clone());
        }
        let up = self.slices.iter().position(|s| s.t > t).unwrap();
        match self.method {
            PdeMethod::Recursion => {
                let cdf = self.measure.step_cdf();
                let m = cdf.value(t);
                let hi = &self.slices[up];
                let a = (self.spec.dxi(hi.t) - self.spec.dxi(t)).max(0.0).sqrt();
                let phi = self.engine().step(&hi.phi, Extrap::abs(1.0), a, m, &[]).0;
                Ok(Slice::from_phi(&self.grid, t, phi))
            }
            PdeMethod::FiniteDifference => {
                let (lo, hi) = (&self.slices[up - 1], &self.slices[up]);
                let w = (t - lo.t) / (hi.t - lo.t);
                let phi = lo.phi.iter().zip(&hi.phi).map(|(a, b)| (1.0 - w) * a + w * b).collect();
                Ok(Slice::from_phi(&self.grid, t, phi))
            }
        }
    }

    /// 0 < φ_xx < 1 and |φ_x| < 1 on every stored slice, up to `tol`.
    pub fn check_bounds(&self, tol: f64) -> Result<()> {
        for s in &self.slices {
            for i in 0..self.grid.n {
                if !(s.phi_xx[i] > -tol && s.phi_xx[i] < 1.0 + tol) {
                    return Err(Error::Invariant(format!("phi_xx = {} at t={}, x={}", s.phi_xx[i], s.t, self.grid.x(i))));
                }
                if s.phi_x[i].abs() > 1.0 + tol {
                    return Err(Error::Invariant(format!("|phi_x| = {} at t={}, x={}", s.phi_x[i].abs(), s.t, self.grid.x(i))));
                }
            }
        }
        Ok(())
    }

    /// Header lines with knots and grid, then rows `t,x,phi,phi_x,phi_xx`.
    pub fn to_delimited_text(&self) -> String {
        let mut out = String::new();
        let knots: Vec<String> = self.time_knots().iter().map(|t| format!("{t}")).collect();
        out.push_str(&format!("# method: {:?}\n", self.method));
        out.push_str(&format!("# knots: {}\n", knots.join(",")));
        out.push_str(&format!("# grid: x0={},dx={},n={}\n", self.grid.x0, self.grid.dx, self.grid.n));
        out.push_str("t,x,phi,phi_x,phi_xx\n");
        for s in &self.slices {
            for i in 0..self.grid.n {
                out.push_str(&format!("{},{},{},{},{}\n", s.t, self.grid.x(i), s.phi[i], s.phi_x[i], s.phi_xx[i]));
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LocalFieldMethod {
    SdeMonteCarlo,
    DensityQuadrature,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LocalFieldStats {
    pub q: f64,
    /// E ∂ₓφ(q, X_q).
    pub e_phix: f64,
    pub e_phix_sq: f64,
    pub e_phixx_sq: f64,
    pub method: LocalFieldMethod,
    /// Standard errors of (e_phix, e_phix_sq, e_phixx_sq) for Monte Carlo.
    pub mc_stderr: Option<[f64; 3]>,
}

/// Moments of ∂ₓφ and ∂ₓ²φ along simulated local-field paths.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PathMoments {
    pub t: f64,
    pub mean: [f64; 3],
    pub stderr: [f64; 3],
}

pub fn local_field_stats(
    sol: &ParisiSolution,
    q: f64,
    method: LocalFieldMethod,
    n_paths: usize,
    seed: u64,
) -> Result<LocalFieldStats> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Domain(format!("q = {q} outside the solution span [0,1]")));
    }
    match method {
        LocalFieldMethod::DensityQuadrature => quadrature_stats(sol, q),
        LocalFieldMethod::SdeMonteCarlo => {
            if n_paths < 1000 {
                return Err(Error::Domain("at least 1000 paths required".into()));
            }
            let m = simulate_local_field(sol, &[q], n_paths, seed, 400)?;
            let pm = &m[0];
            Ok(LocalFieldStats {
                q,
                e_phix: pm.mean[0],
                e_phix_sq: pm.mean[1],
                e_phixx_sq: pm.mean[2],
                method,
                mc_stderr: Some(pm.stderr),
            })
        }
    }
}

/// Backward Feynman–Kac evaluation: on each constancy interval the
/// local-field transition kernel is the Gaussian kernel reweighted by
/// exp(m φ), so expectations propagate by tilted Gaussian averages.
fn quadrature_stats(sol: &ParisiSolution, q: f64) -> Result<LocalFieldStats> {
    let spec = &sol.spec;
    let top = sol.slice_at(q)?;
    let sq = |v: &[f64]| v.iter().map(|x| x * x).collect::<Vec<f64>>();
    let mut g = vec![top.phi_x.clone(), sq(&top.phi_x), sq(&top.phi_xx)];
    let exs = [Extrap::FLAT, Extrap::FLAT, Extrap::FLAT];
    let cdf = sol.measure.step_cdf().with_knot(q);
    let mut times: Vec<f64> = cdf.knots.iter().cloned().filter(|&t| t < q).collect();
    times.push(q);
    let eng = sol.engine();
    let mut phi_hi = top.phi.clone();
    let h = spec.h;
    let mut result = None;
    for j in (0..times.len() - 1).rev() {
        let (lo, hi) = (times[j], times[j + 1]);
        let m = cdf.value(lo);
        let a = (spec.dxi(hi) - spec.dxi(lo)).max(0.0).sqrt();
        let aux: Vec<(&[f64], Extrap)> = g.iter().zip(exs).map(|(v, e)| (v.as_slice(), e)).collect();
        if j == 0 {
            let (_, vals) = eng.point(&phi_hi, Extrap::abs(1.0), a, m, h, &aux);
            result = Some(vals);
        } else {
            let (_, next) = eng.step(&phi_hi, Extrap::abs(1.0), a, m, &aux);
            g = next;
            phi_hi = sol.slice_at(lo)?.phi;
        }
    }
    let vals = match result {
        Some(v) => v,
        None => g.iter().zip(exs).map(|(v, e)| sol.grid.interp(v, h, e)).collect(),
    };
    Ok(LocalFieldStats {
        q,
        e_phix: vals[0],
        e_phix_sq: vals[1],
        e_phixx_sq: vals[2],
        method: LocalFieldMethod::DensityQuadrature,
        mc_stderr: None,
    })
}

/// Euler–Maruyama paths of the local field process from X₀ = h, recording
/// moments of (∂ₓφ, (∂ₓφ)², (∂ₓ²φ)²) at the requested ascending times.
/// The diffusion increment uses the exact variance ξ′(t+dt) − ξ′(t).
pub fn simulate_local_field(
    sol: &ParisiSolution,
    record: &[f64],
    n_paths: usize,
    seed: u64,
    steps_per_unit: usize,
) -> Result<Vec<PathMoments>> {
    let spec = &sol.spec;
    let t_end = record.iter().cloned().fold(0.0, f64::max);
    if record.iter().any(|&t| !(0.0..=1.0).contains(&t)) {
        return Err(Error::Domain("record times outside [0,1]".into()));
    }
    let cdf = sol.measure.step_cdf();
    let mut times: Vec<f64> = Vec::new();
    let n_uniform = ((t_end * steps_per_unit as f64).ceil() as usize).max(1);
    for i in 0..=n_uniform {
        times.push(t_end * i as f64 / n_uniform as f64);
    }
    times.extend(cdf.knots.iter().cloned().filter(|&t| t < t_end));
    times.extend(record.iter().cloned());
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    times.dedup_by(|a, b| (*a - *b).abs() < 1e-14);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = vec![spec.h; n_paths];
    let mut out = Vec::new();
    let grid = sol.grid;
    let record_at = |slice: &Slice, x: &[f64]| -> PathMoments {
        let mut sums = [0.0; 3];
        let mut sq = [0.0; 3];
        for &xi in x {
            let px = grid.interp(&slice.phi_x, xi, Extrap::FLAT);
            let pxx = grid.interp(&slice.phi_xx, xi, Extrap::FLAT);
            let v = [px, px * px, pxx * pxx];
            for k in 0..3 {
                sums[k] += v[k];
                sq[k] += v[k] * v[k];
            }
        }
        let n = x.len() as f64;
        let mean = [sums[0] / n, sums[1] / n, sums[2] / n];
        let mut stderr = [0.0; 3];
        for k in 0..3 {
            let var = (sq[k] / n - mean[k] * mean[k]).max(0.0) * n / (n - 1.0);
            stderr[k] = (var / n).sqrt();
        }
        PathMoments { t: slice.t, mean, stderr }
    };
    let mut ri = 0;
    let mut slice = sol.slice_at(0.0)?;
    for w in 0..times.len() {
        let t = times[w];
        while ri < record.len() && (record[ri] - t).abs() < 1e-14 {
            out.push(record_at(&slice, &x));
            ri += 1;
        }
        if w + 1 == times.len() {
            break;
        }
        let t1 = times[w + 1];
        let m = cdf.value(t);
        let dv = (spec.dxi(t1) - spec.dxi(t)).max(0.0);
        let sd = dv.sqrt();
        for xi in x.iter_mut() {
            let drift = m * dv * grid.interp(&slice.phi_x, *xi, Extrap::FLAT);
            let z: f64 = rng.sample(StandardNormal);
            *xi += drift + sd * z;
        }
        slice = sol.slice_at(t1)?;
    }
    Ok(out)
}

/// Λ_R(q) = 1 − ξ″(q)·E(∂ₓ²φ)²(q, X_q).
pub fn replicon(spec: &MixtureSpec, q: f64, stats: &LocalFieldStats) -> Result<f64> {
    if (stats.q - q).abs() > 1e-12 {
        return Err(Error::Precondition("statistics computed at a different q".into()));
    }
    Ok(1.0 - spec.ddxi(q) * stats.e_phixx_sq)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn closed_form_delta0(spec: &MixtureSpec) -> f64 {
        log_cosh(spec.h) + 0.5 * spec.dxi(1.0)
    }

    #[test]
    fn delta0_closed_form() {
        for h in [0.0, 0.5, 1.0] {
            let spec = MixtureSpec::new(vec![(2, 1.0), (4, 1.0)], h).unwrap();
            let nu = AtomicMeasure::dirac(0.0).unwrap();
            let sol = solve_recursion(&spec, &nu, &GridParams::default()).unwrap();
            assert!((sol.phi0_at_h() - closed_form_delta0(&spec)).abs() < 1e-8);
            let p = phi0_at_h(&spec, &nu, &GridParams::default()).unwrap();
            assert!((p - closed_form_delta0(&spec)).abs() < 1e-8);
        }
    }

    #[test]
    fn delta1_is_gaussian_average() {
        let spec = MixtureSpec::new(vec![(2, 1.0)], 0.3).unwrap();
        let nu = AtomicMeasure::dirac(1.0).unwrap();
        let sol = solve_recursion(&spec, &nu, &GridParams::default()).unwrap();
        let gh = GaussHermite::new(200);
        let a = spec.dxi(1.0).sqrt();
        let exact = gh.expect(|z| log_cosh(0.3 + a * z));
        assert!((sol.phi0_at_h() - exact).abs() < 1e-8, "{} {}", sol.phi0_at_h(), exact);
    }

    #[test]
    fn terminal_slice_exact() {
        let spec = MixtureSpec::sk(1.0, 0.0).unwrap();
        let nu = AtomicMeasure::new(vec![0.2, 0.6], vec![0.4, 0.6]).unwrap();
        let sol = solve_recursion(&spec, &nu, &GridParams::default()).unwrap();
        let last = sol.slices.last().unwrap();
        assert_eq!(last.t, 1.0);
        for i in 0..sol.grid.n {
            assert_eq!(last.phi[i], log_cosh(sol.grid.x(i)));
        }
        sol.check_bounds(1e-8).unwrap();
    }

    #[test]
    fn small_shift_heat_step_exact_on_quadratics() {
        let grid = UniformGrid::symmetric(10.0, 201);
        let eng = Engine1d::new(grid, 64);
        let a = 0.4 * grid.dx;
        let sq: Vec<f64> = grid.points().iter().map(|x| x * x).collect();
        let lin = grid.points();
        let (v, aux) = eng.step(&sq, Extrap::abs(2.0 * grid.half_width()), a, 0.0, &[(&lin, Extrap::abs(1.0))]);
        for i in 20..180 {
            assert!((v[i] - sq[i] - a * a).abs() < 1e-12);
            assert!((aux[0][i] - lin[i]).abs() < 1e-12);
        }
        // (1/m) log E exp(m(x + aZ)) = x + m a²/2
        let (v, _) = eng.step(&lin, Extrap::abs(1.0), a, 0.7, &[]);
        for i in 20..180 {
            assert!((v[i] - lin[i] - 0.35 * a * a).abs() < 1e-10, "{}", v[i] - lin[i]);
        }
        let (p, _) = eng.point(&lin, Extrap::abs(1.0), a, 0.7, 0.123, &[]);
        assert!((p - 0.123 - 0.35 * a * a).abs() < 1e-10);
    }

    #[test]
    fn fd_matches_recursion() {
        let spec = MixtureSpec::sk(1.0, 0.3).unwrap();
        let nu = AtomicMeasure::new(vec![0.3, 0.7], vec![0.5, 0.5]).unwrap();
        let p = GridParams::default();
        let r = solve_recursion(&spec, &nu, &p).unwrap();
        let f = solve_fd(&spec, &nu, &p).unwrap();
        let err = r.slices[0].phi.iter().zip(&f.slices[0].phi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-4, "sup error {err}");
    }

    #[test]
    fn sk_delta0_replicon() {
        let beta = 0.6;
        let spec = MixtureSpec::sk(beta, 0.0).unwrap();
        let nu = AtomicMeasure::dirac(0.0).unwrap();
        let sol = solve_recursion(&spec, &nu, &GridParams::default()).unwrap();
        let st = local_field_stats(&sol, 0.0, LocalFieldMethod::DensityQuadrature, 0, 0).unwrap();
        let lr = replicon(&spec, 0.0, &st).unwrap();
        assert!((lr - (1.0 - 2.0 * beta * beta)).abs() < 1e-4, "{lr}");
    }

    #[test]
    fn zero_drift_quadrature_vs_mc() {
        let spec = MixtureSpec::sk(1.0, 0.0).unwrap();
        let nu = AtomicMeasure::dirac(1.0).unwrap();
        let sol = solve_recursion(&spec, &nu, &GridParams::default()).unwrap();
        let q = 0.5;
        let det = local_field_stats(&sol, q, LocalFieldMethod::DensityQuadrature, 0, 0).unwrap();
        let slice = sol.slice_at(q).unwrap();
        let gh = GaussHermite::new(100);
        let sd = spec.dxi(q).sqrt();
        let direct = gh.expect(|z| sol.grid.interp(&slice.phi_x, sd * z, Extrap::FLAT).powi(2));
        assert!((det.e_phix_sq - direct).abs() < 1e-9);
        let mc = local_field_stats(&sol, q, LocalFieldMethod::SdeMonteCarlo, 20000, 5).unwrap();
        let se = mc.mc_stderr.unwrap()[1];
        assert!((mc.e_phix_sq - direct).abs() < 4.0 * se + 1e-3);
    }
}
