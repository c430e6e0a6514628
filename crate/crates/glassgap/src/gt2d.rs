//! Two-replica Guerra–Talagrand functional on the degenerate overlap path.
//!
//! For t ≥ q the two coordinates diffuse independently with covariance
//! ξ″(t)·I and the CDF is μ(t), so on each constancy interval the solution
//! is an exact Hopf–Cole Gaussian smoothing that factors into a y-pass and an
//! x-pass. For t ≤ q the coordinates move together and the diagonal
//! v(t, x) = u(t, x, x) solves a 1D Parisi equation with CDF μ(t)/2.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ising_statics::correction_term;
use crate::measure::{AtomicMeasure, StepCdf};
use crate::model::MixtureSpec;
use crate::numerics::grid::{Extrap, UniformGrid};
use crate::numerics::optim::golden_section;
use crate::numerics::tridiag::solve_tridiag;
use crate::parisi_pde::{default_half_width, log_cosh, Engine1d};

/// f_λ(x, y) = log(¼ Σ exp(ε₁x + ε₂y + λε₁ε₂)) and ∂_λ f_λ(x, y).
pub fn terminal_data(lambda: f64, x: f64, y: f64) -> (f64, f64) {
    let p = lambda + log_cosh(x + y);
    let m = -lambda + log_cosh(x - y);
    let mx = p.max(m);
    let (ep, em) = ((p - mx).exp(), (m - mx).exp());
    (mx + (ep + em).ln() - std::f64::consts::LN_2, (ep - em) / (ep + em))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gt2dParams {
    pub n_x: usize,
    pub half_width: Option<f64>,
    pub quad_order: usize,
}

impl Default for Gt2dParams {
    fn default() -> Self {
        Self { n_x: 256, half_width: None, quad_order: 64 }
    }
}

/// u and ∂_λu at every knot of μ in [0, 1], for one λ.
#[derive(Clone, Debug)]
pub struct UStack {
    pub lambda: f64,
    /// Descending; the first entry is t = 1.
    pub knots: Vec<f64>,
    pub u: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Solution2D {
    pub lambda: f64,
    pub q: f64,
    /// u(q, ·, ·) row-major with x the slow index.
    pub u_q: Vec<f64>,
    pub w_q: Vec<f64>,
    /// v(0, ·) and ∂_λv(0, ·) on the grid.
    pub v0: Vec<f64>,
    pub dv0: Vec<f64>,
    pub v0_h: f64,
    pub dv0_h: f64,
    /// 𝒫(λ, q).
    pub value: f64,
    /// ∂_λ𝒫(λ, q).
    pub d_lambda: f64,
}

pub struct Gt2d {
    pub spec: MixtureSpec,
    pub mu: AtomicMeasure,
    pub grid: UniformGrid,
    eng: Engine1d,
    cdf: StepCdf,
    /// L = ∫ξ″(t)·t·μ(t) dt.
    pub l_const: f64,
}

impl Gt2d {
    pub fn new(spec: &MixtureSpec, mu: &AtomicMeasure, params: &Gt2dParams) -> Result<Self> {
        spec.validate()?;
        if params.n_x < 16 {
            return Err(Error::Domain("grid needs at least 16 points per axis".into()));
        }
        if params.quad_order < 32 {
            return Err(Error::Domain("quadrature order must be >= 32".into()));
        }
        let l = params.half_width.unwrap_or_else(|| default_half_width(spec));
        if l < 8.0 + spec.h {
            return Err(Error::GridTooSmall(format!("half-width {l} below 8 + |h|")));
        }
        let grid = UniformGrid::symmetric(l, params.n_x);
        Ok(Self {
            spec: spec.clone(),
            mu: mu.clone(),
            grid,
            eng: Engine1d::new(grid, params.quad_order),
            cdf: mu.step_cdf(),
            l_const: 2.0 * correction_term(spec, mu),
        })
    }

    fn n(&self) -> usize {
        self.grid.n
    }

    /// Terminal u and ∂_λu on the grid.
    pub fn terminal(&self, lambda: f64) -> (Vec<f64>, Vec<f64>) {
        let n = self.n();
        let mut u = vec![0.0; n * n];
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let (f, df) = terminal_data(lambda, self.grid.x(i), self.grid.x(j));
                u[i * n + j] = f;
                w[i * n + j] = df;
            }
        }
        (u, w)
    }

    /// One exact interval of the independent-coordinate flow.
    fn pass2d(&self, u: &[f64], w: &[f64], a: f64, m: f64) -> (Vec<f64>, Vec<f64>) {
        let n = self.n();
        if a == 0.0 {
            return (u.to_vec(), w.to_vec());
        }
        let ex = Extrap::abs(1.0);
        let mut u1 = vec![0.0; n * n];
        let mut w1 = vec![0.0; n * n];
        for i in 0..n {
            let r = i * n..(i + 1) * n;
            let (fu, fw) = self.eng.step(&u[r.clone()], ex, a, m, &[(&w[r.clone()], Extrap::FLAT)]);
            u1[r.clone()].copy_from_slice(&fu);
            w1[r].copy_from_slice(&fw[0]);
        }
        let (mut ut, mut wt) = (transpose(&u1, n), transpose(&w1, n));
        for j in 0..n {
            let r = j * n..(j + 1) * n;
            let (fu, fw) = self.eng.step(&ut[r.clone()], ex, a, m, &[(&wt[r.clone()], Extrap::FLAT)]);
            ut[r.clone()].copy_from_slice(&fu);
            wt[r].copy_from_slice(&fw[0]);
        }
        (transpose(&ut, n), transpose(&wt, n))
    }

    pub fn stack(&self, lambda: f64) -> UStack {
        let (mut u, mut w) = self.terminal(lambda);
        let mut knots = vec![1.0];
        let mut us = vec![u.clone()];
        let mut ws = vec![w.clone()];
        for j in (1..self.cdf.values.len()).rev() {
            let (a, b, m) = (self.cdf.knots[j], self.cdf.knots[j + 1], self.cdf.values[j]);
            let s = (self.spec.dxi(b) - self.spec.dxi(a)).max(0.0).sqrt();
            let (nu, nw) = self.pass2d(&u, &w, s, m);
            u = nu;
            w = nw;
            knots.push(a);
            us.push(u.clone());
            ws.push(w.clone());
        }
        UStack { lambda, knots, u: us, w: ws }
    }

    /// u(q, ·, ·) and ∂_λu(q, ·, ·).
    pub fn u_at(&self, stack: &UStack, q: f64) -> (Vec<f64>, Vec<f64>) {
        // smallest stored knot ≥ q
        let idx = stack.knots.iter().rposition(|&t| t >= q).unwrap_or(0);
        let top = stack.knots[idx];
        if top == q {
            return (stack.u[idx].clone(), stack.w[idx].clone());
        }
        let m = self.cdf.value(q);
        let s = (self.spec.dxi(top) - self.spec.dxi(q)).max(0.0).sqrt();
        self.pass2d(&stack.u[idx], &stack.w[idx], s, m)
    }

    /// (u, ∂_λu)(0, x, x) with the last interval evaluated pointwise.
    fn u_point(&self, stack: &UStack, x: f64) -> (f64, f64) {
        let idx = stack.knots.len() - 1;
        let top = stack.knots[idx];
        let m = self.cdf.value(0.0);
        let s = (self.spec.dxi(top) - self.spec.dxi(0.0)).max(0.0).sqrt();
        let n = self.n();
        let ex = Extrap::abs(1.0);
        let (u, w) = (&stack.u[idx], &stack.w[idx]);
        let mut col_u = vec![0.0; n];
        let mut col_w = vec![0.0; n];
        for i in 0..n {
            let r = i * n..(i + 1) * n;
            let (p, aux) = self.eng.point(&u[r.clone()], ex, s, m, x, &[(&w[r], Extrap::FLAT)]);
            col_u[i] = p;
            col_w[i] = aux[0];
        }
        let (p, aux) = self.eng.point(&col_u, ex, s, m, x, &[(&col_w, Extrap::FLAT)]);
        (p, aux[0])
    }

    /// Solves on [0, q] from the diagonal of u(q).
    pub fn solve(&self, stack: &UStack, q: f64) -> Result<Solution2D> {
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::Domain(format!("q = {q} outside [0,1]")));
        }
        let n = self.n();
        let (u_q, w_q) = self.u_at(stack, q);
        let mut v: Vec<f64> = (0..n).map(|i| u_q[i * n + i]).collect();
        let mut dv: Vec<f64> = (0..n).map(|i| w_q[i * n + i]).collect();
        let tilted = StepCdf::tilted(&self.mu, q);
        let pieces = tilted.pieces_between(0.0, q);
        let ex = Extrap::abs(2.0);
        let h = self.spec.h;
        let (mut v0_h, mut dv0_h) = if pieces.is_empty() {
            self.u_point(stack, h)
        } else {
            (self.grid.interp(&v, h, ex), self.grid.interp(&dv, h, Extrap::FLAT))
        };
        for (k, &(a, b, m)) in pieces.iter().enumerate().rev() {
            let s = (self.spec.dxi(b) - self.spec.dxi(a)).max(0.0).sqrt();
            if k == 0 {
                let (p, aux) = self.eng.point(&v, ex, s, m, h, &[(&dv, Extrap::FLAT)]);
                v0_h = p;
                dv0_h = aux[0];
            }
            let (nv, ndv) = self.eng.step(&v, ex, s, m, &[(&dv, Extrap::FLAT)]);
            v = nv;
            dv = ndv.into_iter().next().unwrap();
        }
        let lambda = stack.lambda;
        Ok(Solution2D {
            lambda,
            q,
            u_q,
            w_q,
            v0: v,
            dv0: dv,
            v0_h,
            dv0_h,
            value: v0_h - lambda * q - self.l_const,
            d_lambda: dv0_h - q,
        })
    }

    /// 𝒫(λ, q) and ∂_λ𝒫(λ, q).
    pub fn value(&self, lambda: f64, q: f64) -> Result<(f64, f64)> {
        let s = self.solve(&self.stack(lambda), q)?;
        Ok((s.value, s.d_lambda))
    }

    /// 𝒫(0, q), which equals 2P_I(μ) on this grid for every q.
    pub fn baseline(&self) -> Result<f64> {
        Ok(self.solve(&self.stack(0.0), 0.0)?.value)
    }
}

fn transpose(a: &[f64], n: usize) -> Vec<f64> {
    let mut t = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            t[j * n + i] = a[i * n + j];
        }
    }
    t
}

/// u(q, ·, ·) by Peaceman–Rachford alternating-direction steps with the
/// nonlinear term explicit; an independent discretization for comparison
/// with the exact interval recursion.
pub fn solve_u2d_adi(gt: &Gt2d, lambda: f64, q: f64, steps_per_unit: usize) -> Result<Vec<f64>> {
    let n = gt.n();
    let dx = gt.grid.dx;
    let inv2 = 1.0 / (dx * dx);
    let (mut u, _) = gt.terminal(lambda);
    let cdf = &gt.cdf;
    let mut scratch = Vec::new();
    let mut line = vec![0.0; n];
    let (mut sub, mut diag, mut sup) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    // second difference and squared slope along one axis with Neumann data ±1
    let d2 = |f: &dyn Fn(usize) -> f64, i: usize| -> f64 {
        if i == 0 {
            (2.0 * f(1) - 2.0 * f(0) + 2.0 * dx) * inv2
        } else if i == n - 1 {
            (2.0 * f(n - 2) - 2.0 * f(n - 1) + 2.0 * dx) * inv2
        } else {
            (f(i + 1) - 2.0 * f(i) + f(i - 1)) * inv2
        }
    };
    let g2 = |f: &dyn Fn(usize) -> f64, i: usize| -> f64 {
        if i == 0 || i == n - 1 {
            1.0
        } else {
            let d = (f(i + 1) - f(i - 1)) / (2.0 * dx);
            d * d
        }
    };
    for (a, b, m) in cdf.pieces_between(q, 1.0).into_iter().rev() {
        let steps = (((b - a) * steps_per_unit as f64).ceil() as usize).max(1);
        let dt = (b - a) / steps as f64;
        for s in 0..steps {
            let tm = b - (s as f64 + 0.5) * dt;
            let c = 0.5 * gt.spec.ddxi(tm);
            if 2.0 * dt * c * m > dx {
                return Err(Error::Unstable("advective CFL number exceeds 1".into()));
            }
            let al = 0.5 * dt * c * inv2;
            for i in 0..n {
                sub[i] = -al;
                diag[i] = 1.0 + 2.0 * al;
                sup[i] = -al;
            }
            sup[0] = -2.0 * al;
            sub[n - 1] = -2.0 * al;
            let bc = 0.5 * dt * c * 2.0 * dx * inv2;
            // implicit in x, explicit in y
            let mut half = vec![0.0; n * n];
            for j in 0..n {
                for i in 0..n {
                    let fy = |k: usize| u[i * n + k];
                    let fx = |k: usize| u[k * n + j];
                    line[i] = u[i * n + j] + 0.5 * dt * c * (d2(&fy, j) + m * (g2(&fx, i) + g2(&fy, j)));
                }
                line[0] += bc;
                line[n - 1] += bc;
                solve_tridiag(&sub, &diag, &sup, &mut line, &mut scratch);
                for i in 0..n {
                    half[i * n + j] = line[i];
                }
            }
            // implicit in y, explicit in x
            for i in 0..n {
                for j in 0..n {
                    let fy = |k: usize| half[i * n + k];
                    let fx = |k: usize| half[k * n + j];
                    line[j] = half[i * n + j] + 0.5 * dt * c * (d2(&fx, i) + m * (g2(&fx, i) + g2(&fy, j)));
                }
                line[0] += bc;
                line[n - 1] += bc;
                solve_tridiag(&sub, &diag, &sup, &mut line, &mut scratch);
                u[i * n..(i + 1) * n].copy_from_slice(&line);
            }
        }
    }
    Ok(u)
}

/// Negative eigenpair of [[a, b], [b, 0]] for b ≠ 0.
pub fn hessian_eigenpair(a: f64, b: f64) -> Option<(f64, (f64, f64))> {
    if b == 0.0 {
        return None;
    }
    let r = a - (a * a + 4.0 * b * b).sqrt();
    Some((0.5 * r, (r / b, 1.0)))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BarrierOptions {
    /// Offsets from q* tried in order of increasing magnitude, on both sides.
    pub offsets: Vec<f64>,
    pub dlambda: f64,
    pub lambda_max: f64,
    pub max_evals: usize,
}

impl Default for BarrierOptions {
    fn default() -> Self {
        Self { offsets: vec![0.01, 0.02, 0.04, 0.08], dlambda: 0.02, lambda_max: 1.0, max_evals: 400 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BarrierResult {
    pub q_star: f64,
    pub q: f64,
    pub lambda: f64,
    pub value: f64,
    /// 𝒫(0, q) = 2P_I(μ) on the same grid.
    pub baseline: f64,
    pub gap: f64,
    /// Finite-difference ∂²_λ𝒫(0, q*) and ∂_q∂_λ𝒫(0, q*).
    pub hessian: (f64, f64),
    pub eigenpair: Option<(f64, (f64, f64))>,
    pub evaluations: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BarrierSearch {
    pub found: Option<BarrierResult>,
    pub evaluations: usize,
    pub tried: Vec<(f64, f64, f64)>,
}

/// Looks for (λ*, q) with 𝒫(λ*, q) < 𝒫(0, q) for q near q*. The λ start
/// comes from the Newton step −∂_λ𝒫/∂²_λ𝒫 and the eigen-direction of the
/// λ–q Hessian at (0, q*).
pub fn barrier_search(gt: &Gt2d, q_star: f64, opts: &BarrierOptions) -> Result<BarrierSearch> {
    if !gt.mu.atoms().iter().any(|&a| (a - q_star).abs() < 1e-12) {
        return Err(Error::Precondition(format!("q* = {q_star} is not an atom of the measure")));
    }
    let dl = opts.dlambda;
    let s0 = gt.stack(0.0);
    let sp = gt.stack(dl);
    let sm = gt.stack(-dl);
    let mut evals = 3;
    let mut tried = Vec::new();
    let d2 = |q: f64| -> Result<(f64, f64, f64)> {
        let a = gt.solve(&s0, q)?;
        let p = gt.solve(&sp, q)?;
        let m = gt.solve(&sm, q)?;
        Ok((a.value, a.d_lambda, (p.value - 2.0 * a.value + m.value) / (dl * dl)))
    };
    let (_, _, a_star) = d2(q_star)?;
    let hq = 1e-3;
    let b_star = (gt.solve(&s0, (q_star + hq).min(1.0))?.d_lambda - gt.solve(&s0, (q_star - hq).max(0.0))?.d_lambda)
        / ((q_star + hq).min(1.0) - (q_star - hq).max(0.0));
    let eig = hessian_eigenpair(a_star, b_star);
    let mut offsets: Vec<f64> = opts.offsets.iter().flat_map(|&o| [o, -o]).collect();
    offsets.sort_by(|a, b| a.abs().partial_cmp(&b.abs()).unwrap());
    for off in offsets {
        let q = q_star + off;
        if !(0.0..=1.0).contains(&q) || evals >= opts.max_evals {
            continue;
        }
        let (base, d1, dd) = d2(q)?;
        let mut guess = if dd > 0.0 { -d1 / dd } else { -d1.signum() * dl };
        if let Some((_, (vl, vq))) = eig {
            if guess == 0.0 {
                guess = off * vl / vq;
            }
        }
        guess = guess.clamp(-opts.lambda_max, opts.lambda_max);
        let (lo, hi) = if guess >= 0.0 { (0.0, (3.0 * guess).min(opts.lambda_max)) } else { ((3.0 * guess).max(-opts.lambda_max), 0.0) };
        let mut count = 0;
        let (lam, val) = golden_section(
            |l| {
                count += 1;
                gt.solve(&gt.stack(l), q).map(|s| s.value).unwrap_or(f64::INFINITY)
            },
            lo,
            hi,
            1e-6,
            40,
        );
        evals += 3 + count;
        tried.push((q, lam, base - val));
        if base - val > 0.0 && lam != 0.0 {
            return Ok(BarrierSearch {
                found: Some(BarrierResult {
                    q_star,
                    q,
                    lambda: lam,
                    value: val,
                    baseline: base,
                    gap: base - val,
                    hessian: (a_star, b_star),
                    eigenpair: eig,
                    evaluations: evals,
                }),
                evaluations: evals,
                tried,
            });
        }
    }
    Ok(BarrierSearch { found: None, evaluations: evals, tried })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RateOptions {
    pub n_lambda: usize,
    pub lambda_window: f64,
    pub refine_iters: usize,
    pub gfeb_tol: f64,
    /// Atoms lighter than this are not treated as certified zeros.
    pub zero_mass_min: f64,
}

impl Default for RateOptions {
    fn default() -> Self {
        Self { n_lambda: 41, lambda_window: 1.0, refine_iters: 20, gfeb_tol: 1e-6, zero_mass_min: 1e-3 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BarrierCertificate {
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
    pub epsilon: f64,
    pub height: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RateCurve {
    pub q_grid: Vec<f64>,
    pub i_lb: Vec<f64>,
    pub lambda_star: Vec<f64>,
    pub is_zero: Vec<bool>,
    pub zeros: Vec<f64>,
    pub baseline: f64,
    pub h_cal: f64,
    pub certificate: Option<BarrierCertificate>,
    pub gfeb: bool,
}

impl RateCurve {
    /// Rows `q,i_lb,is_zero` with a header.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("q,i_lb,is_zero\n");
        for i in 0..self.q_grid.len() {
            s.push_str(&format!("{},{:.12e},{}\n", self.q_grid[i], self.i_lb[i], self.is_zero[i]));
        }
        s
    }
}

/// Largest window-minimum of `i_lb` over points q2 flanked by certified
/// zeros q1 < q2 − ε and q3 > q2 + ε, with ε the smallest grid spacing.
pub(crate) fn certify(q_grid: &[f64], i_lb: &[f64], zeros: &[f64]) -> (f64, Option<BarrierCertificate>) {
    let eps = if q_grid.len() > 1 {
        q_grid.windows(2).map(|w| (w[1] - w[0]).abs()).fold(f64::INFINITY, f64::min)
    } else {
        0.0
    };
    let mut h_cal = 0.0;
    let mut certificate = None;
    for &q2 in q_grid {
        let below = zeros.iter().filter(|&&z| z < q2 - eps).last();
        let above = zeros.iter().find(|&&z| z > q2 + eps);
        if let (Some(&q1), Some(&q3)) = (below, above) {
            let height = q_grid
                .iter()
                .zip(i_lb)
                .filter(|(q, _)| (**q - q2).abs() <= eps + 1e-12)
                .map(|(_, &i)| i)
                .fold(f64::INFINITY, f64::min);
            if height > h_cal {
                h_cal = height;
                certificate = Some(BarrierCertificate { q1, q2, q3, epsilon: eps, height });
            }
        }
    }
    (h_cal, certificate)
}

/// Illinois iteration for ∂_λ𝒫(λ, q) = 0 between two λ with derivatives
/// of opposite sign; returns the best (λ, 𝒫) visited.
fn refine_stationary(gt: &Gt2d, q: f64, a: (f64, f64), b: (f64, f64), iters: usize) -> Result<(f64, f64)> {
    let (mut a, mut b) = (a, b);
    let mut best = (f64::NAN, f64::INFINITY);
    let mut last_side = 0i8;
    for _ in 0..iters {
        let l = b.0 - b.1 * (b.0 - a.0) / (b.1 - a.1);
        let s = gt.solve(&gt.stack(l), q)?;
        if s.value < best.1 {
            best = (l, s.value);
        }
        if s.d_lambda.abs() < 1e-12 || (b.0 - a.0).abs() < 1e-10 {
            break;
        }
        if (s.d_lambda > 0.0) == (b.1 > 0.0) {
            b = (l, s.d_lambda);
            if last_side == 1 {
                a.1 *= 0.5;
            }
            last_side = 1;
        } else {
            a = (l, s.d_lambda);
            if last_side == -1 {
                b.1 *= 0.5;
            }
            last_side = -1;
        }
    }
    Ok(best)
}

/// Certified lower bound I_lb(q) = 2P_I(μ) − min_λ 𝒫(λ, q), clamped at 0,
/// and the barrier height ℋ restricted to triples whose outer points are
/// certified zeros. Negative q use the mirror image when the model is
/// symmetric (h = 0, ξ even) and are left uninformative (0) otherwise.
pub fn rate_curve(gt: &Gt2d, q_grid: &[f64], opts: &RateOptions) -> Result<RateCurve> {
    if !gt.spec.is_convex() {
        return Err(Error::Precondition(
            "the two-replica bound requires xi convex on [-1,1]; this mixture is not".into(),
        ));
    }
    if q_grid.iter().any(|&q| !(-1.0..=1.0).contains(&q)) {
        return Err(Error::Domain("q grid must lie in [-1,1]".into()));
    }
    let symmetric = gt.spec.h == 0.0 && gt.spec.is_even();
    let nl = opts.n_lambda.max(3);
    let lambdas: Vec<f64> = (0..nl).map(|i| -opts.lambda_window + 2.0 * opts.lambda_window * i as f64 / (nl - 1) as f64).collect();
    let stacks: Vec<UStack> = lambdas.iter().map(|&l| gt.stack(l)).collect();
    let baseline = gt.solve(&stacks[nl / 2], 0.0)?.value;
    let mut cache: Vec<(f64, f64, f64)> = Vec::new();
    let mut eval_q = |q: f64| -> Result<(f64, f64)> {
        if let Some(c) = cache.iter().find(|c| c.0 == q) {
            return Ok((c.1, c.2));
        }
        let vals: Vec<(f64, f64)> =
            stacks.iter().map(|s| gt.solve(s, q).map(|r| (r.value, r.d_lambda))).collect::<Result<_>>()?;
        let (bi, _) = vals.iter().enumerate().min_by(|a, b| a.1 .0.partial_cmp(&b.1 .0).unwrap()).unwrap();
        let (mut lam, mut best) = (lambdas[bi], vals[bi].0);
        let d = vals[bi].1;
        let side = if d > 0.0 && bi > 0 {
            Some(bi - 1)
        } else if d < 0.0 && bi + 1 < nl {
            Some(bi + 1)
        } else {
            None
        };
        let side = side.filter(|&j| opts.refine_iters > 0 && vals[j].1 * d < 0.0);
        if let Some(j) = side {
            let (l, v) = refine_stationary(gt, q, (lambdas[bi], d), (lambdas[j], vals[j].1), opts.refine_iters)?;
            if v < best {
                lam = l;
                best = v;
            }
        }
        let i = (baseline - best).max(0.0);
        cache.push((q, i, lam));
        Ok((i, lam))
    };
    let mut i_lb = Vec::with_capacity(q_grid.len());
    let mut lambda_star = Vec::with_capacity(q_grid.len());
    for &q in q_grid {
        if q >= 0.0 {
            let (i, l) = eval_q(q)?;
            i_lb.push(i);
            lambda_star.push(l);
        } else if symmetric {
            let (i, l) = eval_q(-q)?;
            i_lb.push(i);
            lambda_star.push(-l);
        } else {
            i_lb.push(0.0);
            lambda_star.push(0.0);
        }
    }
    let mut zeros: Vec<f64> = gt
        .mu
        .atoms()
        .iter()
        .zip(gt.mu.masses())
        .filter(|(_, &w)| w >= opts.zero_mass_min)
        .map(|(&a, _)| a)
        .collect();
    if symmetric {
        let neg: Vec<f64> = zeros.iter().filter(|&&z| z > 0.0).map(|z| -z).collect();
        zeros.extend(neg);
    }
    zeros.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let is_zero = q_grid.iter().map(|q| zeros.iter().any(|z| (z - q).abs() < 1e-12)).collect();

    let (h_cal, certificate) = certify(q_grid, &i_lb, &zeros);
    Ok(RateCurve {
        q_grid: q_grid.to_vec(),
        i_lb,
        lambda_star,
        is_zero,
        zeros,
        baseline,
        h_cal,
        gfeb: h_cal > opts.gfeb_tol,
        certificate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn terminal_identities() {
        for &(x, y) in &[(0.0, 0.0), (0.3, -1.2), (5.0, 2.0), (-30.0, 40.0)] {
            let (f, df) = terminal_data(0.0, x, y);
            assert!((f - log_cosh(x) - log_cosh(y)).abs() < 1e-12);
            assert!((df - x.tanh() * y.tanh()).abs() < 1e-12);
        }
        for &l in &[-0.7, 0.0, 0.4, 3.0] {
            assert!((terminal_data(l, 0.0, 0.0).0 - log_cosh(l)).abs() < 1e-12);
        }
        let d = 1e-5;
        let fd = (terminal_data(0.3 + d, 0.4, -0.2).0 - terminal_data(0.3 - d, 0.4, -0.2).0) / (2.0 * d);
        assert!((fd - terminal_data(0.3, 0.4, -0.2).1).abs() < 1e-9);
    }

    #[test]
    fn eigenpair_arithmetic() {
        let (ev, (a, b)) = hessian_eigenpair(0.0, 1.0).unwrap();
        assert!((ev + 1.0).abs() < 1e-15);
        assert!((a + 2.0).abs() < 1e-15 && b == 1.0);
        assert!(hessian_eigenpair(1.0, 0.0).is_none());
    }
}
