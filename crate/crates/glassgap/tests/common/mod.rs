//! Randomized invariant checks shared by the property tests and the
//! acceptance run. Each `check_*` runs `cases` proptest cases and returns
//! the number executed.

use glassgap::dynamics::{build_metropolis, difficulty_bound};
use glassgap::measure::AtomicMeasure;
use glassgap::model::{overlap, sample_hamiltonian, MixtureSpec};
use glassgap::parisi_pde::{local_field_stats, solve_recursion, GridParams, LocalFieldMethod};
use glassgap::spherical::{gt_value_sph, manifold_gap_bound, minimize_spherical, psi, rate_curve_sph, SphericalOptions};
use glassgap::gt2d::RateOptions;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

pub type Check = fn(u32) -> Result<u32, String>;

pub const ALL: [(&str, Check, u32); 10] = [
    ("phi_bounds", check_phi_bounds, 24),
    ("martingale", check_martingale, 16),
    ("ito_identity", check_ito, 16),
    ("measure_monotone", check_monotone, 24),
    ("measure_lipschitz", check_lipschitz, 24),
    ("rate_zero_at_support", check_rate_curve, 16),
    ("bound_monotone", check_bound_monotone, 40),
    ("kernel_reversible", check_kernel, 24),
    ("overlap_lipschitz", check_overlap, 40),
    ("gt_sph_symmetric", check_sph_symmetry, 24),
];

fn small_grid() -> GridParams {
    GridParams { n_x: 512, quad_order: 64, ..GridParams::default() }
}

fn run<S: Strategy>(cases: u32, strat: S, f: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<u32, String> {
    let mut runner = TestRunner::new(Config { cases, failure_persistence: None, ..Config::default() });
    runner.run(&strat, f).map_err(|e| e.to_string())?;
    Ok(cases)
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), TestCaseError> {
    if ok {
        Ok(())
    } else {
        Err(TestCaseError::fail(msg()))
    }
}

fn ok<T, E: std::fmt::Display>(r: std::result::Result<T, E>) -> Result<T, TestCaseError> {
    r.map_err(|e| TestCaseError::fail(e.to_string()))
}

/// ξ = a₂t² + a₄t⁴ + a₃t³ (possibly zero cubic part) and a field.
fn mixture() -> impl Strategy<Value = MixtureSpec> {
    (0.2f64..1.5, 0.0f64..1.0, prop::bool::ANY, 0.0f64..1.0).prop_map(|(a2, a4, odd, h)| {
        let mut terms = vec![(2, a2), (4, a4)];
        if odd {
            terms.push((3, 0.3));
        }
        MixtureSpec::new(terms, h).unwrap()
    })
}

/// A measure with 1 to 3 atoms in [0, 0.95].
fn measure() -> impl Strategy<Value = AtomicMeasure> {
    prop::collection::vec((0.0f64..0.95, 0.05f64..1.0), 1..=3).prop_map(|pts| AtomicMeasure::from_unsorted(&pts, 1e-3).unwrap())
}

pub fn check_phi_bounds(cases: u32) -> Result<u32, String> {
    run(cases, (mixture(), measure()), |(spec, nu)| {
        let sol = ok(solve_recursion(&spec, &nu, &small_grid()))?;
        ok(sol.check_bounds(1e-9))
    })
}

/// E ∂ₓφ(t, X_t) does not depend on t.
pub fn check_martingale(cases: u32) -> Result<u32, String> {
    run(cases, (mixture(), measure(), 0.05f64..0.95), |(spec, nu, t)| {
        let sol = ok(solve_recursion(&spec, &nu, &GridParams::default()))?;
        let at = |q| ok(local_field_stats(&sol, q, LocalFieldMethod::DensityQuadrature, 0, 0)).map(|s| s.e_phix);
        let (a, b) = (at(0.0)?, at(t)?);
        ensure((a - b).abs() < 1e-4, || format!("E phi_x moved from {a} to {b} at t = {t}"))
    })
}

/// d/dt E(∂ₓφ)² = ξ″(t) E(∂ₓ²φ)² away from the atoms.
pub fn check_ito(cases: u32) -> Result<u32, String> {
    run(cases, (mixture(), measure(), 0.05f64..0.9), |(spec, nu, t)| {
        let dt = 1e-4;
        prop_assume!(nu.atoms().iter().all(|q| (q - t).abs() > 2.0 * dt));
        let sol = ok(solve_recursion(&spec, &nu, &GridParams::default()))?;
        let st = |q| ok(local_field_stats(&sol, q, LocalFieldMethod::DensityQuadrature, 0, 0));
        let slope = (st(t + dt)?.e_phix_sq - st(t - dt)?.e_phix_sq) / (2.0 * dt);
        let rhs = spec.ddxi(t) * st(t)?.e_phixx_sq;
        ensure((slope - rhs).abs() < 1e-4 * (1.0 + rhs.abs()), || format!("slope {slope} vs {rhs}"))
    })
}

/// Moving every atom right lowers the CDF pointwise and so lowers φ(0, h).
pub fn check_monotone(cases: u32) -> Result<u32, String> {
    run(cases, (mixture(), measure(), 0.0f64..0.05), |(spec, nu, shift)| {
        let pts: Vec<(f64, f64)> = nu.atoms().iter().zip(nu.masses()).map(|(&q, &w)| ((q + shift).min(1.0), w)).collect();
        let right = ok(AtomicMeasure::from_unsorted(&pts, 0.0))?;
        let g = small_grid();
        let lo = ok(solve_recursion(&spec, &right, &g))?.phi0_at_h();
        let hi = ok(solve_recursion(&spec, &nu, &g))?.phi0_at_h();
        ensure(lo <= hi + 1e-10, || format!("{lo} > {hi}"))
    })
}

/// |φ_μ(0,h) − φ_ν(0,h)| ≤ ½ξ″(1)∫|μ − ν|.
pub fn check_lipschitz(cases: u32) -> Result<u32, String> {
    run(cases, (mixture(), measure(), measure()), |(spec, a, b)| {
        let g = small_grid();
        let pa = ok(solve_recursion(&spec, &a, &g))?.phi0_at_h();
        let pb = ok(solve_recursion(&spec, &b, &g))?.phi0_at_h();
        let bound = 0.5 * spec.ddxi(1.0) * a.l1_distance(&b);
        ensure((pa - pb).abs() <= bound + 1e-9, || format!("|{pa} - {pb}| > {bound}"))
    })
}

/// I_lb ≥ 0 everywhere and vanishes on the support of the minimizer.
pub fn check_rate_curve(cases: u32) -> Result<u32, String> {
    run(cases, (0.5f64..2.5, prop::bool::ANY), |(beta, mixed)| {
        let terms = if mixed { vec![(2, 0.3), (4, 1.0)] } else { vec![(4, 1.0)] };
        let spec = ok(MixtureSpec::scaled(beta, terms, 0.0))?;
        let rep = ok(minimize_spherical(&spec, 2, &SphericalOptions::default()))?;
        let mut grid: Vec<f64> = (0..=20).map(|i| -1.0 + 0.1 * i as f64).collect();
        grid.extend(rep.minimizer.atoms());
        grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
        grid.dedup();
        let rc = ok(rate_curve_sph(&spec, &rep, &grid, &RateOptions::default()))?;
        ensure(rc.i_lb.iter().all(|&v| v >= 0.0), || "negative I_lb".into())?;
        for &q in rep.minimizer.atoms() {
            let i = grid.iter().position(|&g| g == q).unwrap();
            ensure(rc.i_lb[i] < 1e-9, || format!("I_lb({q}) = {}", rc.i_lb[i]))?;
        }
        Ok(())
    })
}

/// Both gap bounds decrease in 𝒟 once 𝒟 > log 4.
pub fn check_bound_monotone(cases: u32) -> Result<u32, String> {
    run(cases, (1.4f64..30.0, 0.0f64..5.0, 0.01f64..0.5, 2usize..40), |(d, step, eps, n)| {
        let k = 2.0 / n as f64;
        let eps = eps.max(4.0 * k);
        let (a, b) = (difficulty_bound(k, 1.0, eps, d), difficulty_bound(k, 1.0, eps, d + step));
        let (a, b) = (a.unwrap(), b.unwrap());
        ensure(b <= a && b > 0.0, || format!("difficulty bound {a} -> {b}"))?;
        let (c, e) = (manifold_gap_bound(k, eps, d).unwrap(), manifold_gap_bound(k, eps, d + step).unwrap());
        ensure(e <= c && e > 0.0, || format!("manifold bound {c} -> {e}"))
    })
}

pub fn check_kernel(cases: u32) -> Result<u32, String> {
    run(cases, (2usize..=8, 0.0f64..3.0, any::<u64>(), prop::bool::ANY), |(n, beta, seed, lazy)| {
        let spec = ok(MixtureSpec::scaled(beta.max(1e-3), vec![(2, 1.0), (3, 0.5)], 0.2))?;
        let t = ok(sample_hamiltonian(&spec, n, seed))?;
        let k = ok(build_metropolis(&t, lazy))?;
        ok(k.check(1e-12))
    })
}

/// A single spin flip moves R₁₂ by exactly 2/N.
pub fn check_overlap(cases: u32) -> Result<u32, String> {
    run(cases, (1usize..=20, any::<u32>(), any::<u32>(), any::<u8>()), |(n, x, y, i)| {
        let mask = (1u64 << n) as usize - 1;
        let (x, y, i) = (x as usize & mask, y as usize & mask, i as usize % n);
        let d = (overlap(n, x, y) - overlap(n, x ^ (1 << i), y)).abs();
        ensure((d - 2.0 / n as f64).abs() < 1e-12, || format!("jump {d} at N = {n}"))
    })
}

/// 𝒫(λ, 0) = 𝒫(−λ, 0) without a field.
pub fn check_sph_symmetry(cases: u32) -> Result<u32, String> {
    run(cases, (0.3f64..2.5, 0.0f64..0.9), |(beta, frac)| {
        let spec = ok(MixtureSpec::pure(4, beta, 0.0))?;
        let rep = ok(minimize_spherical(&spec, 2, &SphericalOptions::default()))?;
        let lam = 0.9 * frac * (rep.b - psi(&spec, &rep.minimizer, 0.0));
        let (p, m) = (
            ok(gt_value_sph(&spec, &rep.minimizer, rep.b, lam, 0.0))?,
            ok(gt_value_sph(&spec, &rep.minimizer, rep.b, -lam, 0.0))?,
        );
        ensure((p - m).abs() < 1e-10 * (1.0 + p.abs()), || format!("{p} vs {m}"))
    })
}
