use pyo3::prelude::*;

#[pymodule(name = "glassgap")]
mod py_glassgap {
    use glassgap::dynamics::{exact_gap_report, overlap_distribution as exact_overlap, ReportOptions};
    use glassgap::ising_statics::{minimize_krsb as krsb, parisi_functional, KrsbOptions};
    use glassgap::measure::AtomicMeasure;
    use glassgap::model::{sample_hamiltonian, MixtureSpec};
    use glassgap::parisi_pde::GridParams;
    use glassgap::spherical::{
        atom_transition_beta as transition, minimize_spherical as sph, SphericalOptions,
    };
    use pyo3::exceptions::{PyRuntimeError, PyValueError};
    use pyo3::prelude::*;
    use pyo3::types::PyDict;

    fn to_py(e: glassgap::Error) -> PyErr {
        match e {
            glassgap::Error::NoConvergence(_) | glassgap::Error::Unstable(_) | glassgap::Error::Invariant(_) => {
                PyRuntimeError::new_err(e.to_string())
            }
            _ => PyValueError::new_err(e.to_string()),
        }
    }

    fn spec(xi0: Vec<(u32, f64)>, beta: f64, h: f64) -> PyResult<MixtureSpec> {
        if beta == 0.0 {
            MixtureSpec::new(vec![], h)
        } else {
            MixtureSpec::scaled(beta, xi0, h)
        }
        .map_err(to_py)
    }

    /// P_I(ν) for ξ = β²ξ₀ and the measure with the given atoms and masses.
    #[pyfunction]
    #[pyo3(signature = (xi0, beta, atoms, masses, h=0.0))]
    fn parisi_value(xi0: Vec<(u32, f64)>, beta: f64, atoms: Vec<f64>, masses: Vec<f64>, h: f64) -> PyResult<f64> {
        let nu = AtomicMeasure::new(atoms, masses).map_err(to_py)?;
        Ok(parisi_functional(&spec(xi0, beta, h)?, &nu, &GridParams::default()).map_err(to_py)?.value)
    }

    /// k-RSB minimizer of the Ising Parisi functional.
    #[pyfunction]
    #[pyo3(signature = (xi0, beta, k, h=0.0, n_starts=8, seed=0))]
    fn minimize_krsb<'py>(
        py: Python<'py>,
        xi0: Vec<(u32, f64)>,
        beta: f64,
        k: usize,
        h: f64,
        n_starts: usize,
        seed: u64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let opts = KrsbOptions { n_starts, seed, ..KrsbOptions::default() };
        let r = py.detach(|| krsb(&spec(xi0, beta, h)?, k, &opts).map_err(to_py))?;
        let d = PyDict::new(py);
        d.set_item("atoms", r.minimizer.atoms().to_vec())?;
        d.set_item("masses", r.minimizer.masses().to_vec())?;
        d.set_item("free_energy", r.free_energy)?;
        d.set_item("replicons", r.atoms.iter().map(|a| a.replicon).collect::<Vec<_>>())?;
        d.set_item("is_atom", r.is_atom)?;
        d.set_item("grsb", r.grsb)?;
        d.set_item("gprev", r.gprev)?;
        d.set_item("converged", r.converged)?;
        Ok(d)
    }

    /// k-atomic minimizer of the spherical functional with its residuals.
    #[pyfunction]
    #[pyo3(signature = (xi0, beta, k, h=0.0, seed=0))]
    fn minimize_spherical<'py>(
        py: Python<'py>,
        xi0: Vec<(u32, f64)>,
        beta: f64,
        k: usize,
        h: f64,
        seed: u64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let opts = SphericalOptions { seed, ..SphericalOptions::default() };
        let r = py.detach(|| sph(&spec(xi0, beta, h)?, k, &opts).map_err(to_py))?;
        let worst = r.q_residuals.iter().chain(&r.phi_psi_residuals).fold(r.b_residual.abs(), |a, v| a.max(v.abs()));
        let d = PyDict::new(py);
        d.set_item("atoms", r.minimizer.atoms().to_vec())?;
        d.set_item("masses", r.minimizer.masses().to_vec())?;
        d.set_item("b", r.b)?;
        d.set_item("free_energy", r.cs_value)?;
        d.set_item("replicons", r.replicons.iter().map(|x| x.1).collect::<Vec<_>>())?;
        d.set_item("is_atom", r.is_atom)?;
        d.set_item("converged", r.converged)?;
        d.set_item("max_residual", worst)?;
        Ok(d)
    }

    /// β at which the spherical single-atom criterion (h = 0) first fails.
    #[pyfunction]
    fn atom_transition_beta(xi0: Vec<(u32, f64)>, lo: f64, hi: f64) -> PyResult<f64> {
        transition(&spec(xi0, lo, 0.0)?, lo, hi).map_err(to_py)
    }

    /// Exact overlap law of one disorder sample: (support, probabilities).
    #[pyfunction]
    #[pyo3(signature = (xi0, beta, n, seed, h=0.0))]
    fn overlap_distribution(xi0: Vec<(u32, f64)>, beta: f64, n: usize, seed: u64, h: f64) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let t = sample_hamiltonian(&spec(xi0, beta, h)?, n, seed).map_err(to_py)?;
        let hist = exact_overlap(&t).map_err(to_py)?;
        Ok((hist.support, hist.probs))
    }

    /// Exact single and replicated gaps of the Metropolis chain and the bounds.
    #[pyfunction]
    #[pyo3(signature = (xi0, beta, n, seed, h=0.0))]
    fn exact_gap<'py>(
        py: Python<'py>,
        xi0: Vec<(u32, f64)>,
        beta: f64,
        n: usize,
        seed: u64,
        h: f64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let s = spec(xi0, beta, h)?;
        let r = py.detach(|| {
            let t = sample_hamiltonian(&s, n, seed)?;
            exact_gap_report(&t, &ReportOptions::default())
        })
        .map_err(to_py)?;
        let d = PyDict::new(py);
        d.set_item("lambda1", r.lambda1)?;
        d.set_item("big_lambda1", r.big_lambda1)?;
        d.set_item("identity_error", r.identity_error)?;
        d.set_item("difficulty", r.difficulty.difficulty)?;
        d.set_item("testfn_bound", r.testfn_bound)?;
        d.set_item("rayleigh_bound", r.rayleigh_bound)?;
        d.set_item("coercive_lower", r.coercive_lower)?;
        d.set_item("violations", r.violations())?;
        Ok(d)
    }
}
