"""Smoke test for the glassgap Python module.

Build and install first:

    pip install maturin
    pip install -e crates/glassgap-py --no-build-isolation
"""

import math

import glassgap


def main():
    # single atom at 0: log cosh(h) + xi(1)/2
    for h in (0.0, 0.5):
        v = glassgap.parisi_value([(2, 1.0), (4, 1.0)], 1.0, [0.0], [1.0], h=h)
        assert abs(v - (math.log(math.cosh(h)) + 1.0)) < 1e-5, v

    r = glassgap.minimize_spherical([(4, 1.0)], 2.0, 2)
    assert r["converged"] and not r["is_atom"], r
    assert r["max_residual"] < 1e-6, r

    beta_c = glassgap.atom_transition_beta([(4, 1.0)], 1.0, 1.758)
    assert 1.0 < beta_c <= 1.758, beta_c

    q, p = glassgap.overlap_distribution([(2, 1.0)], 1.0, 6, seed=3)
    assert len(q) == len(p) == 7 and abs(sum(p) - 1.0) < 1e-12

    g = glassgap.exact_gap([(2, 1.0)], 0.0, 5, seed=0)
    assert abs(g["lambda1"] - 2.0 / 5.0) < 1e-12, g
    assert g["identity_error"] < 1e-8 and not g["violations"], g

    print("smoke test passed: beta_c = %.6f, spherical atoms = %s" % (beta_c, r["atoms"]))


if __name__ == "__main__":
    main()
