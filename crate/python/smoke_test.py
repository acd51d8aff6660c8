"""Smoke test for the pyfracheat extension.

Build and run from the repository root:

    cargo build --release -p fracheat-py --features extension-module
    cp target/release/libpyfracheat.so python/pyfracheat.so
    python3 python/smoke_test.py
"""

import json
import math
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import pyfracheat as fh


def main():
    e1 = fh.SpectralField.basis(8, 1)
    assert len(e1) == 8
    s = e1.semigroup_apply(0.1)
    assert abs(s.coeffs[0] - math.exp(-math.pi**2 * 0.1)) < 1e-14
    assert abs(e1.evaluate(0.5) - math.sqrt(2.0)) < 1e-12

    assert abs(fh.covariance(1.0, 1.0, 0.75) - 1.0) < 1e-15
    t, comps = fh.sample_fbm(64, 0.75, d=2, seed=3)
    assert len(t) == 65 and len(comps) == 2 and comps[0][0] == 0.0
    assert fh.sample_fbm(64, 0.75, d=2, seed=3) == (t, comps)

    small = json.dumps({"n_paths": 16, "solver": {"n_modes": 8, "time_steps": 64}})
    times, rows = fh.solve(small)
    assert len(times) == 65 and len(rows[0]) == 8

    m = fh.malliavin(small)
    assert m["h_norm"] > 0.0
    assert max(abs(r[-1]) for r in m["entries"]) >= 0.5 - 1e-8

    ens = fh.run_ensemble(small)
    assert ens["failures"] == 0 and len(ens["samples"]) == 16
    points, dens = fh.kde(ens["samples"])
    mass = sum(0.5 * (points[i + 1] - points[i]) * (dens[i] + dens[i + 1]) for i in range(len(points) - 1))
    assert abs(mass - 1.0) < 1e-2
    est, half, stable = fh.inverse_moment_estimate(ens["h_norms"], 2.0)
    assert est > 0.0 and math.isfinite(half)

    rep = fh.verify_bound("poly-4.10", small)
    assert 0.0 <= rep["validate_coverage"] <= 1.0

    try:
        fh.solve(json.dumps({"hurst": 0.4}))
    except ValueError as err:
        assert "hurst" in str(err)
    else:
        raise AssertionError("low Hurst index accepted")

    cfg = json.loads(fh.default_config())
    assert cfg["hurst"] == 0.75 and cfg["solver"]["n_modes"] == 64
    print("pyfracheat smoke test ok")


if __name__ == "__main__":
    main()
