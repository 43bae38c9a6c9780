"""Smoke test for the edgerep Python module.

Build and install the extension first:

    pip install --no-build-isolation ./crates/py

then run ``python python/smoke_test.py``.
"""

import json
import math

import edgerep


def erlang_b(m, a):
    b = 1.0
    for k in range(1, m + 1):
        b = a * b / (k + a * b)
    return b


def main():
    catalog = edgerep.Catalog.zipf(100, 0.8, 4.5)
    params = catalog.params(500, 8)
    assert abs(params.rho - 0.9) < 1e-12, params

    prop = edgerep.ReplicationProfile.proportional(catalog, params)
    assert prop.total == 500 * 8
    mf = edgerep.solve_meanfield(catalog, prop, params)
    assert 0.0 < mf.inefficiency < 0.1, mf
    assert len(mf.gamma) == len(catalog)

    probs = edgerep.availability_distribution(3.0, 40, mf.theta_eff)
    assert abs(sum(probs) - 1.0) < 1e-12
    assert math.isclose(edgerep.loss_rate(3.0, 40, mf.theta_eff), 3.0 * probs[0], rel_tol=1e-9)

    opt, predicted = edgerep.optimize(catalog, params)
    assert predicted < mf.gamma_bar, (predicted, mf.gamma_bar)

    static = edgerep.simulate(catalog, prop, params, horizon=3000.0, seed=7)
    again = edgerep.simulate(catalog, prop, params, horizon=3000.0, seed=7)
    assert static.losses == again.losses
    assert 0.8 < static.busy_fraction < 0.95, static
    print(f"proportional: sim {static.inefficiency:.3e}, mean field {mf.inefficiency:.3e}")

    adaptive = edgerep.simulate(
        catalog, prop, params, horizon=3000.0, seed=7, rule="lrl", virtual_losses=True, snapshot_every=100.0
    )
    assert sum(adaptive.final_replicas) == 500 * 8
    assert len(adaptive.snapshots) >= 2
    print(f"adaptive lrl+virtual: sim {adaptive.inefficiency:.3e}")

    single = edgerep.Catalog([4.0])
    sp = single.params(5, 1)
    full = edgerep.ReplicationProfile([5], sp, cap_fraction=1.0)
    run = edgerep.simulate(single, full, sp, horizon=20000.0, seed=3)
    assert abs(run.inefficiency - erlang_b(5, 4.0)) < 0.01, (run.inefficiency, erlang_b(5, 4.0))

    assert "table1-class" in edgerep.preset_names()
    report = json.loads(edgerep.run_scenario(edgerep.preset_source("zipf08-proportional"), horizon=500.0))
    assert report["policies"][0]["label"] == "proportional"

    try:
        edgerep.SystemParams(10, 5, 2, 1.5)
    except ValueError:
        pass
    else:
        raise AssertionError("rho >= 1 must be rejected")

    print("smoke test passed")


if __name__ == "__main__":
    main()
