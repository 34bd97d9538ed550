import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from heqkd.finite_key import KeyResult
from heqkd.key_optimizer import (
    MU_BOUNDS,
    P_BOUNDS,
    R_BOUNDS,
    SWEEP_CSV_HEADER,
    OptimumPoint,
    SystemConfig,
    cutoff_loss,
    heqkd_only_window,
    key_pipeline,
    key_pipeline_result,
    maximize_key,
    monotonicity_violations,
    optimize_point,
    step_rates,
    sweep,
    sweep_csv,
)
from heqkd.qber_model import ErrorParams


def cfg(protocol="4D", **kw):
    d = 4 if protocol == "4D" else 2
    return SystemConfig(protocol=protocol, err=ErrorParams.calibrated(d), **kw)


def synthetic(mu0, r0):
    # smooth bowl in (log mu, ratio) with a known peak
    def objective(mu, r):
        v = 1e6 - 1e5 * (math.log(mu / mu0)) ** 2 - 1e6 * (r - r0) ** 2
        return KeyResult(max(0, int(math.floor(v))), 1e-10, {"value": v})
    return objective


@given(st.floats(1e-4, 0.5), st.floats(0.05, 0.95))
def test_maximize_key_finds_synthetic_peak(mu0, r0):
    mu, r, res = maximize_key(synthetic(mu0, r0), R_BOUNDS)
    assert mu == pytest.approx(mu0, rel=0.05)
    assert r == pytest.approx(r0, abs=0.02)
    assert res.length >= 1e6 - 100


def test_maximize_key_respects_bounds():
    # peak outside the box: optimum sits on the boundary
    mu, r, _ = maximize_key(synthetic(10.0, 2.0), P_BOUNDS)
    assert MU_BOUNDS[0] <= mu <= MU_BOUNDS[1]
    assert P_BOUNDS[0] <= r <= P_BOUNDS[1]
    assert mu == pytest.approx(MU_BOUNDS[1])
    assert r == pytest.approx(P_BOUNDS[1])


def test_maximize_key_dominates_grid():
    obj = synthetic(0.03, 0.4)
    lmu = np.linspace(math.log(MU_BOUNDS[0]), math.log(MU_BOUNDS[1]), 8)
    rat = np.linspace(*R_BOUNDS, 8)
    grid_best = max(obj(math.exp(m), x).terms["value"] for m in lmu for x in rat)
    for starts in (0, 3):
        _, _, res = maximize_key(obj, R_BOUNDS, grid_size=8, n_starts=starts)
        assert res.terms["value"] >= grid_best


@pytest.mark.parametrize("protocol", ["4D", "2D"])
def test_optimum_is_reproducible_and_consistent(protocol):
    c = cfg(protocol)
    a = optimize_point(c, 30.0)
    b = optimize_point(c, 30.0)
    assert a == b
    assert key_pipeline(c, 30.0, a.mu_opt, a.ratio_opt) == a.key_length
    assert MU_BOUNDS[0] <= a.mu_opt <= MU_BOUNDS[1]
    lo, hi = c.ratio_bounds
    assert lo <= a.ratio_opt <= hi
    assert a.key_rate_per_hour == a.key_length
    assert a.key_length > 0


def test_key_falls_with_loss():
    c = cfg("2D")
    k = [key_pipeline(c, loss, 0.03, 0.8) for loss in (20, 30, 40, 50, 60)]
    assert k == sorted(k, reverse=True)
    assert k[-1] == 0


def test_pipeline_result_terms():
    res = key_pipeline_result(cfg("4D"), 30.0, 0.08, 0.4)
    assert res.length == max(0, math.floor(res.terms["value"]))


def test_step_rates_pairs():
    c = cfg("4D", per_pair_ed=True)
    r = step_rates(c, c.eta_b(30.0), 0.05)
    assert r.q_pairs[(2, 2)] > r.q_pairs[(1, 3)]
    assert set(r.q_pairs) >= {(3, 3), (4, 4)}
    assert step_rates(cfg("2D"), 1e-3, 0.05).q_pairs == {}


def test_sweep_orders_by_loss():
    c = cfg("2D")
    pts = sweep(c, [40.0, 20.0])
    assert [p.loss_db for p in pts] == [20.0, 40.0]
    assert pts[0] == optimize_point(c, 20.0)


def point(loss, key):
    return OptimumPoint(loss, 0.01, 0.5, key, float(key))


def test_window_and_cutoff_helpers():
    four = [point(x, k) for x, k in [(40, 100), (45, 50), (50, 10), (55, 1), (60, 0)]]
    two = [point(x, k) for x, k in [(40, 10), (45, 0), (50, 0), (55, 0), (60, 0)]]
    assert heqkd_only_window(four, two) == (45, 55)
    assert cutoff_loss(four) == 55
    assert cutoff_loss([point(1, 0)]) is None
    assert heqkd_only_window(two, two) is None
    assert monotonicity_violations(four) == []
    assert monotonicity_violations([point(1, 100), point(2, 200)]) == [2]


def test_sweep_csv_layout():
    text = sweep_csv([point(40, 100)], [point(40, 10)]).splitlines()
    assert text[0].split(",") == SWEEP_CSV_HEADER
    assert text[1].startswith("40.0000,1.000000e-02,0.500000,1.000000e+02")


def test_config_validation():
    with pytest.raises(ValueError):
        SystemConfig(protocol="3D", err=ErrorParams.calibrated(4))
    with pytest.raises(ValueError):
        SystemConfig(protocol="2D", err=ErrorParams.calibrated(4))
    with pytest.raises(ValueError):
        cfg("4D", eta_a=0.0)
    with pytest.raises(ValueError):
        cfg("4D", losses_db=(-1.0,))
    with pytest.raises(ValueError):
        cfg("4D", mode="other")
    assert cfg("4D").eta_b(10.0) == pytest.approx(0.1)
