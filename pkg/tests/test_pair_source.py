import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from mpmath import mp, mpf

from heqkd.errors import NoRootError
from heqkd.pair_source import (
    SessionParams,
    SourceParams,
    adaptive_n_max,
    coincidence_prob,
    coincidence_prob_series,
    coincidence_rate,
    infer_mu,
    pair_pmf,
    pair_pmf_array,
    pair_tail,
    singles_rate,
    yield_n,
)

gammas = st.floats(1e-6, 2.0)
effs = st.floats(1e-3, 1.0)
bgs = st.floats(0.0, 1e-2)


def literal_yield(src, n):
    # enumerate detected photon counts on each side
    def side(eta, xi):
        p_none = math.comb(n, 0) * (1 - eta) ** n
        return 1 - (1 - xi) * p_none
    return side(src.eta_a, src.xi_a) * side(src.eta_b, src.xi_b)


def test_pmf_values():
    src = SourceParams(gamma=0.5)
    assert pair_pmf(src, 0) == pytest.approx(1 / 1.5**2)
    assert pair_pmf(src, 1) == pytest.approx(2 * 0.5 / 1.5**3)
    assert pair_pmf(SourceParams(gamma=0.0), 0) == 1.0
    assert pair_pmf(SourceParams(gamma=0.0), 3) == 0.0


@given(gammas, st.integers(0, 60))
def test_tail_matches_direct_sum(g, n):
    direct = 1.0 - sum(pair_pmf(SourceParams(gamma=g), k) for k in range(n + 1))
    assert pair_tail(g, n) == pytest.approx(direct, abs=1e-12)


@given(gammas)
def test_mean_pair_number_is_twice_gamma(g):
    n_max = adaptive_n_max(g, tol=1e-15)
    pn = pair_pmf_array(g, n_max + 200)
    assert float(np.sum(np.arange(len(pn)) * pn)) == pytest.approx(2 * g, rel=1e-9)


def test_adaptive_n_max():
    assert adaptive_n_max(0.0) == 0
    n = adaptive_n_max(0.05)
    assert pair_tail(0.05, n) < 1e-12 <= pair_tail(0.05, n - 1)


@given(gammas, effs, effs, bgs, bgs)
def test_closed_form_matches_series(g, ea, eb, xa, xb):
    src = SourceParams(g, xa, xb, ea, eb)
    n_max = adaptive_n_max(g, tol=1e-300) + 2
    assert coincidence_prob(src) == pytest.approx(coincidence_prob_series(src, n_max), rel=1e-9)


def naive_high_precision(g, ea, eb, xa, xb):
    mp.dps = 60
    g, ea, eb, xa, xb = map(mpf, (g, ea, eb, xa, xb))
    return (1 - (1 - xa) / (1 + ea * g) ** 2 - (1 - xb) / (1 + eb * g) ** 2
            + (1 - xa) * (1 - xb) / (1 + ea * g + eb * g - ea * eb * g) ** 2)


@given(st.floats(1e-9, 3.0), st.floats(1e-7, 1.0), st.floats(1e-7, 1.0),
       st.sampled_from([0.0, 1e-9, 1e-6, 1e-3]), st.sampled_from([0.0, 1e-8, 1e-5]))
def test_closed_form_full_precision(g, ea, eb, xa, xb):
    # the four-term closed form cancels badly for tiny R; 60 digits settle it
    src = SourceParams(g, xa, xb, ea, eb)
    assert coincidence_prob(src) == pytest.approx(float(naive_high_precision(g, ea, eb, xa, xb)),
                                                  rel=1e-13)


@given(gammas, effs, effs, bgs, bgs, st.integers(0, 12))
def test_yield_matches_enumeration(g, ea, eb, xa, xb, n):
    src = SourceParams(g, xa, xb, ea, eb)
    assert yield_n(src, n) == pytest.approx(literal_yield(src, n), rel=1e-12, abs=1e-15)


@given(gammas, effs, effs, bgs, bgs)
def test_mu_form_matches_gamma_form(g, ea, eb, xa, xb):
    src = SourceParams(g, xa, xb, ea, eb)
    sess = SessionParams(1e6, 2.0)
    assert coincidence_rate(src, sess) == pytest.approx(sess.pulses * coincidence_prob(src),
                                                        rel=1e-9, abs=1e-6)


@given(gammas, effs, bgs)
def test_singles_match_series(g, eta, xi):
    src = SourceParams(g, xi_a=xi, eta_a=eta)
    sess = SessionParams(1.0, 1.0)
    n = np.arange(2000)
    pn = pair_pmf_array(g, 1999)
    series = float(np.sum(pn * (1 - (1 - xi) * (1 - eta) ** n)))
    assert singles_rate(src, "A", sess) == pytest.approx(series, rel=1e-9, abs=1e-14)


def test_coincidence_bounds_and_limits():
    assert coincidence_prob(SourceParams(0.0, 1e-3, 2e-3)) == pytest.approx(2e-6)
    assert coincidence_prob(SourceParams(0.0)) == 0.0
    src = SourceParams(0.3, 0.1, 0.1, 1.0, 1.0)
    assert 0.0 <= coincidence_prob(src) <= 1.0


@given(st.floats(1e-3, 1.0), st.floats(0.05, 1.0), st.floats(0.05, 1.0),
       st.floats(0.0, 1e-4), st.floats(0.0, 1e-4))
def test_infer_mu_round_trip(mu, ea, eb, xa, xb):
    src = SourceParams.from_mu(mu, xi_a=xa, xi_b=xb, eta_a=ea, eta_b=eb)
    sess = SessionParams(4e8, 10.0)
    s_a, s_b = singles_rate(src, "A", sess), singles_rate(src, "B", sess)
    c = coincidence_rate(src, sess)
    m, a, b = infer_mu(s_a, s_b, c, xa, xb, sess)
    assert m == pytest.approx(mu, rel=1e-5)
    assert a == pytest.approx(ea, rel=1e-5)
    assert b == pytest.approx(eb, rel=1e-5)


def test_infer_mu_background_only():
    sess = SessionParams(1e6, 1.0)
    m, a, b = infer_mu(10.0, 20.0, 1e6 * 1e-5 * 2e-5, 1e-5, 2e-5, sess)
    assert m == 0.0 and math.isnan(a) and math.isnan(b)


@pytest.mark.parametrize("counts", [
    (1e3, 1e3, 2e3),          # coincidences above singles
    (0.5, 1e3, 1.0),          # one side below background
    (1e3, 1e3, 999.999),      # needs a pair source with eta > 1
])
def test_infer_mu_no_root(counts):
    with pytest.raises(NoRootError):
        infer_mu(*counts, 1e-6, 1e-6, SessionParams(1e6, 1.0))


def test_param_validation():
    with pytest.raises(ValueError):
        SourceParams(-0.1)
    with pytest.raises(ValueError):
        SourceParams(0.1, eta_a=1.5)
    with pytest.raises(ValueError):
        SessionParams(0.0, 1.0)
    with pytest.raises(ValueError):
        SourceParams(0.1).eta("C")
