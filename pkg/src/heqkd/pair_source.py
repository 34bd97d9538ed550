"""SPDC pair statistics and threshold-detector click model.

The source emits ``n`` pairs per pump pulse with thermal statistics

    P_n = (n + 1) gamma**n / (1 + gamma)**(n + 2),      mu = 2 * gamma,

and each side clicks if at least one of its photons survives (efficiency
``eta``) or a background count occurs (probability ``xi`` per pulse).
All functions are pure.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import NoRootError

TAIL_TOL = 1e-12
N_MAX_CAP = 10_000


@dataclass(frozen=True)
class SourceParams:
    gamma: float
    xi_a: float = 0.0
    xi_b: float = 0.0
    eta_a: float = 1.0
    eta_b: float = 1.0

    def __post_init__(self):
        if not (self.gamma >= 0 and math.isfinite(self.gamma)):
            raise ValueError(f"gamma must be finite and >= 0, got {self.gamma}")
        for name in ("xi_a", "xi_b"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {v}")
        for name in ("eta_a", "eta_b"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")

    @classmethod
    def from_mu(cls, mu: float, **kw) -> "SourceParams":
        return cls(gamma=mu / 2.0, **kw)

    def mu(self) -> float:
        return 2.0 * self.gamma

    def eta(self, side: str) -> float:
        return self.eta_a if _side(side) == "A" else self.eta_b

    def xi(self, side: str) -> float:
        return self.xi_a if _side(side) == "A" else self.xi_b


@dataclass(frozen=True)
class SessionParams:
    rep_rate: float
    duration: float

    def __post_init__(self):
        if not self.rep_rate > 0:
            raise ValueError("rep_rate must be > 0")
        if not self.duration > 0:
            raise ValueError("duration must be > 0")

    @property
    def pulses(self) -> float:
        return self.rep_rate * self.duration


def _side(side: str) -> Literal["A", "B"]:
    s = side.upper()
    if s not in ("A", "B"):
        raise ValueError(f"side must be 'A' or 'B', got {side!r}")
    return s  # type: ignore[return-value]


def pair_tail(gamma: float, n: int) -> float:
    """Probability mass of all pair numbers strictly above ``n``."""
    if gamma == 0:
        return 0.0
    x = gamma / (1.0 + gamma)
    return x ** (n + 1) * ((n + 2) - (n + 1) * x)


def adaptive_n_max(gamma: float, tol: float = TAIL_TOL, cap: int = N_MAX_CAP) -> int:
    """Smallest truncation order whose neglected tail is below ``tol``."""
    if gamma == 0:
        return 0
    n = 0
    while pair_tail(gamma, n) >= tol and n < cap:
        n += 1
    return n


def pair_pmf(src: SourceParams, n: int) -> float:
    if n < 0:
        raise ValueError("n must be >= 0")
    g = src.gamma
    if g == 0:
        return 1.0 if n == 0 else 0.0
    # log form keeps large n finite
    return math.exp(math.log(n + 1) + n * math.log(g) - (n + 2) * math.log1p(g))


def pair_pmf_array(gamma: float, n_max: int) -> np.ndarray:
    """``P_0 .. P_{n_max}`` as an array."""
    n = np.arange(n_max + 1, dtype=float)
    if gamma == 0:
        out = np.zeros(n_max + 1)
        out[0] = 1.0
        return out
    return np.exp(np.log(n + 1) + n * math.log(gamma) - (n + 2) * math.log1p(gamma))


def yield_n(src: SourceParams, n: int) -> float:
    if n < 0:
        raise ValueError("n must be >= 0")
    a = 1.0 - (1.0 - src.xi_a) * (1.0 - src.eta_a) ** n
    b = 1.0 - (1.0 - src.xi_b) * (1.0 - src.eta_b) ** n
    return a * b


def _coinc_stable(g: float, ea: float, eb: float, xa: float, xb: float) -> float:
    # 1 - P(no A) - P(no B) + P(neither), regrouped so that no two large
    # terms cancel: (1 - P(no A)) (1 - P(no B)) + [P(neither) - P(no A) P(no B)]
    qa, qb = 1.0 + ea * g, 1.0 + eb * g
    click_a = (xa + ea * g * (2.0 + ea * g)) / (qa * qa)
    click_b = (xb + eb * g * (2.0 + eb * g)) / (qb * qb)
    d1 = 1.0 + (ea + eb - ea * eb) * g
    d2 = qa * qb
    excess = (1.0 - xa) * (1.0 - xb) * ea * eb * g * (1.0 + g) * (d1 + d2) / (d1 * d1 * d2 * d2)
    return click_a * click_b + excess


def coincidence_prob(src: SourceParams) -> float:
    """Per-pulse probability of at least one click on both sides (closed form)."""
    r = _coinc_stable(src.gamma, src.eta_a, src.eta_b, src.xi_a, src.xi_b)
    return min(max(r, 0.0), 1.0)


def coincidence_prob_series(src: SourceParams, n_max: int | None = None) -> float:
    """Truncated sum of P_n * Y_n; reference for the closed form."""
    if n_max is None:
        n_max = adaptive_n_max(src.gamma)
    n = np.arange(n_max + 1)
    pn = pair_pmf_array(src.gamma, n_max)
    yn = (1.0 - (1.0 - src.xi_a) * (1.0 - src.eta_a) ** n) * (
        1.0 - (1.0 - src.xi_b) * (1.0 - src.eta_b) ** n
    )
    return float(np.sum(pn * yn))


def _singles_fraction(x: float, xi: float) -> float:
    # x = eta * mu
    return (x * (4.0 + x) + 4.0 * xi) / (2.0 + x) ** 2


def singles_rate(src: SourceParams, side: str, sess: SessionParams) -> float:
    """Expected singles counts on one side over the session."""
    x = src.eta(side) * src.mu()
    return sess.pulses * _singles_fraction(x, src.xi(side))


def _coinc_fraction_mu(mu: float, ea: float, eb: float, xa: float, xb: float) -> float:
    """Coincidence fraction in terms of ``mu``.

    Algebraically ``1 - 4(1-xa)/(2+ea mu)^2 - 4(1-xb)/(2+eb mu)^2
    + 4(1-xa)(1-xb)/(2+ea mu+eb mu-ea eb mu)^2``; evaluated in a form free
    of cancellation.
    """
    return _coinc_stable(mu / 2.0, ea, eb, xa, xb)


def coincidence_rate(src: SourceParams, sess: SessionParams) -> float:
    """Expected coincidence counts over the session, written in terms of mu."""
    f = _coinc_fraction_mu(src.mu(), src.eta_a, src.eta_b, src.xi_a, src.xi_b)
    return sess.pulses * min(max(f, 0.0), 1.0)


def infer_mu(
    s_a: float,
    s_b: float,
    c_ab: float,
    xi_a: float,
    xi_b: float,
    sess: SessionParams,
    *,
    mu_max: float = 4.0,
    eta_min: float = 1e-6,
) -> tuple[float, float, float]:
    """Invert observed singles and coincidences for ``(mu, eta_a, eta_b)``.

    The singles equations depend on ``eta_i * mu`` only, so each is inverted
    directly; the coincidence equation is then strictly decreasing in ``mu``
    at fixed products, which makes the root unique whenever it exists.

    A background-only record (singles equal to ``T*R*xi``) returns
    ``(0.0, nan, nan)``: the efficiencies are unidentifiable there.

    Raises
    ------
    NoRootError
        If no ``mu`` in ``(0, mu_max]`` with efficiencies in ``(eta_min, 1]``
        reproduces the counts.
    """
    total = sess.pulses
    sa, sb, c = s_a / total, s_b / total, c_ab / total
    slack = 1e-12 * max(c, 1e-300)
    if not (0 <= sa < 1 and 0 <= sb < 1 and 0 <= c <= min(sa, sb) + slack):
        raise NoRootError("count fractions must satisfy 0 <= C <= S < 1")
    c = min(c, sa, sb)

    def half_product(s: float, xi: float) -> float:
        # eta*mu/2 from (1 + x/2)^2 = (1 - xi) / (1 - s), without cancellation
        r1 = (s - xi) / (1.0 - s)
        return r1 / (math.sqrt(1.0 + r1) + 1.0)

    a, b = half_product(sa, xi_a), half_product(sb, xi_b)
    tol = 1e-12
    if a < -tol or b < -tol:
        raise NoRootError("singles below the background floor")
    if a <= tol and b <= tol:
        if abs(c - xi_a * xi_b) <= 1e-9 * max(c, xi_a * xi_b, 1e-300) + 1e-15:
            return 0.0, math.nan, math.nan
        raise NoRootError("background-only singles with excess coincidences")
    if a <= tol or b <= tol:
        raise NoRootError("one side shows no signal while the other does")

    # relative excess of coincidences over independent singles
    eps = (c - sa * sb) / ((1.0 - sa) * (1.0 - sb))
    if 1.0 + eps <= 0:
        raise NoRootError("coincidences too low for any pair source")
    s1 = 1.0 + a + b
    num = s1 * s1 * eps - 2.0 * s1 * a * b - (a * b) ** 2
    if num <= 0:
        raise NoRootError("coincidences too high for any pair source")
    half_d = (1.0 + a) * (1.0 + b) / math.sqrt(1.0 + eps)
    mu = 2.0 * a * b * (1.0 + eps) * (s1 + half_d) / num
    x_a, x_b = 2.0 * a, 2.0 * b
    eta_a, eta_b = x_a / mu, x_b / mu
    if not (0 < mu <= mu_max and eta_min < eta_a <= 1 + 1e-12 and eta_min < eta_b <= 1 + 1e-12):
        raise NoRootError(
            f"root mu={mu:.6g}, eta_a={eta_a:.6g}, eta_b={eta_b:.6g} lies outside the bounds"
        )
    return mu, min(eta_a, 1.0), min(eta_b, 1.0)
