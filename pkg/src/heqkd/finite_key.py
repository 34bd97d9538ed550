"""Finite-key secret key lengths for the qubit (2D) and ququart (4D) protocols.

Both bounds carry a free smoothing parameter ``beta`` in ``(0, eps_sec/4)``
that is maximized numerically: a 64-point log grid locates the best region
and a bounded scalar search on ``log(beta)`` refines it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Literal, Mapping

import numpy as np
from scipy.optimize import minimize_scalar

EC_FACTOR_2D = 1.12
EC_FACTOR_4D = 1.2
BETA_FLOOR = 1e-30  # lower end of the search, relative to eps_sec
BETA_GRID = 64
# keeps the search strictly inside the open upper end
_BETA_TOP = 1.0 - 1e-9

# Used basis pairs for the 4D protocol: (Alice, Bob) -> raw-key bits per photon.
PAIR_BITS_4D: dict[tuple[int, int], int] = {
    (1, 1): 2, (2, 2): 2, (3, 3): 2, (4, 4): 2,
    (1, 2): 1, (2, 1): 1, (1, 3): 1, (3, 1): 1, (2, 4): 1, (4, 2): 1,
}
UNUSED_PAIRS_4D = frozenset({(3, 4), (4, 3)})


@dataclass(frozen=True)
class SecurityParams:
    eps_sec: float = 1e-9
    eps_cor: float = 1e-15

    def __post_init__(self):
        for name in ("eps_sec", "eps_cor"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")


@dataclass(frozen=True)
class BlockCounts2D:
    """Raw key of ``m`` bits split into ``n`` for key and ``k`` for estimation."""

    m: int
    r: float
    n: int
    k: int

    @classmethod
    def from_raw(cls, m: int, r: float) -> "BlockCounts2D":
        if m < 0:
            raise ValueError("m must be >= 0")
        if not 0.0 <= r <= 1.0:
            raise ValueError("r must lie in [0, 1]")
        n = int(math.floor(m * r))
        return cls(m=int(m), r=r, n=n, k=int(m) - n)


@dataclass(frozen=True)
class BlockCounts4D:
    """Sifted counts ``m[i-1, j-1]`` for Alice basis i and Bob basis j."""

    m: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.m, dtype=np.int64)
        if arr.shape != (4, 4):
            raise ValueError("m must be 4x4")
        if np.any(arr < 0):
            raise ValueError("counts must be >= 0")
        arr.setflags(write=False)
        object.__setattr__(self, "m", arr)

    def count(self, i: int, j: int) -> int:
        return int(self.m[i - 1, j - 1])

    @property
    def n1(self) -> int:
        return self.count(1, 1) + self.count(1, 2) + self.count(1, 3)

    @property
    def n2(self) -> int:
        return self.count(2, 1) + self.count(2, 2) + self.count(2, 4)


@dataclass(frozen=True)
class KeyResult:
    length: int
    beta: float
    terms: Mapping[str, float] = field(default_factory=dict)


def h2(x: float) -> float:
    if x <= 0.0 or x >= 1.0:
        return 0.0
    return -x * math.log2(x) - (1.0 - x) * math.log2(1.0 - x)


def h4(x: float) -> float:
    return h2(x) + x * math.log2(3.0) if x > 0 else 0.0


def delta_2d(n: float, k: float, beta: float) -> float:
    """Finite-sampling deviation for the qubit bound (``inf`` if n or k is 0)."""
    if n <= 0 or k <= 0:
        return math.inf
    return math.sqrt((n + k) / (n * k) * (k + 1) / k * math.log(1.0 / beta))


def nu_4d(n: float, k: float, eps: float) -> float:
    """Finite-sampling deviation for the ququart bound (``inf`` if n or k is 0)."""
    if n <= 0 or k <= 0:
        return math.inf
    return math.sqrt((n + k) * (k + 1) * math.log(2.0 / eps) / (n * k * k))


def _maximize_beta(objective: Callable[[float], float], eps_sec: float) -> tuple[float, float]:
    """Maximize ``objective(beta)`` over ``(BETA_FLOOR*eps_sec, eps_sec/4)``.

    Returns ``(best value, best beta)``.
    """
    lo = math.log(BETA_FLOOR * eps_sec)
    hi = math.log(eps_sec / 4.0 * _BETA_TOP)
    grid = np.linspace(lo, hi, BETA_GRID)
    vals = [objective(math.exp(lb)) for lb in grid]
    i = int(np.argmax(vals))
    best_v, best_lb = float(vals[i]), float(grid[i])
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, BETA_GRID - 1)]
    res = minimize_scalar(lambda lb: -objective(math.exp(lb)), bounds=(a, b),
                          method="bounded", options={"xatol": 1e-10})
    if res.success and -res.fun > best_v:
        best_v, best_lb = -float(res.fun), float(res.x)
    return best_v, math.exp(best_lb)


def length_2d_at_beta(blocks: BlockCounts2D, q_obs: float, sec: SecurityParams,
                      beta: float) -> float:
    """Unfloored 2D key-length expression at one ``beta``."""
    n, k = blocks.n, blocks.k
    if n <= 0 or k <= 0:
        return -math.inf
    pe = min(0.5, q_obs + delta_2d(n, k, beta))
    leak = EC_FACTOR_2D * n * h2(min(0.5, q_obs))
    return n * (1.0 - h2(pe)) - leak - math.log2(8.0 / (beta**4 * sec.eps_cor))


def key_length_2d(blocks: BlockCounts2D, q_obs: float, sec: SecurityParams) -> KeyResult:
    if not 0.0 <= q_obs <= 1.0:
        raise ValueError("q_obs must lie in [0, 1]")
    if blocks.n <= 0 or blocks.k <= 0:
        return KeyResult(0, eps_beta_default(sec), {"n": blocks.n, "k": blocks.k, "value": -math.inf})
    best, beta = _maximize_beta(lambda b: length_2d_at_beta(blocks, q_obs, sec, b), sec.eps_sec)
    terms = {
        "n": blocks.n,
        "k": blocks.k,
        "delta": delta_2d(blocks.n, blocks.k, beta),
        "leak_ec": EC_FACTOR_2D * blocks.n * h2(min(0.5, q_obs)),
        "verification": math.log2(8.0 / (beta**4 * sec.eps_cor)),
        "value": best,
    }
    return KeyResult(max(0, int(math.floor(best))), beta, terms)


def eps_beta_default(sec: SecurityParams) -> float:
    return sec.eps_sec / 4.0 * _BETA_TOP


def leak_ec_4d(blocks: BlockCounts4D, q_pairs: Mapping[tuple[int, int], float], p: float) -> float:
    # weights as published (they do not sum to one)
    q = 0.5 - p
    a1 = p * p * q_pairs[(1, 1)] + p * p * q_pairs[(1, 2)] + p * q * q_pairs[(1, 3)]
    a2 = p * p * q_pairs[(2, 1)] + p * p * q_pairs[(2, 2)] + p * q * q_pairs[(2, 4)]
    return EC_FACTOR_4D * (blocks.n1 * h4(min(0.75, a1)) + blocks.n2 * h4(min(0.75, a2)))


def _extractable_part(n: int, k: int, q: float, eps_bar: float) -> float:
    if n <= 0 or k <= 0:
        return 0.0  # no estimate: h4 saturates at 2
    return n * (2.0 - h4(min(0.75, q + nu_4d(n, k, eps_bar))))


def length_4d_at_beta(blocks: BlockCounts4D, q_44: float, q_33: float,
                      q_pairs: Mapping[tuple[int, int], float], p: float,
                      sec: SecurityParams, beta: float, leak: float | None = None) -> float:
    """Unfloored 4D key-length expression at one ``beta``."""
    eps_bar = sec.eps_sec / 6.0 - beta / 3.0
    if leak is None:
        leak = leak_ec_4d(blocks, q_pairs, p)
    n_ext = (_extractable_part(blocks.n1, blocks.count(4, 4), q_44, eps_bar)
             + _extractable_part(blocks.n2, blocks.count(3, 3), q_33, eps_bar)
             - leak - math.log2(2.0 / sec.eps_cor))
    return n_ext + 4.0 * math.log2(beta) - 2.0


def key_length_4d(blocks: BlockCounts4D, q_44: float, q_33: float,
                  q_pairs: Mapping[tuple[int, int], float], p: float,
                  sec: SecurityParams) -> KeyResult:
    if not 0.0 < p < 0.5:
        raise ValueError("p must lie in (0, 1/2)")
    for v in (q_44, q_33, *q_pairs.values()):
        if not 0.0 <= v <= 1.0:
            raise ValueError("QBER inputs must lie in [0, 1]")
    if blocks.n1 + blocks.n2 == 0:
        return KeyResult(0, eps_beta_default(sec), {"n1": 0, "n2": 0, "value": -math.inf})
    leak = leak_ec_4d(blocks, q_pairs, p)
    best, beta = _maximize_beta(
        lambda b: length_4d_at_beta(blocks, q_44, q_33, q_pairs, p, sec, b, leak), sec.eps_sec)
    eps_bar = sec.eps_sec / 6.0 - beta / 3.0
    terms = {
        "n1": blocks.n1,
        "n2": blocks.n2,
        "m33": blocks.count(3, 3),
        "m44": blocks.count(4, 4),
        "eps_bar": eps_bar,
        "nu_1": nu_4d(blocks.n1, blocks.count(4, 4), eps_bar),
        "nu_2": nu_4d(blocks.n2, blocks.count(3, 3), eps_bar),
        "leak_ec": leak,
        "value": best,
    }
    return KeyResult(max(0, int(math.floor(best))), beta, terms)


def uniform_pairs(q: float) -> dict[tuple[int, int], float]:
    """The same QBER for every used 4D basis pair."""
    return {k: q for k in PAIR_BITS_4D}


def basis_probs_4d(p: float) -> np.ndarray:
    return np.array([p, p, 0.5 - p, 0.5 - p])


def blocks_from_session(n_coinc: float, protocol: Literal["2D", "4D"], ratio: float):
    """Expected sifted block sizes from an expected coincidence count.

    ``ratio`` is the key-generation fraction ``r`` for 2D and the basis
    probability ``p`` for 4D.
    """
    if n_coinc < 0:
        raise ValueError("n_coinc must be >= 0")
    if protocol == "2D":
        m = int(math.floor(n_coinc / 2.0))
        return BlockCounts2D.from_raw(m, ratio)
    if protocol == "4D":
        probs = basis_probs_4d(ratio)
        return BlockCounts4D(np.floor(n_coinc * np.outer(probs, probs)).astype(np.int64))
    raise ValueError(f"unknown protocol {protocol!r}")
