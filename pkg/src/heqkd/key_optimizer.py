"""Joint optimization of pump strength and basis/estimation ratio.

The objective composes the source model, the analytic QBER, expected-value
block accounting and the finite-key bound. The optimizer works on the
unfloored key-length expression (it is continuous, including below zero),
and reports the floored, clamped integer length.
"""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import partial
from typing import Iterable, Literal, Mapping, Sequence

import numpy as np
from scipy.optimize import minimize

from .errors import DegenerateRateError
from .finite_key import (
    KeyResult,
    SecurityParams,
    blocks_from_session,
    key_length_2d,
    key_length_4d,
    uniform_pairs,
)
from .pair_source import SourceParams
from .qber_model import ErrorParams, Mode, qber_obs

Protocol = Literal["2D", "4D"]

MU_BOUNDS = (1e-5, 1.0)
P_BOUNDS = (0.01, 0.49)
R_BOUNDS = (0.01, 0.99)
GRID_SIZE = 32
N_STARTS = 8

SWEEP_CSV_HEADER = [
    "loss_db",
    "heqkd_mu_opt", "heqkd_p_opt", "heqkd_key_bits_per_hour",
    "bbm92_mu_opt", "bbm92_r_opt", "bbm92_key_bits_per_hour",
]


@dataclass(frozen=True)
class SystemConfig:
    protocol: Protocol
    err: ErrorParams
    rep_rate: float = 400e6
    duration: float = 3600.0
    xi: float = 1e-6
    eta_a: float = 0.3
    eta_b_fixed: float = 1.0
    losses_db: tuple[float, ...] = ()
    sec: SecurityParams = field(default_factory=SecurityParams)
    mode: Mode = "paper"
    per_pair_ed: bool = False

    def __post_init__(self):
        if self.protocol not in ("2D", "4D"):
            raise ValueError(f"protocol must be '2D' or '4D', got {self.protocol!r}")
        if (self.protocol == "2D") != (self.err.d == 2):
            raise ValueError("protocol and error-model dimension disagree")
        if self.rep_rate <= 0 or self.duration <= 0:
            raise ValueError("rep_rate and duration must be > 0")
        if not 0 <= self.xi < 1:
            raise ValueError("xi must lie in [0, 1)")
        for name in ("eta_a", "eta_b_fixed"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ValueError(f"{name} must lie in (0, 1]")
        if any(x < 0 for x in self.losses_db):
            raise ValueError("loss values must be >= 0 dB")
        if self.mode not in ("paper", "fock"):
            raise ValueError(f"mode must be 'paper' or 'fock', got {self.mode!r}")

    @property
    def ratio_bounds(self) -> tuple[float, float]:
        return P_BOUNDS if self.protocol == "4D" else R_BOUNDS

    def eta_b(self, loss_db: float) -> float:
        return self.eta_b_fixed * 10.0 ** (-loss_db / 10.0)


@dataclass(frozen=True)
class OptimumPoint:
    loss_db: float
    mu_opt: float
    ratio_opt: float
    key_length: int
    key_rate_per_hour: float

    # p for 4D, r for 2D
    @property
    def p_opt(self) -> float:
        return self.ratio_opt

    @property
    def r_opt(self) -> float:
        return self.ratio_opt


@dataclass(frozen=True)
class StepRates:
    """Per-pulse coincidence probability and error rates at one channel state."""

    r_coinc: float
    q_obs: float
    q_pairs: Mapping[tuple[int, int], float]


def step_rates(cfg: SystemConfig, eta_b: float, mu: float) -> StepRates:
    src = SourceParams.from_mu(mu, xi_a=cfg.xi, xi_b=cfg.xi, eta_a=cfg.eta_a, eta_b=eta_b)
    try:
        rb = qber_obs(src, cfg.err, cfg.mode)
    except DegenerateRateError:
        return StepRates(0.0, 0.0, {})
    pairs: dict[tuple[int, int], float]
    if cfg.protocol == "4D":
        if cfg.per_pair_ed and cfg.err.e_d_pairs:
            pairs = uniform_pairs(rb.q_obs)
            for k, ed in cfg.err.e_d_pairs.items():
                if k in pairs:
                    pairs[k] = qber_obs(src, cfg.err, cfg.mode, e_d=ed).q_obs
        else:
            pairs = uniform_pairs(rb.q_obs)
    else:
        pairs = {}
    return StepRates(rb.r_coinc, rb.q_obs, pairs)


def finite_key_from_counts(cfg: SystemConfig, n_coinc: float, q_obs: float,
                           q_pairs: Mapping[tuple[int, int], float], ratio: float) -> KeyResult:
    if n_coinc <= 0:
        return KeyResult(0, 0.0, {"value": -math.inf})
    blocks = blocks_from_session(n_coinc, cfg.protocol, ratio)
    if cfg.protocol == "2D":
        return key_length_2d(blocks, q_obs, cfg.sec)
    return key_length_4d(blocks, q_pairs[(4, 4)], q_pairs[(3, 3)], q_pairs, ratio, cfg.sec)


def key_pipeline_result(cfg: SystemConfig, loss_db: float, mu: float, ratio: float) -> KeyResult:
    rates = step_rates(cfg, cfg.eta_b(loss_db), mu)
    n_coinc = rates.r_coinc * cfg.rep_rate * cfg.duration
    return finite_key_from_counts(cfg, n_coinc, rates.q_obs, rates.q_pairs, ratio)


def key_pipeline(cfg: SystemConfig, loss_db: float, mu: float, ratio: float) -> int:
    """Secret key length (bits) for one channel loss and parameter choice."""
    return key_pipeline_result(cfg, loss_db, mu, ratio).length


def _value(res: KeyResult) -> float:
    v = res.terms.get("value", -math.inf)
    return v if math.isfinite(v) else -1e30


def maximize_key(objective, ratio_bounds: tuple[float, float],
                 mu_bounds: tuple[float, float] = MU_BOUNDS,
                 grid_size: int = GRID_SIZE, n_starts: int = N_STARTS) -> tuple[float, float, KeyResult]:
    """Bounded multi-start maximization of ``objective(mu, ratio) -> KeyResult``.

    Returns ``(mu, ratio, result)`` at the best point found. The coarse grid
    seeds the starts, so the answer never falls below the grid maximum.
    """
    lmu = np.linspace(math.log(mu_bounds[0]), math.log(mu_bounds[1]), grid_size)
    rat = np.linspace(ratio_bounds[0], ratio_bounds[1], grid_size)
    cache: dict[tuple[float, float], KeyResult] = {}

    def evaluate(lm: float, r: float) -> KeyResult:
        lm = min(max(lm, lmu[0]), lmu[-1])
        r = min(max(r, ratio_bounds[0]), ratio_bounds[1])
        key = (lm, r)
        if key not in cache:
            cache[key] = objective(math.exp(lm), r)
        return cache[key]

    scored = []
    for lm in lmu:
        for r in rat:
            res = evaluate(float(lm), float(r))
            scored.append((res.length, _value(res), float(lm), float(r)))
    scored.sort(key=lambda t: (t[0], t[1]), reverse=True)
    best = scored[0]
    best_point = (best[2], best[3])

    bounds = [(lmu[0], lmu[-1]), ratio_bounds]
    steps = (lmu[1] - lmu[0], rat[1] - rat[0])
    for _, _, lm0, r0 in scored[:n_starts]:
        simplex = np.array([[lm0, r0], [lm0 + steps[0], r0], [lm0, r0 + steps[1]]])
        simplex[:, 0] = np.clip(simplex[:, 0], *bounds[0])
        simplex[:, 1] = np.clip(simplex[:, 1], *bounds[1])
        if simplex[1, 0] == simplex[0, 0]:
            simplex[1, 0] -= steps[0]
        if simplex[2, 1] == simplex[0, 1]:
            simplex[2, 1] -= steps[1]
        res = minimize(
            lambda x: -_value(evaluate(float(x[0]), float(x[1]))),
            np.array([lm0, r0]),
            method="Nelder-Mead",
            bounds=bounds,
            options={"initial_simplex": simplex, "xatol": 1e-4, "fatol": 1e-3, "maxiter": 400},
        )
        cand = (float(min(max(res.x[0], lmu[0]), lmu[-1])),
                float(min(max(res.x[1], ratio_bounds[0]), ratio_bounds[1])))
        a, b = evaluate(*cand), evaluate(*best_point)
        if (a.length, _value(a)) > (b.length, _value(b)):
            best_point = cand
    result = evaluate(*best_point)
    return math.exp(best_point[0]), best_point[1], result


def optimize_point(cfg: SystemConfig, loss_db: float) -> OptimumPoint:
    mu, ratio, res = maximize_key(
        lambda m, r: key_pipeline_result(cfg, loss_db, m, r), cfg.ratio_bounds)
    return OptimumPoint(
        loss_db=float(loss_db),
        mu_opt=mu,
        ratio_opt=ratio,
        key_length=res.length,
        key_rate_per_hour=res.length * 3600.0 / cfg.duration,
    )


def sweep(cfg: SystemConfig, losses: Iterable[float] | None = None,
          workers: int = 1) -> list[OptimumPoint]:
    """Optimum for every loss value, ordered by loss."""
    grid = sorted(cfg.losses_db if losses is None else losses)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            points = list(ex.map(partial(optimize_point, cfg), grid))
    else:
        points = [optimize_point(cfg, x) for x in grid]
    return sorted(points, key=lambda p: p.loss_db)


def monotonicity_violations(points: Sequence[OptimumPoint], rel_tol: float = 0.01) -> list[float]:
    """Losses where the key rises by more than ``rel_tol`` over the previous point."""
    bad = []
    for prev, cur in zip(points, points[1:]):
        if cur.key_length > prev.key_length * (1 + rel_tol) + 1:
            bad.append(cur.loss_db)
    return bad


def sweep_csv(points_4d: Sequence[OptimumPoint], points_2d: Sequence[OptimumPoint]) -> str:
    """Both protocols' optima side by side on a shared loss grid."""
    by_loss = {p.loss_db: p for p in points_2d}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_CSV_HEADER)
    for a in points_4d:
        b = by_loss[a.loss_db]
        w.writerow([f"{a.loss_db:.4f}",
                    f"{a.mu_opt:.6e}", f"{a.ratio_opt:.6f}", f"{a.key_rate_per_hour:.6e}",
                    f"{b.mu_opt:.6e}", f"{b.ratio_opt:.6f}", f"{b.key_rate_per_hour:.6e}"])
    return buf.getvalue()


def heqkd_only_window(points_4d: Sequence[OptimumPoint],
                      points_2d: Sequence[OptimumPoint]) -> tuple[float, float] | None:
    """Loss span where the 4D key is positive and the 2D key is zero.

    Both sweeps must share a loss grid. Returns ``(start, end)`` losses or
    ``None`` if no such point exists.
    """
    by_loss = {p.loss_db: p for p in points_2d}
    inside = [p.loss_db for p in points_4d
              if p.key_length > 0 and p.loss_db in by_loss and by_loss[p.loss_db].key_length == 0]
    if not inside:
        return None
    return min(inside), max(inside)


def cutoff_loss(points: Sequence[OptimumPoint]) -> float | None:
    """Largest loss with a positive key."""
    pos = [p.loss_db for p in points if p.key_length > 0]
    return max(pos) if pos else None


def with_losses(cfg: SystemConfig, losses: Iterable[float]) -> SystemConfig:
    return replace(cfg, losses_db=tuple(float(x) for x in losses))
