"""Free-space link budget, circular-orbit pass geometry and per-pass keys.

The pass model places the ground station at a fixed angular offset from
the plane of a circular orbit (no Earth rotation). The offset is chosen so
that the elevation at culmination equals ``max_elevation``; acquisition runs
between the two crossings of ``min_elevation``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .finite_key import KeyResult
from .key_optimizer import (
    OptimumPoint,
    SystemConfig,
    finite_key_from_counts,
    maximize_key,
    step_rates,
)

C_LIGHT = 299_792_458.0
EARTH_RADIUS = 6_371e3
GM_EARTH = 3.986004418e14

PROFILE_CSV_HEADER = ["t_s", "elevation_deg", "range_m", "v_los_mps", "doppler_um", "loss_db"]


@dataclass(frozen=True)
class LinkParams:
    d_t: float
    d_r: float
    wavelength: float = 1550e-9
    fixed_loss_rx_db: float = 6.0
    fixed_loss_analysis_db: float = 4.0
    # whether the analysis/detection loss is booked into the channel
    include_analysis: bool = True

    def __post_init__(self):
        for name in ("d_t", "d_r", "wavelength"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        for name in ("fixed_loss_rx_db", "fixed_loss_analysis_db"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @classmethod
    def leo(cls) -> "LinkParams":
        """0.1 m / 1 m apertures at 1550 nm with 6 + 4 dB fixed loss."""
        return cls(d_t=0.1, d_r=1.0)

    @classmethod
    def geo(cls, d_r: float = 3.0) -> "LinkParams":
        """0.2 m transmitter with only the 6 dB receiver loss booked."""
        return cls(d_t=0.2, d_r=d_r, include_analysis=False)

    @property
    def fixed_loss_db(self) -> float:
        extra = self.fixed_loss_analysis_db if self.include_analysis else 0.0
        return self.fixed_loss_rx_db + extra


@dataclass(frozen=True)
class OrbitParams:
    max_elevation: float = 90.0
    altitude: float = 400e3
    min_elevation: float = 20.0
    time_step: float = 10.0
    earth_radius: float = EARTH_RADIUS
    bin_separation: float = 1.5e-9

    def __post_init__(self):
        if not self.altitude > 0:
            raise ValueError("altitude must be > 0")
        if not 0.0 <= self.min_elevation < 90.0:
            raise ValueError("min_elevation must lie in [0, 90)")
        if not self.max_elevation <= 90.0:
            raise ValueError("max_elevation must be <= 90")
        if not self.time_step > 0:
            raise ValueError("time_step must be > 0")
        if not self.bin_separation > 0:
            raise ValueError("bin_separation must be > 0")

    @property
    def radius(self) -> float:
        return self.earth_radius + self.altitude

    @property
    def angular_rate(self) -> float:
        return math.sqrt(GM_EARTH / self.radius**3)

    @property
    def visible(self) -> bool:
        return self.max_elevation > self.min_elevation


@dataclass(frozen=True)
class PassProfile:
    t: np.ndarray
    elevation: np.ndarray
    range_m: np.ndarray
    v_los: np.ndarray
    doppler: np.ndarray
    loss_db: np.ndarray
    # integration weight (s) of each sample
    weight: np.ndarray

    def __len__(self) -> int:
        return len(self.t)

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0]) if len(self.t) else 0.0

    @property
    def doppler_swing(self) -> float:
        """``dL(t_stop) - dL(t_start)`` in metres."""
        return float(self.doppler[-1] - self.doppler[0]) if len(self.t) else 0.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(PROFILE_CSV_HEADER)
        for row in zip(self.t, self.elevation, self.range_m, self.v_los, self.doppler, self.loss_db):
            t, el, r, v, dl, loss = row
            w.writerow([f"{t:.3f}", f"{el:.6f}", f"{r:.3f}", f"{v:.6f}", f"{dl * 1e6:.6f}", f"{loss:.6f}"])
        return buf.getvalue()


def friis_loss_db(link: LinkParams, range_m: float) -> float:
    """Diffraction loss (never below 0 dB) plus the booked fixed losses."""
    if not range_m > 0:
        raise ValueError("range must be > 0")
    eta = (math.pi * link.d_t * link.d_r / (4.0 * link.wavelength * range_m)) ** 2
    return -10.0 * math.log10(min(eta, 1.0)) + link.fixed_loss_db


def slant_range(orbit: OrbitParams, elevation: float) -> float:
    if not 0.0 <= elevation <= 90.0:
        raise ValueError("elevation must lie in [0, 90] degrees")
    re, h = orbit.earth_radius, orbit.altitude
    s = math.sin(math.radians(elevation))
    return math.sqrt(re * re * s * s + 2.0 * re * h + h * h) - re * s


def _central_angle(orbit: OrbitParams, elevation: float) -> float:
    # Earth-centre angle between station and satellite at a given elevation
    re, rs = orbit.earth_radius, orbit.radius
    rho = slant_range(orbit, elevation)
    c = (re * re + rs * rs - rho * rho) / (2.0 * re * rs)
    return math.acos(min(max(c, -1.0), 1.0))


def _geometry(orbit: OrbitParams, t: np.ndarray, offset: float):
    re, rs, w = orbit.earth_radius, orbit.radius, orbit.angular_rate
    theta = w * t
    cos_psi = math.cos(offset) * np.cos(theta)
    rho = np.sqrt(re * re + rs * rs - 2.0 * re * rs * cos_psi)
    sin_el = (rs * cos_psi - re) / rho
    el = np.degrees(np.arcsin(np.clip(sin_el, -1.0, 1.0)))
    v = re * rs * math.cos(offset) * np.sin(theta) * w / rho
    return el, rho, v


def doppler_shift(v_los: float | np.ndarray, bin_separation: float):
    """Relativistic change of the bin separation, as a path length (m).

    Positive ``v_los`` (receding) lengthens the separation.
    """
    beta = np.asarray(v_los, dtype=float) / C_LIGHT
    if np.any(np.abs(beta) >= 1.0):
        raise ValueError("|v| must be below c")
    out = (np.sqrt((1.0 + beta) / (1.0 - beta)) - 1.0) * bin_separation * C_LIGHT
    return float(out) if out.ndim == 0 else out


def pass_half_duration(orbit: OrbitParams) -> float:
    if not orbit.visible:
        return 0.0
    offset = _central_angle(orbit, orbit.max_elevation)
    edge = _central_angle(orbit, orbit.min_elevation)
    theta_end = math.acos(min(math.cos(edge) / math.cos(offset), 1.0))
    return theta_end / orbit.angular_rate


def pass_profile(orbit: OrbitParams, link: LinkParams) -> PassProfile:
    """Samples from ``min_elevation`` up to culmination and back down.

    The pass is split into an even number of equal intervals no longer than
    ``time_step``, so both acquisition edges and culmination are sampled;
    weights follow the trapezoid rule.
    An invisible pass (max below min elevation) gives an empty profile.
    """
    if not orbit.visible:
        e = np.zeros(0)
        return PassProfile(e, e, e, e, e, e, e)
    half = pass_half_duration(orbit)
    n = max(2, int(math.ceil(2.0 * half / orbit.time_step)))
    n += n % 2  # even count keeps culmination on the grid
    t = np.linspace(-half, half, n + 1)
    offset = _central_angle(orbit, orbit.max_elevation)
    el, rho, v = _geometry(orbit, t, offset)
    dt = t[1] - t[0]
    weight = np.full(t.shape, dt)
    weight[[0, -1]] = dt / 2.0
    loss = np.array([friis_loss_db(link, r) for r in rho])
    return PassProfile(t=t, elevation=el, range_m=rho, v_los=v,
                       doppler=doppler_shift(v, orbit.bin_separation), loss_db=loss, weight=weight)


def profile_at(orbit: OrbitParams, link: LinkParams, t: np.ndarray) -> PassProfile:
    """Pass quantities at arbitrary times (relative to culmination)."""
    t = np.asarray(t, dtype=float)
    offset = _central_angle(orbit, orbit.max_elevation)
    el, rho, v = _geometry(orbit, t, offset)
    loss = np.array([friis_loss_db(link, r) for r in rho])
    return PassProfile(t=t, elevation=el, range_m=rho, v_los=v,
                       doppler=doppler_shift(v, orbit.bin_separation), loss_db=loss,
                       weight=np.zeros_like(t))


def _pass_objective(profile: PassProfile, cfg: SystemConfig):
    @lru_cache(maxsize=4096)
    def pooled(mu: float):
        n_tot, err = 0.0, 0.0
        pair_err: dict[tuple[int, int], float] = {}
        for loss, w in zip(profile.loss_db, profile.weight):
            rates = step_rates(cfg, cfg.eta_b(float(loss)), mu)
            n = rates.r_coinc * cfg.rep_rate * float(w)
            n_tot += n
            err += n * rates.q_obs
            for k, q in rates.q_pairs.items():
                pair_err[k] = pair_err.get(k, 0.0) + n * q
        if n_tot <= 0:
            return 0.0, 0.0, {}
        return n_tot, err / n_tot, {k: v / n_tot for k, v in pair_err.items()}

    def objective(mu: float, ratio: float) -> KeyResult:
        n_tot, q, pairs = pooled(mu)
        return finite_key_from_counts(cfg, n_tot, q, pairs, ratio)

    return objective


def pass_key_result(orbit: OrbitParams, link: LinkParams, cfg: SystemConfig,
                    mu: float, ratio: float, profile: PassProfile | None = None) -> KeyResult:
    """Key from one block pooled over the whole pass.

    Expected coincidences and error events are summed step by step; the
    pooled error rate is the count-weighted mean of the per-step rates.
    """
    if not orbit.visible:
        return KeyResult(0, 0.0, {"value": -math.inf})
    profile = pass_profile(orbit, link) if profile is None else profile
    return _pass_objective(profile, cfg)(mu, ratio)


def pass_key_length(orbit: OrbitParams, link: LinkParams, cfg: SystemConfig,
                    mu: float, ratio: float) -> int:
    return pass_key_result(orbit, link, cfg, mu, ratio).length


@dataclass(frozen=True)
class PassOptimum:
    max_elevation: float
    mu_opt: float
    ratio_opt: float
    key_length: int
    duration_s: float
    doppler_swing_um: float


def optimize_pass(orbit: OrbitParams, link: LinkParams, cfg: SystemConfig) -> PassOptimum:
    if not orbit.visible:
        return PassOptimum(orbit.max_elevation, math.nan, math.nan, 0, 0.0, 0.0)
    profile = pass_profile(orbit, link)
    mu, ratio, res = maximize_key(_pass_objective(profile, cfg), cfg.ratio_bounds)
    return PassOptimum(
        max_elevation=orbit.max_elevation,
        mu_opt=mu,
        ratio_opt=ratio,
        key_length=res.length,
        duration_s=profile.duration,
        doppler_swing_um=profile.doppler_swing * 1e6,
    )


def as_optimum_point(p: PassOptimum, loss_db: float = math.nan) -> OptimumPoint:
    return OptimumPoint(loss_db, p.mu_opt, p.ratio_opt, p.key_length, math.nan)
