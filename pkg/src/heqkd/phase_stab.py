"""PI phase-tracking loop for the analyzer interferometer.

A classical stabilization beam at ``sensor_wavelength`` sees the same
path-length mismatch ``target - actuator`` as the time-bin photons. Its two
detector outputs follow a low-visibility fringe, ``I1 = a (1 + V sin d)`` and
``I2 = (a / gamma)(1 - V sin d)``, so the balanced error signal reduces to
``E = V sin d``. The loop drives ``E`` to zero at ``update_rate``.

The time-bin phase error of the photons maps to a QBER penalty of
``(1 - cos phi) / 2`` in the phase-sensitive basis pairs.
"""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ActuatorSaturated, ZeroIntensityError
from .quantum_state import used_pairs

# Pairs whose outcome depends on the time-bin phase (bases 2 and 4 combined).
PHASE_SENSITIVE_PAIRS = ((2, 2), (2, 4), (4, 2), (4, 4))
PENALTY_PAIRS = used_pairs(4)

STAB_CSV_HEADER = (["t_s", "target_um", "actuator_um", "residual_mrad"]
                   + [f"qber_penalty_{i}{j}" for i, j in PENALTY_PAIRS])


@dataclass(frozen=True)
class StabConfig:
    """PI loop and sensor settings.

    The default gains put the integral loop gain per update at about 0.5
    and the proportional gain at about 0.2, both in units of the small-signal
    slope ``2 pi V / sensor_wavelength`` of the error signal.
    """

    gamma_scale: float = 0.6
    visibility: float = 0.1
    kp: float = 1.7e-7
    ki: float = 4.2e-5
    update_rate: float = 100.0
    # largest |actuator path offset|: a 17.4 um stroke under a retro prism
    actuator_range: float = 17.4e-6
    sensor_noise: float = 0.002
    sensor_wavelength: float = 532e-9
    photon_wavelength: float = 1550e-9
    seed: int = 0

    def __post_init__(self):
        if not self.update_rate > 0:
            raise ValueError("update_rate must be > 0")
        if not 0.0 < self.visibility <= 1.0:
            raise ValueError("visibility must lie in (0, 1]")
        if not self.gamma_scale > 0:
            raise ValueError("gamma_scale must be > 0")
        if not self.actuator_range > 0:
            raise ValueError("actuator_range must be > 0")
        if self.sensor_noise < 0:
            raise ValueError("sensor_noise must be >= 0")
        if self.kp < 0 or self.ki < 0:
            raise ValueError("gains must be >= 0")
        if not (self.sensor_wavelength > 0 and self.photon_wavelength > 0):
            raise ValueError("wavelengths must be > 0")

    def open_loop(self) -> "StabConfig":
        return StabConfig(**{**self.__dict__, "kp": 0.0, "ki": 0.0})


@dataclass(frozen=True)
class StabTrace:
    t: np.ndarray
    target: np.ndarray
    actuator: np.ndarray
    residual_phase: np.ndarray
    saturated_steps: int

    @property
    def penalty(self) -> np.ndarray:
        return qber_penalty(self.residual_phase)

    def penalty_by_pair(self) -> dict[tuple[int, int], np.ndarray]:
        zero = np.zeros_like(self.residual_phase)
        pen = self.penalty
        return {p: (pen if p in PHASE_SENSITIVE_PAIRS else zero) for p in PENALTY_PAIRS}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(STAB_CSV_HEADER)
        by_pair = self.penalty_by_pair()
        cols = [by_pair[p] for p in PENALTY_PAIRS]
        for k in range(len(self.t)):
            w.writerow([f"{self.t[k]:.3f}", f"{self.target[k] * 1e6:.6f}",
                        f"{self.actuator[k] * 1e6:.6f}", f"{self.residual_phase[k] * 1e3:.6f}"]
                       + [f"{c[k]:.6e}" for c in cols])
        return buf.getvalue()


def error_signal(i1: float, i2: float, gamma_scale: float) -> float:
    den = i1 + gamma_scale * i2
    if den <= 0:
        raise ZeroIntensityError("I1 + gamma * I2 must be > 0")
    return (i1 - gamma_scale * i2) / den


def fringe_intensities(delta: float, visibility: float, gamma_scale: float,
                       level: float = 1.0) -> tuple[float, float]:
    """Detector outputs at sensor phase ``delta``, balanced by ``gamma_scale``."""
    s = visibility * math.sin(delta)
    return level * (1.0 + s), level / gamma_scale * (1.0 - s)


def error_slope(cfg: StabConfig) -> float:
    """dE/d(path) at the lock point (per metre)."""
    return cfg.visibility * 2.0 * math.pi / cfg.sensor_wavelength


def qber_penalty(phase):
    return (1.0 - np.cos(phase)) / 2.0


def simulate_tracking(cfg: StabConfig, t: np.ndarray, target: np.ndarray) -> StabTrace:
    """Run the loop on a path-length target sampled at times ``t``.

    The target is interpolated onto the ``update_rate`` grid. The actuator
    starts at the first target value (phase calibrated at acquisition start)
    and is clamped to ``+-actuator_range``; the integrator is clamped with it
    so it cannot wind up. An :class:`ActuatorSaturated` warning is issued if
    the command ever exceeds the range.
    """
    t = np.asarray(t, dtype=float)
    target = np.asarray(target, dtype=float)
    if t.shape != target.shape or t.size < 2:
        raise ValueError("t and target must be matching arrays with >= 2 samples")
    dt = 1.0 / cfg.update_rate
    n = int(math.floor((t[-1] - t[0]) / dt + 1e-9)) + 1
    tt = t[0] + dt * np.arange(n)
    goal = np.interp(tt, t, target)
    noise = np.random.default_rng(cfg.seed).normal(0.0, cfg.sensor_noise, n) \
        if cfg.sensor_noise > 0 else np.zeros(n)

    lim = cfg.actuator_range
    k_s = 2.0 * math.pi / cfg.sensor_wavelength
    base = min(max(goal[0], -lim), lim)
    act = np.empty(n)
    integ = 0.0
    pos = base
    saturated = 0
    for k in range(n):
        act[k] = pos
        i1, i2 = fringe_intensities(k_s * (goal[k] - pos), cfg.visibility, cfg.gamma_scale)
        e = error_signal(i1, i2, cfg.gamma_scale) + noise[k]
        # backward-Euler integrator, position-form PI
        integ += cfg.ki * dt * e
        cmd = base + cfg.kp * e + integ
        if abs(cmd) > lim:
            saturated += 1
            clipped = min(max(cmd, -lim), lim)
            integ -= cmd - clipped
            cmd = clipped
        pos = cmd
    if saturated:
        warnings.warn(f"actuator saturated on {saturated} of {n} updates", ActuatorSaturated,
                      stacklevel=2)
    residual = 2.0 * math.pi * (goal - act) / cfg.photon_wavelength
    return StabTrace(t=tt, target=goal, actuator=act, residual_phase=residual,
                     saturated_steps=saturated)


def summary(trace: StabTrace) -> dict[str, float]:
    pen = trace.penalty
    return {
        "std_qber": float(np.std(pen)),
        "max_qber": float(np.max(pen)),
        "rms_residual_rad": float(np.sqrt(np.mean(trace.residual_phase**2))),
        "saturated_steps": trace.saturated_steps,
    }
