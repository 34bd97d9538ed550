"""Event-level Monte Carlo of an entanglement QKD session.

Per pulse: draw the pair number, both basis choices, one joint outcome per
pair from the crosstalk block of the chosen bases, per-photon detection,
misrouting of Bob's photons, background clicks and multi-click resolution.
Pairs are independent of one another (no multi-pair interference).

Random numbers come from one substream per physical process and fixed-size
chunk of pulses, keyed by ``(seed, process, chunk)``; results therefore do
not depend on how chunks are spread over workers.
"""
from __future__ import annotations

import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .pair_source import SourceParams
from .qber_model import ErrorParams
from .quantum_state import (
    DIAGNOSTIC_BIT_MAPS,
    PAIR_BIT_MAPS,
    crosstalk,
    crosstalk_csv,
    dephase_polarization,
    ideal_state,
    qber_from_block,
    used_pairs,
)

Eavesdropper = Literal["none", "hv_intercept"]

CHUNK = 1 << 20
# substream ids, one per physical process
_PAIRS, _BASIS, _OUTCOME, _DETECT, _BACKGROUND, _MISROUTE, _RESOLVE = range(7)


@dataclass(frozen=True)
class McConfig:
    src: SourceParams
    err: ErrorParams
    n_pulses: int
    seed: int = 0
    basis_probs: tuple[float, ...] | None = None
    eavesdropper: Eavesdropper = "none"
    workers: int = 1

    def __post_init__(self):
        if self.n_pulses < 1:
            raise ValueError("n_pulses must be >= 1")
        if self.eavesdropper not in ("none", "hv_intercept"):
            raise ValueError(f"unknown eavesdropper {self.eavesdropper!r}")
        nb = self.n_bases
        probs = self.basis_probs
        if probs is None:
            probs = tuple([1.0 / nb] * nb)
            object.__setattr__(self, "basis_probs", probs)
        if len(probs) != nb or any(p < 0 for p in probs) or abs(sum(probs) - 1.0) > 1e-9:
            raise ValueError(f"basis_probs must be {nb} non-negative numbers summing to 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    @property
    def d(self) -> int:
        return self.err.d

    @property
    def n_bases(self) -> int:
        return 4 if self.err.d == 4 else 2


@dataclass(frozen=True)
class McReport:
    d: int
    n_pulses: int
    n_coinc: int
    # counts[(i-1)*d + a, (j-1)*d + b]
    counts: np.ndarray
    # one row per coincidence: alice basis, bob basis, alice outcome, bob outcome
    events: np.ndarray = field(repr=False)

    @property
    def n_bases(self) -> int:
        return self.counts.shape[0] // self.d

    @property
    def coinc_fraction(self) -> float:
        return self.n_coinc / self.n_pulses

    @property
    def coinc_se(self) -> float:
        f = self.coinc_fraction
        return math.sqrt(max(f * (1.0 - f), 0.0) / self.n_pulses)

    def block(self, i: int, j: int) -> np.ndarray:
        d = self.d
        return self.counts[(i - 1) * d:i * d, (j - 1) * d:j * d]

    def qber(self, pair: tuple[int, int]) -> tuple[float, float, int]:
        """``(QBER, standard error, sample size)`` for one basis pair."""
        blk = self.block(*pair)
        n = int(blk.sum())
        if n == 0:
            return math.nan, math.nan, 0
        if pair in DIAGNOSTIC_BIT_MAPS and self.d == 4:
            a, b = (np.array(m) for m in DIAGNOSTIC_BIT_MAPS[pair])
            q = float(blk[a[:, None] != b[None, :]].sum() / n)
        else:
            q = qber_from_block(blk.astype(float), pair)
        return q, math.sqrt(q * (1.0 - q) / n), n

    def qber_table(self, include_unused: bool = True) -> dict[tuple[int, int], tuple[float, float, int]]:
        pairs = list(used_pairs(self.d))
        if include_unused and self.d == 4:
            pairs += list(DIAGNOSTIC_BIT_MAPS)
        return {p: self.qber(p) for p in pairs}

    def same_basis_qber(self) -> tuple[float, float, int]:
        """Symbol error rate pooled over all same-basis pairs."""
        err = n = 0
        for i in range(1, self.n_bases + 1):
            blk = self.block(i, i)
            n += int(blk.sum())
            err += int(blk.sum() - np.trace(blk))
        if n == 0:
            return math.nan, math.nan, 0
        q = err / n
        return q, math.sqrt(q * (1.0 - q) / n), n

    def crosstalk_csv(self) -> str:
        return crosstalk_csv(self.counts, self.d, self.n_bases)


def _stream(seed: int, process: int, chunk: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(process, chunk)))


def _outcome_tables(cfg: McConfig) -> np.ndarray:
    state = ideal_state(cfg.d)
    if cfg.eavesdropper == "hv_intercept":
        state = dephase_polarization(state, "B")
    xt = crosstalk(state)
    nb, d = cfg.n_bases, cfg.d
    cdf = np.empty((nb * nb, d * d))
    for i in range(nb):
        for j in range(nb):
            c = np.cumsum(xt.block(i + 1, j + 1).ravel())
            c[-1] = 1.0
            cdf[i * nb + j] = c
    return cdf


def _resolve_table(d: int) -> tuple[np.ndarray, np.ndarray]:
    masks = np.arange(1 << d)
    pop = np.array([bin(m).count("1") for m in masks])
    bits = np.zeros((1 << d, d), dtype=np.int8)
    for m in masks:
        on = [k for k in range(d) if m >> k & 1]
        bits[m, :len(on)] = on
    return pop, bits


def _run_chunk(cfg: McConfig, cdf: np.ndarray, chunk: int, size: int):
    d, nb = cfg.d, cfg.n_bases
    src, seed = cfg.src, cfg.seed

    x = src.gamma / (1.0 + src.gamma)
    rng = _stream(seed, _PAIRS, chunk)
    n = rng.negative_binomial(2, 1.0 - x, size) if x > 0 else np.zeros(size, dtype=np.int64)

    rng = _stream(seed, _BASIS, chunk)
    probs = np.asarray(cfg.basis_probs)
    ia = rng.choice(nb, size=size, p=probs)
    ib = rng.choice(nb, size=size, p=probs)

    total = int(n.sum())
    owner = np.repeat(np.arange(size), n)
    rng = _stream(seed, _OUTCOME, chunk)
    u = rng.random(total)
    rows = cdf[ia[owner] * nb + ib[owner]]
    joint = np.minimum((u[:, None] > rows).sum(axis=1), d * d - 1)
    oa, ob = joint // d, joint % d

    rng = _stream(seed, _DETECT, chunk)
    det_a = rng.random(total) < src.eta_a
    det_b = rng.random(total) < src.eta_b

    # Bob's photon lands on a uniformly chosen wrong outcome with prob e_d
    rng = _stream(seed, _MISROUTE, chunk)
    flip = rng.random(total) < cfg.err.e_d
    shift = rng.integers(1, d, total)
    ob = np.where(flip, (ob + shift) % d, ob)

    mask_a = np.zeros(size, dtype=np.int64)
    mask_b = np.zeros(size, dtype=np.int64)
    np.bitwise_or.at(mask_a, owner[det_a], 1 << oa[det_a])
    np.bitwise_or.at(mask_b, owner[det_b], 1 << ob[det_b])

    rng = _stream(seed, _BACKGROUND, chunk)
    bg_a = rng.random(size) < src.xi_a
    bg_b = rng.random(size) < src.xi_b
    out_a = rng.integers(0, d, size)
    out_b = rng.integers(0, d, size)
    mask_a |= np.where(bg_a, 1 << out_a, 0)
    mask_b |= np.where(bg_b, 1 << out_b, 0)

    coinc = (mask_a > 0) & (mask_b > 0)
    pop, bits = _resolve_table(d)
    rng = _stream(seed, _RESOLVE, chunk)
    ua = rng.random(size)
    ub = rng.random(size)
    ma, mb = mask_a[coinc], mask_b[coinc]
    pick_a = bits[ma, (ua[coinc] * pop[ma]).astype(np.int64)]
    pick_b = bits[mb, (ub[coinc] * pop[mb]).astype(np.int64)]
    events = np.column_stack([ia[coinc] + 1, ib[coinc] + 1, pick_a, pick_b]).astype(np.int8)
    return events


def simulate(cfg: McConfig) -> McReport:
    cdf = _outcome_tables(cfg)
    sizes = [min(CHUNK, cfg.n_pulses - k) for k in range(0, cfg.n_pulses, CHUNK)]
    jobs = list(enumerate(sizes))
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as ex:
            parts = list(ex.map(lambda job: _run_chunk(cfg, cdf, *job), jobs))
    else:
        parts = [_run_chunk(cfg, cdf, *job) for job in jobs]
    events = np.concatenate(parts) if parts else np.zeros((0, 4), dtype=np.int8)
    d, nb = cfg.d, cfg.n_bases
    counts = np.zeros((nb * d, nb * d), dtype=np.int64)
    ev = events.astype(np.int64)
    np.add.at(counts, ((ev[:, 0] - 1) * d + ev[:, 2], (ev[:, 1] - 1) * d + ev[:, 3]), 1)
    events.setflags(write=False)
    counts.setflags(write=False)
    return McReport(d=d, n_pulses=cfg.n_pulses, n_coinc=len(events), counts=counts, events=events)


@dataclass(frozen=True)
class SiftedKey:
    """Aligned sifted symbols with the basis pair each one came from.

    Same-basis pairs carry a full outcome (0..d-1); partially correlated
    4D pairs carry one bit.
    """

    pairs: np.ndarray
    alice: np.ndarray
    bob: np.ndarray
    # m[i-1, j-1]: sifted events per basis pair
    m: np.ndarray

    def mismatch(self, pair: tuple[int, int]) -> tuple[float, int]:
        sel = (self.pairs[:, 0] == pair[0]) & (self.pairs[:, 1] == pair[1])
        n = int(sel.sum())
        if n == 0:
            return math.nan, 0
        return float(np.mean(self.alice[sel] != self.bob[sel])), n

    def dump(self) -> str:
        buf = io.StringIO()
        buf.write("alice_basis bob_basis alice bob\n")
        for (i, j), a, b in zip(self.pairs, self.alice, self.bob):
            buf.write(f"{i} {j} {a} {b}\n")
        return buf.getvalue()


def sift(report: McReport, protocol: Literal["2D", "4D"]) -> SiftedKey:
    ev = report.events.astype(np.int64)
    if protocol == "2D":
        if report.d != 2:
            raise ValueError("2D sifting needs a d = 2 report")
        keep = ev[:, 0] == ev[:, 1]
        sel = ev[keep]
        alice, bob = sel[:, 2].copy(), sel[:, 3].copy()
    elif protocol == "4D":
        if report.d != 4:
            raise ValueError("4D sifting needs a d = 4 report")
        # keep only pairs in the usage table; mutually unbiased and unused
        # pairs carry no key
        pair_id = (ev[:, 0] - 1) * 4 + (ev[:, 1] - 1)
        keep = np.isin(pair_id, [(i - 1) * 4 + (j - 1) for i, j in used_pairs(4)])
        sel = ev[keep]
        alice, bob = sel[:, 2].copy(), sel[:, 3].copy()
        for (i, j), (amap, bmap) in PAIR_BIT_MAPS.items():
            rows = (sel[:, 0] == i) & (sel[:, 1] == j)
            alice[rows] = np.asarray(amap)[sel[rows, 2]]
            bob[rows] = np.asarray(bmap)[sel[rows, 3]]
    else:
        raise ValueError(f"unknown protocol {protocol!r}")
    nb = report.n_bases
    m = np.zeros((nb, nb), dtype=np.int64)
    np.add.at(m, (sel[:, 0] - 1, sel[:, 1] - 1), 1)
    return SiftedKey(pairs=sel[:, :2], alice=alice, bob=bob, m=m)


def background_only_qber(d: int) -> float:
    """Mismatch of two independent uniform outcomes."""
    return 1.0 - 1.0 / d
