"""Bases, joint states and crosstalk matrices for the 2- and 4-dimensional protocols.

Computational labels for d = 4: |0> = H t1, |1> = V t2, |2> = V t1, |3> = H t2.
Basis vectors are real, so the Born rule for the maximally correlated state
needs no complex conjugation bookkeeping.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import UnusedPairError, ZeroBlockError

S2 = 1.0 / math.sqrt(2.0)

# Basis vectors as rows, in the outcome order used for every crosstalk block.
_BASES_4D = {
    1: np.eye(4),
    2: S2 * np.array([[1, 1, 0, 0], [1, -1, 0, 0], [0, 0, 1, 1], [0, 0, 1, -1]], dtype=float),
    3: S2 * np.array([[1, 0, 1, 0], [1, 0, -1, 0], [0, 1, 0, 1], [0, 1, 0, -1]], dtype=float),
    4: 0.5 * np.array([[1, 1, 1, -1], [1, 1, -1, 1], [1, -1, 1, 1], [1, -1, -1, -1]], dtype=float),
}
_BASES_2D = {
    1: np.eye(2),
    2: S2 * np.array([[1, 1], [1, -1]], dtype=float),
}

# Computational labels carrying horizontal polarization.
H_SECTOR_4D = (0, 3)
# Computational labels in the late time bin.
T2_SECTOR_4D = (1, 3)

# 1-bit maps for partially correlated pairs: (Alice basis, Bob basis) ->
# (Alice outcome -> bit, Bob outcome -> bit). The (2, 4) map groups basis-4
# outcomes by their support on span{|0>,|1>}: v0, v1 project onto |0>+|1>,
# v2, v3 onto |0>-|1>; see derive_pair_bits.
PAIR_BIT_MAPS: dict[tuple[int, int], tuple[tuple[int, ...], tuple[int, ...]]] = {
    (1, 2): ((0, 0, 1, 1), (0, 0, 1, 1)),
    (2, 1): ((0, 0, 1, 1), (0, 0, 1, 1)),
    (1, 3): ((0, 1, 0, 1), (0, 0, 1, 1)),
    (3, 1): ((0, 0, 1, 1), (0, 1, 0, 1)),
    (2, 4): ((0, 1, 1, 0), (0, 0, 1, 1)),
    (4, 2): ((0, 0, 1, 1), (0, 1, 1, 0)),
}
SAME_BASIS_PAIRS_4D = ((1, 1), (2, 2), (3, 3), (4, 4))
# (3, 4) and (4, 3) never enter the key but are reported in crosstalk
# summaries; their maps come from the same ideal-state grouping.
DIAGNOSTIC_BIT_MAPS: dict[tuple[int, int], tuple[tuple[int, ...], tuple[int, ...]]] = {
    (3, 4): ((0, 1, 1, 0), (0, 1, 0, 1)),
    (4, 3): ((0, 1, 0, 1), (0, 1, 1, 0)),
}
UNUSED_PAIRS = frozenset({(3, 4), (4, 3)})


@dataclass(frozen=True)
class BasisSet:
    d: int
    vectors: Mapping[int, np.ndarray]

    @classmethod
    def standard(cls, d: int) -> "BasisSet":
        if d == 4:
            return cls(4, {k: v.copy() for k, v in _BASES_4D.items()})
        if d == 2:
            return cls(2, {k: v.copy() for k, v in _BASES_2D.items()})
        raise ValueError("d must be 2 or 4")

    @property
    def indices(self) -> tuple[int, ...]:
        return tuple(sorted(self.vectors))

    def projector(self, basis: int, outcome: int) -> np.ndarray:
        v = self.vectors[basis][outcome]
        return np.outer(v, v.conj())

    def orthonormality_error(self) -> float:
        err = 0.0
        for v in self.vectors.values():
            err = max(err, float(np.max(np.abs(v @ v.conj().T - np.eye(self.d)))))
        return err

    def mub_error(self, a: int, b: int) -> float:
        """Largest deviation of |<x|y>|^2 from 1/d over the two bases."""
        ov = np.abs(self.vectors[a].conj() @ self.vectors[b].T) ** 2
        return float(np.max(np.abs(ov - 1.0 / self.d)))


@dataclass(frozen=True)
class JointState:
    rho: np.ndarray

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=complex)
        if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
            raise ValueError("rho must be square")
        d = int(round(math.sqrt(rho.shape[0])))
        if d * d != rho.shape[0]:
            raise ValueError("rho must act on a d x d bipartite space")
        rho = rho.copy()
        rho.setflags(write=False)
        object.__setattr__(self, "rho", rho)

    @property
    def d(self) -> int:
        return int(round(math.sqrt(self.rho.shape[0])))

    def trace(self) -> float:
        return float(np.real(np.trace(self.rho)))

    def min_eigenvalue(self) -> float:
        return float(np.min(np.linalg.eigvalsh(0.5 * (self.rho + self.rho.conj().T))))

    def purity(self) -> float:
        return float(np.real(np.trace(self.rho @ self.rho)))

    def marginal(self, side: str) -> np.ndarray:
        d = self.d
        t = self.rho.reshape(d, d, d, d)
        if side.upper() == "A":
            return np.einsum("ijkj->ik", t)
        return np.einsum("ijil->jl", t)

    def is_valid(self, tol: float = 1e-10) -> bool:
        herm = np.max(np.abs(self.rho - self.rho.conj().T)) < 1e-12
        return herm and abs(self.trace() - 1.0) < 1e-12 and self.min_eigenvalue() >= -tol


def ideal_state(d: int) -> JointState:
    """Maximally correlated pure state sum_i |ii> / sqrt(d)."""
    if d not in (2, 4):
        raise ValueError("d must be 2 or 4")
    psi = np.zeros(d * d, dtype=complex)
    for i in range(d):
        psi[i * d + i] = 1.0
    psi /= math.sqrt(d)
    return JointState(np.outer(psi, psi.conj()))


def depolarize(state: JointState, lam: float) -> JointState:
    n = state.rho.shape[0]
    return JointState((1.0 - lam) * state.rho + lam * np.eye(n) / n)


def _local(op: np.ndarray, side: str, d: int) -> np.ndarray:
    return np.kron(op, np.eye(d)) if side.upper() == "A" else np.kron(np.eye(d), op)


def dephase_polarization(state: JointState, side: str = "B") -> JointState:
    """Remove coherence between H and V on one side (H/V measure-and-resend)."""
    d = state.d
    if d == 4:
        z = np.diag([1.0 if i in H_SECTOR_4D else -1.0 for i in range(4)])
    else:
        z = np.diag([1.0, -1.0])
    zz = _local(z, side, d)
    return JointState(0.5 * (state.rho + zz @ state.rho @ zz))


def timebin_phase(state: JointState, phase: float, side: str = "B") -> JointState:
    """Apply a relative phase to the late time bin on one side (d = 4 only)."""
    if state.d != 4:
        raise ValueError("time-bin phase needs the d = 4 encoding")
    u = np.diag([np.exp(1j * phase) if i in T2_SECTOR_4D else 1.0 for i in range(4)])
    uu = _local(u, side, 4)
    return JointState(uu @ state.rho @ uu.conj().T)


@dataclass(frozen=True)
class CrosstalkMatrix:
    """Per-(Alice basis, Bob basis) outcome probabilities, each block summing to 1."""

    d: int
    blocks: Mapping[tuple[int, int], np.ndarray]

    def block(self, i: int, j: int) -> np.ndarray:
        return self.blocks[(i, j)]

    def full(self) -> np.ndarray:
        """Blocks tiled into one (nb*d) x (nb*d) array, Alice along rows."""
        idx = sorted({i for i, _ in self.blocks})
        d = self.d
        out = np.zeros((len(idx) * d, len(idx) * d))
        for a, i in enumerate(idx):
            for b, j in enumerate(idx):
                out[a * d:(a + 1) * d, b * d:(b + 1) * d] = self.blocks[(i, j)]
        return out

    def to_csv(self) -> str:
        return crosstalk_csv(self.full(), self.d, len({i for i, _ in self.blocks}))


def _cell(x, fmt: str) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return fmt.format(float(x))


def crosstalk_csv(full: np.ndarray, d: int, n_bases: int, fmt: str = "{:.10f}") -> str:
    """Row ``A{i}_{a}``, column ``B{j}_{b}``; integer arrays are written as counts."""
    labels = [f"B{j}_{b}" for j in range(1, n_bases + 1) for b in range(d)]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["alice"] + labels)
    for i in range(1, n_bases + 1):
        for a in range(d):
            row = full[(i - 1) * d + a]
            w.writerow([f"A{i}_{a}"] + [_cell(x, fmt) for x in row])
    return buf.getvalue()


def joint_probabilities(state: JointState, bases: BasisSet, i: int, j: int) -> np.ndarray:
    """Unnormalized ``P[a, b] = <a (x) b| rho |a (x) b>``."""
    va, vb = bases.vectors[i], bases.vectors[j]
    d = bases.d
    t = state.rho.reshape(d, d, d, d)
    # amplitude vectors |a>|b> contracted against rho on both sides
    p = np.einsum("ai,bj,ijkl,ak,bl->ab", va.conj(), vb.conj(), t, va, vb, optimize=True)
    return np.real(p)


def crosstalk(state: JointState, bases: BasisSet | None = None) -> CrosstalkMatrix:
    bases = bases or BasisSet.standard(state.d)
    if bases.d != state.d:
        raise ValueError("basis and state dimension differ")
    blocks = {}
    for i in bases.indices:
        for j in bases.indices:
            p = joint_probabilities(state, bases, i, j)
            p = np.where(np.abs(p) < 1e-15, 0.0, p)
            tot = p.sum()
            if tot <= 0:
                raise ZeroBlockError(f"block ({i}, {j}) has zero probability")
            blocks[(i, j)] = p / tot
    return CrosstalkMatrix(bases.d, blocks)


def used_pairs(d: int) -> tuple[tuple[int, int], ...]:
    if d == 2:
        return ((1, 1), (2, 2))
    return SAME_BASIS_PAIRS_4D + tuple(PAIR_BIT_MAPS)


def pair_bits(pair: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Alice and Bob outcome->bit tables for a partially correlated pair."""
    if pair in UNUSED_PAIRS:
        raise UnusedPairError(f"basis pair {pair} is not used")
    if pair not in PAIR_BIT_MAPS:
        raise KeyError(f"{pair} has no 1-bit map")
    a, b = PAIR_BIT_MAPS[pair]
    return np.array(a), np.array(b)


def qber_from_block(block: np.ndarray, pair: tuple[int, int]) -> float:
    i, j = pair
    if pair in UNUSED_PAIRS:
        raise UnusedPairError(f"basis pair {pair} is not used")
    tot = block.sum()
    if tot <= 0:
        raise ZeroBlockError(f"block {pair} has zero probability")
    if i == j:
        return float(1.0 - np.trace(block) / tot)
    return _mismatch(block, PAIR_BIT_MAPS[pair])


def qber_from_crosstalk(xt: CrosstalkMatrix, pair: tuple[int, int]) -> float:
    """Error rate for one basis pair (symbol error for same-basis pairs, bit error otherwise)."""
    if pair in UNUSED_PAIRS and xt.d == 4:
        raise UnusedPairError(f"basis pair {pair} is not used")
    if xt.d == 2 and pair[0] != pair[1]:
        raise UnusedPairError(f"basis pair {pair} is discarded in the 2D protocol")
    return qber_from_block(xt.block(*pair), pair)


def _mismatch(block: np.ndarray, maps: tuple[tuple[int, ...], tuple[int, ...]]) -> float:
    abit, bbit = np.array(maps[0]), np.array(maps[1])
    return float(block[abit[:, None] != bbit[None, :]].sum() / block.sum())


def diagnostic_qber(xt: CrosstalkMatrix, pair: tuple[int, int]) -> float:
    """Bit error rate of an unused 4D pair, for reporting only."""
    if xt.d != 4 or pair not in DIAGNOSTIC_BIT_MAPS:
        raise KeyError(f"{pair} has no diagnostic map")
    return _mismatch(xt.block(*pair), DIAGNOSTIC_BIT_MAPS[pair])


def qber_table(xt: CrosstalkMatrix, include_unused: bool = False) -> dict[tuple[int, int], float]:
    """QBER for every used pair; optionally the unused 4D pairs as well."""
    out = {p: qber_from_crosstalk(xt, p) for p in used_pairs(xt.d)}
    if include_unused and xt.d == 4:
        out.update({p: diagnostic_qber(xt, p) for p in DIAGNOSTIC_BIT_MAPS})
    return out


def derive_pair_bits(i: int, j: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Group the outcomes of bases i and j into two maximally correlated halves.

    Works from the ideal-state joint distribution: two outcomes of Alice share
    a bit when they predict the same set of Bob outcomes. Used to build and
    check :data:`PAIR_BIT_MAPS`.
    """
    bases = BasisSet.standard(4)
    p = joint_probabilities(ideal_state(4), bases, i, j)
    support = [tuple(np.flatnonzero(p[a] > 1e-12)) for a in range(4)]
    groups = sorted(set(support), key=lambda s: s[0])
    if len(groups) != 2:
        raise ValueError(f"pair ({i}, {j}) does not split into two halves")
    a_bits = tuple(groups.index(s) for s in support)
    b_bits = [0] * 4
    for g, s in enumerate(groups):
        for b in s:
            b_bits[b] = g
    return a_bits, tuple(b_bits)
