"""Independent dense-grid evaluation of the finite-key lengths.

Written from the published formulas without importing the package, so it
can serve as a reference for the optimized beta search. Run as a script to
print the frozen values used in the tests.
"""
import math

import numpy as np


def _h2(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    m = (x > 0) & (x < 1)
    xm = x[m]
    out[m] = -xm * np.log2(xm) - (1 - xm) * np.log2(1 - xm)
    return out


def _h4(x):
    x = np.asarray(x, dtype=float)
    return _h2(x) + np.where(x > 0, x * math.log2(3.0), 0.0)


def dense_2d(m, r, q, eps_sec, eps_cor, points=2_000_001):
    n = math.floor(m * r)
    k = m - n
    betas = np.exp(np.linspace(math.log(1e-30 * eps_sec), math.log(eps_sec / 4 * (1 - 1e-9)), points))
    delta = np.sqrt((n + k) / (n * k) * (k + 1) / k * np.log(1 / betas))
    pe = np.minimum(0.5, q + delta)
    val = (n * (1 - _h2(pe)) - 1.12 * n * _h2(np.array([min(q, 0.5)]))[0]
           - np.log2(8 / (betas**4 * eps_cor)))
    return max(0, math.floor(val.max()))


def dense_4d(n_coinc, p, q, eps_sec, eps_cor, points=2_000_001):
    probs = np.array([p, p, 0.5 - p, 0.5 - p])
    m = np.floor(n_coinc * np.outer(probs, probs))
    n1 = m[0, 0] + m[0, 1] + m[0, 2]
    n2 = m[1, 0] + m[1, 1] + m[1, 3]
    m44, m33 = m[3, 3], m[2, 2]
    qq = 0.5 - p
    a = p * p * q + p * p * q + p * qq * q
    leak = 1.2 * (n1 + n2) * _h4(np.array([min(0.75, a)]))[0]
    betas = np.exp(np.linspace(math.log(1e-30 * eps_sec), math.log(eps_sec / 4 * (1 - 1e-9)), points))
    eb = eps_sec / 6 - betas / 3

    def part(n, k):
        nu = np.sqrt((n + k) * (k + 1) * np.log(2 / eb) / (n * k * k))
        return n * (2 - _h4(np.minimum(0.75, q + nu)))

    val = part(n1, m44) + part(n2, m33) - leak - math.log2(2 / eps_cor) + 4 * np.log2(betas) - 2
    return max(0, math.floor(val.max()))


def bisect_threshold(lo=0.05, hi=0.2):
    f = lambda x: 1 - 2.12 * float(_h2(np.array([x]))[0])
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


if __name__ == "__main__":
    for q in (0.0, 0.02, 0.05, 0.08):
        print("2D", q, dense_2d(2_000_000, 0.5, q, 1e-9, 1e-15))
    for r in (0.2, 0.9):
        print("2D r", r, dense_2d(2_000_000, r, 0.02, 1e-9, 1e-15))
    for q in (0.0, 0.03, 0.08):
        print("4D", q, dense_4d(10_000_000, 0.25, q, 1e-9, 1e-15))
    print("4D p=0.45", dense_4d(10_000_000, 0.45, 0.03, 1e-9, 1e-15))
    print("thr", repr(bisect_threshold()))
