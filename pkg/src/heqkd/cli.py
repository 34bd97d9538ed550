"""Command-line entry point.

Subcommands write CSV tables (or JSON records with ``format: json``) plus a
``summary.json`` with the headline numbers into ``--out``. Exit codes:
0 success, 1 runtime failure, 2 configuration or usage error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
import warnings
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import __version__
from .config import RunConfig, load
from .errors import ActuatorSaturated, ConfigError
from .key_optimizer import cutoff_loss, heqkd_only_window, monotonicity_violations, sweep, sweep_csv
from .mc_oracle import McConfig, simulate, sift
from .pair_source import SourceParams, coincidence_prob
from .phase_stab import PHASE_SENSITIVE_PAIRS, simulate_tracking, summary as stab_summary
from .qber_model import ErrorParams, qber_obs
from .quantum_state import (
    crosstalk,
    dephase_polarization,
    depolarize,
    ideal_state,
    qber_table,
    used_pairs,
)
from .sat_link import optimize_pass, pass_profile

log = logging.getLogger("heqkd")

PASS_CSV_HEADER = [
    "max_elevation_deg", "duration_s", "doppler_swing_um",
    "heqkd_mu_opt", "heqkd_p_opt", "heqkd_key_bits",
    "bbm92_mu_opt", "bbm92_r_opt", "bbm92_key_bits", "ratio",
]
ORACLE_CSV_HEADER = [
    "quantity", "d", "mu", "eta_a", "eta_b", "xi", "n_pulses",
    "mc", "se", "analytic_fock", "analytic_paper", "z_fock", "z_paper",
]


class Output:
    def __init__(self, root: Path, fmt: str):
        self.root = root
        self.fmt = fmt
        root.mkdir(parents=True, exist_ok=True)

    def table(self, stem: str, csv_text: str) -> Path:
        if self.fmt == "csv":
            path = self.root / f"{stem}.csv"
            path.write_text(csv_text)
            return path
        rows = [{k: _num(v) for k, v in r.items()} for r in csv.DictReader(io.StringIO(csv_text))]
        path = self.root / f"{stem}.json"
        path.write_text(json.dumps(rows, indent=1) + "\n")
        return path

    def text(self, name: str, text: str) -> Path:
        path = self.root / name
        path.write_text(text)
        return path

    def summary(self, data: dict) -> Path:
        path = self.root / "summary.json"
        path.write_text(json.dumps(_clean(data), indent=2, sort_keys=True) + "\n")
        return path


def _num(v: str):
    try:
        return int(v)
    except ValueError:
        pass
    try:
        return float(v)
    except ValueError:
        return v


def _clean(x):
    # JSON has no NaN; numpy scalars are not serializable
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return None if not math.isfinite(float(x)) else float(x)
    return x


def _rows_csv(header: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(x: float, spec: str = ".6e") -> str:
    return "nan" if x is None or not math.isfinite(x) else format(x, spec)


# subcommands


def cmd_rate_sweep(run: RunConfig, out: Output) -> dict:
    run.require("sweep")
    losses = run.section("sweep")["losses_db"]
    if not losses:
        raise ConfigError("sweep.losses_db is empty or missing", None, run.path)
    workers = run.section("sweep")["workers"]
    cfg4, cfg2 = run.system_config("4D"), run.system_config("2D")
    p4 = sweep(cfg4, losses, workers)
    p2 = sweep(cfg2, losses, workers)
    out.table("rate_sweep", sweep_csv(p4, p2))
    window = heqkd_only_window(p4, p2)
    c4, c2 = cutoff_loss(p4), cutoff_loss(p2)
    anchors = {f"{p.loss_db:g}": {"heqkd_bits_per_hour": p.key_rate_per_hour,
                                  "bbm92_bits_per_hour": q.key_rate_per_hour}
               for p, q in zip(p4, p2) if p.loss_db in (47.0, 57.0)}
    return {
        "subcommand": "rate-sweep",
        "mode": run.mode,
        "heqkd_cutoff_db": c4,
        "bbm92_cutoff_db": c2,
        "heqkd_only_window_db": list(window) if window else None,
        "heqkd_only_width_db": (c4 - c2) if (c4 is not None and c2 is not None) else None,
        "anchors": anchors,
        "monotonicity_violations_db": {"heqkd": monotonicity_violations(p4),
                                       "bbm92": monotonicity_violations(p2)},
    }


def cmd_pass_sim(run: RunConfig, out: Output) -> dict:
    run.require("orbit")
    link = run.link_params()
    cfg4, cfg2 = run.system_config("4D"), run.system_config("2D")
    rows, ratios = [], {}
    for el in run.section("orbit")["max_elevations_deg"]:
        orbit = run.orbit_params(el)
        a, b = optimize_pass(orbit, link, cfg4), optimize_pass(orbit, link, cfg2)
        ratio = a.key_length / b.key_length if b.key_length > 0 else math.nan
        ratios[f"{el:g}"] = ratio
        rows.append([f"{el:g}", f"{a.duration_s:.3f}", f"{a.doppler_swing_um:.6f}",
                     _fmt(a.mu_opt), _fmt(a.ratio_opt, ".6f"), a.key_length,
                     _fmt(b.mu_opt), _fmt(b.ratio_opt, ".6f"), b.key_length, _fmt(ratio, ".6f")])
        if orbit.visible:
            out.table(f"pass_profile_el{el:g}", pass_profile(orbit, link).to_csv())
    out.table("pass_sim", _rows_csv(PASS_CSV_HEADER, rows))
    finite = [r for r in ratios.values() if math.isfinite(r)]
    return {
        "subcommand": "pass-sim",
        "mode": run.mode,
        "link_fixed_loss_db": link.fixed_loss_db,
        "ratio_by_max_elevation": ratios,
        "min_ratio": min(finite) if finite else None,
    }


def cmd_crosstalk(run: RunConfig, out: Output) -> dict:
    run.require("crosstalk")
    s = run.section("crosstalk")
    d, channel = s["d"], s["channel"]
    state = ideal_state(d)
    if channel == "hv_intercept":
        state = dephase_polarization(state, "B")
    elif channel == "depolarize":
        state = depolarize(state, s["depolarize"])
    xt = crosstalk(state)
    out.table("crosstalk", xt.to_csv())
    table = qber_table(xt, include_unused=True)
    used = set(used_pairs(d))
    out.table("qber", _rows_csv(["alice_basis", "bob_basis", "qber", "used"],
                                [[i, j, f"{q:.10f}", int((i, j) in used)] for (i, j), q in table.items()]))
    result: dict[str, Any] = {
        "subcommand": "crosstalk",
        "d": d,
        "channel": channel,
        "qber": {f"{i}{j}": q for (i, j), q in table.items()},
    }
    if s["mc_pulses"] > 0:
        if channel == "depolarize":
            raise ConfigError("crosstalk.mc_pulses needs channel ideal or hv_intercept", None, run.path)
        rep = simulate(run.crosstalk_mc_config())
        out.table("crosstalk_mc", rep.crosstalk_csv())
        mc_tab = rep.qber_table()
        out.table("qber_mc", _rows_csv(
            ["alice_basis", "bob_basis", "qber", "se", "n"],
            [[i, j, _fmt(q, ".6f"), _fmt(se, ".6f"), n] for (i, j), (q, se, n) in mc_tab.items()]))
        out.text("sifted_key.txt", sift(rep, "4D" if d == 4 else "2D").dump())
        result["mc"] = {"n_pulses": rep.n_pulses, "n_coinc": rep.n_coinc}
        if s["mc_e_d"] == 0.0:
            # without intrinsic error the state table is the expectation
            result["mc"]["max_abs_z_vs_state"] = max(
                (abs(q - table[p]) / se for p, (q, se, n) in mc_tab.items() if n and se > 0),
                default=None)
    return result


def _oracle_rows(run: RunConfig) -> tuple[list[list], list[float]]:
    s = run.section("oracle")
    n, k = s["n_pulses"], 0
    rows, zs = [], []

    def seed() -> int:
        nonlocal k
        k += 1
        return run.seed * 1000 + k

    d0 = int(s["dims"][0])
    for mu in s["mus"]:
        for ea, eb, xi in zip(s["coinc_eta_a"], s["coinc_eta_b"], s["coinc_xi"]):
            src = SourceParams.from_mu(mu, xi_a=xi, xi_b=xi, eta_a=ea, eta_b=eb)
            rep = simulate(McConfig(src, ErrorParams.calibrated(d0), n, seed=seed(), workers=s["workers"]))
            r = coincidence_prob(src)
            z = (rep.coinc_fraction - r) / rep.coinc_se if rep.coinc_se > 0 else math.nan
            zs.append(z)
            rows.append(["coinc", d0, mu, ea, eb, xi, n, _fmt(rep.coinc_fraction), _fmt(rep.coinc_se),
                         _fmt(r), _fmt(r), _fmt(z, ".3f"), _fmt(z, ".3f")])
    for d in (int(x) for x in s["dims"]):
        err = ErrorParams.calibrated(d)
        for mu in s["mus"]:
            src = SourceParams.from_mu(mu, eta_a=s["qber_eta_a"], eta_b=s["qber_eta_b"])
            rep = simulate(McConfig(src, err, n, seed=seed(), workers=s["workers"]))
            q, se, _ = rep.same_basis_qber()
            qf = qber_obs(src, err, "fock").q_obs
            qp = qber_obs(src, err, "paper").q_obs
            zf = (q - qf) / se if se > 0 else math.nan
            zp = (q - qp) / se if se > 0 else math.nan
            zs.append(zf)
            rows.append(["qber", d, mu, s["qber_eta_a"], s["qber_eta_b"], 0.0, n, _fmt(q), _fmt(se),
                         _fmt(qf), _fmt(qp), _fmt(zf, ".3f"), _fmt(zp, ".3f")])
    return rows, zs


def cmd_oracle(run: RunConfig, out: Output) -> dict:
    run.require("oracle")
    rows, zs = _oracle_rows(run)
    out.table("oracle", _rows_csv(ORACLE_CSV_HEADER, rows))
    finite = [abs(z) for z in zs if math.isfinite(z)]
    return {
        "subcommand": "oracle",
        "n_points": len(rows),
        "max_abs_z_fock": max(finite) if finite else None,
        "n_beyond_3se": sum(1 for z in finite if z > 3.0),
        "beyond_3se": [f"{r[0]} d={r[1]} mu={r[2]}" for r, z in zip(rows, zs)
                       if math.isfinite(z) and abs(z) > 3.0],
    }


def cmd_stabilize(run: RunConfig, out: Output) -> dict:
    run.require("stab")
    s = run.section("stab")
    orbit = run.orbit_params(s["max_elevation_deg"])
    orbit = type(orbit)(**{**orbit.__dict__, "time_step": s["profile_step_s"]})
    if not orbit.visible:
        raise ConfigError("stab.max_elevation_deg gives no pass above the minimum elevation",
                          None, run.path)
    profile = pass_profile(orbit, run.link_params())
    cfg = run.stab_config()
    result: dict[str, Any] = {"subcommand": "stabilize",
                              "doppler_swing_um": profile.doppler_swing * 1e6}
    for name, c in (("closed", cfg), ("open", cfg.open_loop())):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", ActuatorSaturated)
            trace = simulate_tracking(c, profile.t, profile.doppler)
        for w in caught:
            log.warning("%s loop: %s", name, w.message)
        out.table(f"stab_{name}", trace.to_csv())
        summ = stab_summary(trace)
        by_pair = trace.penalty_by_pair()
        summ["max_penalty_basis1"] = max(float(np.max(v)) for p, v in by_pair.items()
                                         if p not in PHASE_SENSITIVE_PAIRS)
        result[name] = summ
    return result


COMMANDS: dict[str, Callable[[RunConfig, Output], dict]] = {
    "rate-sweep": cmd_rate_sweep,
    "pass-sim": cmd_pass_sim,
    "crosstalk": cmd_crosstalk,
    "oracle": cmd_oracle,
    "stabilize": cmd_stabilize,
}

HELP = {
    "rate-sweep": "optimized key rate vs channel loss for both protocols",
    "pass-sim": "per-pass key vs maximum elevation for a LEO pass",
    "crosstalk": "crosstalk matrices and per-basis QBER, optionally sampled",
    "oracle": "Monte Carlo check of the analytic coincidence and error rates",
    "stabilize": "phase-tracking loop against the Doppler ramp",
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="heqkd", description="Hyperentangled QKD link analysis.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name, help=HELP[name])
        s.add_argument("--config", required=True, metavar="PATH")
        s.add_argument("--out", default="out", metavar="DIR")
        s.add_argument("--seed", type=int, default=None, metavar="N", help="override the config seed")
        s.add_argument("--mode", choices=("paper", "fock"), default=None)
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed must be >= 0")
        run = load(args.config).with_overrides(seed=args.seed, mode=args.mode)
        out = Output(Path(args.out), run.format)
        result = COMMANDS[args.command](run, out)
        result["seed"] = run.seed
        out.summary(result)
    except ConfigError as exc:
        print(f"heqkd: config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - any failure maps to exit 1
        log.debug("failure", exc_info=True)
        print(f"heqkd: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
