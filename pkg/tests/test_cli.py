"""End-to-end CLI runs against golden outputs.

Set ``HEQKD_UPDATE_GOLDEN=1`` to rewrite the files under ``tests/golden``.
"""
import json
import os
import subprocess
import sys
from pathlib import Path

import pytest
import yaml

from heqkd.cli import main

ROOT = Path(__file__).parent.parent
CONFIGS = ROOT / "configs"
GOLDEN = Path(__file__).parent / "golden"
UPDATE = os.environ.get("HEQKD_UPDATE_GOLDEN") == "1"


def reduced(tmp_path, name, **patch):
    """A shipped config with some section keys replaced (to keep runs short)."""
    data = yaml.safe_load((CONFIGS / name).read_text())
    for dotted, value in patch.items():
        sec, key = dotted.split("__")
        data.setdefault(sec, {})[key] = value
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data, sort_keys=False))
    return path


CASES = {
    "crosstalk_fig2": ("crosstalk", lambda tmp: CONFIGS / "fig2_crosstalk.cfg"),
    "crosstalk_fig3": ("crosstalk", lambda tmp: CONFIGS / "fig3_eavesdropper.cfg"),
    "stabilize_fig6": ("stabilize", lambda tmp: reduced(
        tmp, "fig6_doppler.cfg", stab__max_elevation_deg=20.02)),
    "rate_sweep_fig4": ("rate-sweep", lambda tmp: reduced(tmp, "fig4_gep.cfg", sweep__losses_db=[47, 57])),
    "pass_sim_fig5": ("pass-sim", lambda tmp: reduced(
        tmp, "fig5_leo.cfg", orbit__max_elevations_deg=[20, 60])),
    "oracle": ("oracle", lambda tmp: reduced(
        tmp, "oracle.cfg", oracle__n_pulses=200000, oracle__mus=[0.01])),
}


def run_cli(cmd, cfg, out, *extra):
    return main([cmd, "--config", str(cfg), "--out", str(out), *extra])


@pytest.mark.parametrize("case", sorted(CASES))
def test_golden_outputs(case, tmp_path):
    cmd, make = CASES[case]
    out = tmp_path / "out"
    assert run_cli(cmd, make(tmp_path), out) == 0
    produced = sorted(p.name for p in out.iterdir())
    target = GOLDEN / case
    if UPDATE:
        target.mkdir(parents=True, exist_ok=True)
        for old in target.iterdir():
            old.unlink()
        for name in produced:
            (target / name).write_bytes((out / name).read_bytes())
    expected = sorted(p.name for p in target.iterdir())
    assert produced == expected
    for name in produced:
        assert (out / name).read_bytes() == (target / name).read_bytes(), name


def test_rerun_is_byte_identical(tmp_path):
    cfg = CONFIGS / "fig3_eavesdropper.cfg"
    run_cli("crosstalk", cfg, tmp_path / "a")
    run_cli("crosstalk", cfg, tmp_path / "b")
    for p in (tmp_path / "a").iterdir():
        assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()


def test_seed_override_changes_sampling(tmp_path):
    cfg = CONFIGS / "fig3_eavesdropper.cfg"
    run_cli("crosstalk", cfg, tmp_path / "a")
    run_cli("crosstalk", cfg, tmp_path / "b", "--seed", "99")
    a = (tmp_path / "a" / "crosstalk_mc.csv").read_bytes()
    b = (tmp_path / "b" / "crosstalk_mc.csv").read_bytes()
    assert a != b
    assert json.loads((tmp_path / "b" / "summary.json").read_text())["seed"] == 99


def test_json_format(tmp_path):
    cfg = tmp_path / "j.cfg"
    cfg.write_text("format: json\ncrosstalk:\n  d: 2\n  channel: hv_intercept\n")
    assert run_cli("crosstalk", cfg, tmp_path / "o") == 0
    rows = json.loads((tmp_path / "o" / "qber.json").read_text())
    assert {(r["alice_basis"], r["bob_basis"]): r["qber"] for r in rows} == {(1, 1): 0.0, (2, 2): 0.5}


def test_rate_sweep_summary(tmp_path):
    cfg = reduced(tmp_path, "fig4_gep.cfg", sweep__losses_db=[30, 62])
    assert run_cli("rate-sweep", cfg, tmp_path / "o") == 0
    s = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert s["heqkd_cutoff_db"] == 30 and s["bbm92_cutoff_db"] == 30
    assert s["heqkd_only_window_db"] is None


@pytest.mark.parametrize("text,cmd", [
    ("sweep:\n  losses_db: []\n", "rate-sweep"),
    ("mode: paper\n", "rate-sweep"),
    ("bogus: 1\n", "crosstalk"),
    ("crosstalk:\n  channel: depolarize\n  mc_pulses: 10\n", "crosstalk"),
    ("stab:\n  max_elevation_deg: 10\n", "stabilize"),
])
def test_config_errors_exit_2(tmp_path, text, cmd, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text(text)
    assert run_cli(cmd, cfg, tmp_path / "o") == 2
    assert "config error" in capsys.readouterr().err


def test_missing_config_and_bad_seed_exit_2(tmp_path):
    assert run_cli("crosstalk", tmp_path / "none.cfg", tmp_path / "o") == 2
    cfg = CONFIGS / "fig3_eavesdropper.cfg"
    assert run_cli("crosstalk", cfg, tmp_path / "o", "--seed", "-1") == 2


def test_usage_error_exit_2():
    with pytest.raises(SystemExit) as info:
        main(["rate-sweep"])
    assert info.value.code == 2


def test_runtime_failure_exit_1(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert run_cli("crosstalk", CONFIGS / "fig3_eavesdropper.cfg", blocker / "sub") == 1
    assert "error" in capsys.readouterr().err


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "heqkd", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("heqkd ")
