"""CLI runs covered by the golden-file comparison.

Run ``python3 tests/cli_cases.py`` to regenerate ``tests/golden`` after an
intentional change of results.
"""

from __future__ import annotations

import shutil
import sys
from pathlib import Path

from halfcell.cli import run

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "demos" / "configs"
GOLDEN = Path(__file__).resolve().parent / "golden"

# name, subcommand, config, overrides, expected exit code
CASES = [
    ("lambda_constant_f", "lambda", "constant_f.cfg", (), 0),
    ("lambda_hjb_1d", "lambda", "hjb_1d.cfg", (), 0),
    ("mu_drift_toward_1d", "mu", "drift_toward_1d.cfg", (), 0),
    ("mu_counterexample_1d", "mu", "counterexample_1d.cfg", (), 1),
    ("cell_divergence_1d", "cell", "divergence_1d.cfg", ("p=1", "M=2"), 0),
    ("effective_divergence_1d", "effective", "divergence_1d.cfg", (), 0),
    ("homogenize_divergence_1d", "homogenize", "divergence_1d.cfg", (), 0),
    ("homogenize_nonlinear_1d", "homogenize", "nonlinear_1d.cfg", (), 0),
    ("mc_reflected_bm", "mc", "reflected_bm.cfg", (), 0),
    ("bavg_cosine_slope_scan", "bavg", "cosine_slope_scan.cfg", (), 0),
    ("audit_pucci_2d", "audit", "pucci_2d.cfg", (), 0),
]


def run_case(case, out_dir: Path) -> int:
    _, cmd, cfg, overrides, _ = case
    return run(cmd, CONFIGS / cfg, out_dir, overrides=overrides, quiet=True)


def comparable(path: Path) -> bytes:
    """File contents with the metadata line of CSV files removed."""
    data = path.read_bytes()
    if path.suffix == ".csv" and data.startswith(b"#"):
        data = data.split(b"\n", 1)[1]
    return data


def differences(a: Path, b: Path) -> list:
    """Names of files that differ between two output directories (or exist in only one)."""
    names_a = {p.name for p in a.iterdir()}
    names_b = {p.name for p in b.iterdir()}
    out = sorted(names_a ^ names_b)
    for name in sorted(names_a & names_b):
        if comparable(a / name) != comparable(b / name):
            out.append(name)
    return out


def regenerate():
    if GOLDEN.exists():
        shutil.rmtree(GOLDEN)
    for case in CASES:
        code = run_case(case, GOLDEN / case[0])
        if code != case[4]:
            sys.exit(f"{case[0]}: exit {code}, expected {case[4]}")
        print(f"{case[0]}: ok")


if __name__ == "__main__":
    regenerate()
