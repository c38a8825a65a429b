"""Simulate a cohort, fit the path model, optionally search trust lags, then compare against baselines."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from trustdsem.cli import EXIT_NONCONVERGED, EXIT_OK, main


def step(*argv) -> int:
    code = main([str(a) for a in argv])
    print(f"[{argv[0]}] exit {code}")
    return code


def run(task: str, seed: int, out: Path, n_participants: int | None, eta: int, binary: bool) -> int:
    sim, fit, cmp = out / "sim", out / "fit", out / "compare"
    extra = ["--n-participants", n_participants] if n_participants else []
    if (code := step("simulate", "--task", task, "--seed", seed, "--out", sim, *extra)) != EXIT_OK:
        return code
    panel = sim / "panel.csv"
    if eta > 0:
        if (code := step("search", "--task", task, "--panel", panel, "--eta", eta, "--out", out / "search")) != EXIT_OK:
            return code
    code = step("fit", "--task", task, "--panel", panel, "--out", fit)
    if code not in (EXIT_OK, EXIT_NONCONVERGED):
        return code
    return step("compare", "--task", task, "--panel", panel, "--fit", fit / "fit.txt", "--out", cmp,
                *(["--binary"] if binary else []))


def parser(task: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=f"end-to-end {task} experiment")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("runs") / task)
    p.add_argument("--n-participants", type=int, default=None)
    p.add_argument("--eta", type=int, default=0, help="trust-lag search depth (0 skips the search)")
    p.add_argument("--binary", action="store_true")
    return p


def cli(task: str, argv=None) -> int:
    a = parser(task).parse_args(argv)
    return run(task, a.seed, a.out, a.n_participants, a.eta, a.binary)


if __name__ == "__main__":
    sys.exit(cli(sys.argv[1] if len(sys.argv) > 1 else "drone", sys.argv[2:]))
