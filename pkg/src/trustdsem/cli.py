"""trustdsem command line: simulate | fit | search | compare.

Every run writes ``manifest.json`` next to its outputs. The manifest holds
the resolved arguments, input and output digests and no timestamps, so
``trustdsem --manifest DIR/manifest.json --out OTHER`` repeats the run and
checks that the outputs come out byte-identical.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import asdict, fields, replace
from pathlib import Path

from trustdsem import __version__
from trustdsem.baselines import AR, ARMA, SARIMA
from trustdsem.cohortsim import AgentParams, CUE_POLICIES, config_dict, driving_config, drone_config, gen_cohort
from trustdsem.estimation.em import (
    DegenerateDataError,
    FitConfig,
    InsufficientDataError,
    em_fit,
    parse_fit,
    serialize_fit,
)
from trustdsem.estimation.kalman import SingularInnovationError
from trustdsem.evalreport import CompareConfig, compare_models, text_summary, write_report
from trustdsem.pathmodel import DiagramError, PanelError, build_paper_diagram, read_panel_csv, write_panel_csv
from trustdsem.structsearch import (
    EnumerationCapError,
    SearchConfig,
    SearchError,
    format_subset,
    optimize_structure,
    search_report_csv,
    select_static_diagram,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NONCONVERGED = 0, 1, 2, 3
SEASON = {"drone": 15, "driving": 4}
MANIFEST = "manifest.json"
DATA_ERRORS = (PanelError, DiagramError, DegenerateDataError, InsufficientDataError, SingularInnovationError,
               SearchError, FileNotFoundError, IsADirectoryError, FloatingPointError)

log = logging.getLogger("trustdsem")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _lags(text: str) -> tuple[int, ...]:
    try:
        lags = tuple(sorted({int(t) for t in text.replace(";", ",").split(",") if t.strip()}))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated positive integers, got {text!r}") from None
    if not lags or lags[0] < 1:
        raise argparse.ArgumentTypeError("trust lags must be positive")
    return lags


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="trustdsem", description=__doc__.splitlines()[0])
    p.add_argument("--manifest", type=Path, help="rerun the run recorded in this manifest")
    p.add_argument("--out", dest="rerun_out", type=Path, help="output directory for --manifest reruns")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, panel=True):
        sp.add_argument("--task", choices=sorted(SEASON), default="drone")
        sp.add_argument("--out", type=Path, required=True)
        if panel:
            sp.add_argument("--panel", type=Path, required=True)

    def fitting(sp):
        sp.add_argument("--max-iter", type=int, default=FitConfig.max_iter)
        sp.add_argument("--tol", type=float, default=FitConfig.tol)
        sp.add_argument("--latent-variance", type=float, default=FitConfig.latent_variance)

    s = sub.add_parser("simulate", help="generate a synthetic cohort panel")
    common(s, panel=False)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--config", type=Path, help="flat key=value file of cohort/agent settings")
    s.add_argument("--n-participants", type=int)
    s.add_argument("--hp", type=float)
    s.add_argument("--hp-spread", type=float)
    s.add_argument("--initial-trust", type=float)
    s.add_argument("--cue-policy", choices=CUE_POLICIES)
    s.add_argument("--fraction-with-cues", type=float)
    s.add_argument("--learning-rate", type=float)
    s.add_argument("--cue-rate", type=float)
    s.add_argument("--decision-noise", type=float)
    s.add_argument("--margin", type=float, help="over/under-trust label margin")

    f = sub.add_parser("fit", help="fit the trust path model to a panel")
    common(f)
    f.add_argument("--trust-lags", type=_lags, default=(1,))
    fitting(f)

    r = sub.add_parser("search", help="search autoregressive trust-lag subsets")
    common(r)
    r.add_argument("--eta", type=int, default=1)
    r.add_argument("--criterion", choices=("aic", "cv_acc", "cv_rmse"), default="aic")
    r.add_argument("--tau", type=float, default=SearchConfig.tau)
    r.add_argument("--min-train-origin", type=int, help="default: eta + 1")
    r.add_argument("--threshold", type=float, default=SearchConfig.threshold)
    r.add_argument("--gate", action="store_true", help="also report the base diagram's CV accuracy against tau")
    r.add_argument("--jobs", type=int, default=1)
    fitting(r)

    c = sub.add_parser("compare", help="compare the fitted path model against AR-family baselines")
    common(c)
    c.add_argument("--fit", type=Path, required=True)
    c.add_argument("--threshold", type=float, default=CompareConfig.threshold)
    c.add_argument("--season", type=int, help="SARIMA seasonal period (default 15 drone, 4 driving)")
    c.add_argument("--binary", action="store_true", help="score over-trust versus rest instead of ternary labels")
    return p


# --- helpers -----------------------------------------------------------------------

def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return path


def _fit_config(args) -> FitConfig:
    return FitConfig(tol=args.tol, max_iter=args.max_iter, latent_variance=args.latent_variance)


def _read_config_file(path: Path) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip().replace("-", "_")] = v.strip()
    return out


def _coerce(value: str, default):
    if isinstance(default, bool):
        return value.lower() in ("1", "true", "yes")
    if isinstance(default, tuple):
        # phases as "15:0.9,15:0.3"
        return tuple((int(n), float(a)) for n, a in (item.split(":") for item in value.split(",")))
    return type(default)(value)


def _cohort_settings(args):
    config = drone_config() if args.task == "drone" else driving_config()
    params = AgentParams()
    file_vals = _read_config_file(args.config) if args.config else {}
    cfg_names = {f.name for f in fields(config)}
    par_names = {f.name for f in fields(params)}
    unknown = set(file_vals) - cfg_names - par_names
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    try:
        config = replace(config, **{k: _coerce(v, getattr(config, k)) for k, v in file_vals.items() if k in cfg_names})
        params = replace(params, **{k: _coerce(v, getattr(params, k)) for k, v in file_vals.items() if k in par_names})
        flag_cfg = {"n_participants": args.n_participants, "hp": args.hp, "hp_spread": args.hp_spread,
                    "initial_trust": args.initial_trust, "cue_policy": args.cue_policy,
                    "fraction_with_cues": args.fraction_with_cues}
        flag_par = {"learning_rate": args.learning_rate, "cue_rate": args.cue_rate,
                    "decision_noise": args.decision_noise, "label_margin": args.margin}
        config = replace(config, seed=args.seed, **{k: v for k, v in flag_cfg.items() if v is not None})
        params = replace(params, **{k: v for k, v in flag_par.items() if v is not None})
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    return config, params


def _diagram(task: str, lags=(1,)):
    return build_paper_diagram(include_cue=(task == "drone"), trust_lags=lags)


def _load_panel(path: Path):
    if not path.is_file():
        raise FileNotFoundError(f"panel file not found: {path}")
    return read_panel_csv(path)


# --- subcommands -----------------------------------------------------------------

def cmd_simulate(args) -> tuple[int, dict, dict]:
    config, params = _cohort_settings(args)
    panel = gen_cohort(config, params)
    path = _write(args.out / "panel.csv", write_panel_csv(panel))
    print(f"wrote {panel.n_participants} x {panel.lengths[0]} panel to {path}")
    return EXIT_OK, {"panel": path}, {"resolved": config_dict(config, params)}


def cmd_fit(args) -> tuple[int, dict, dict]:
    panel = _load_panel(args.panel)
    fit = em_fit(_diagram(args.task, args.trust_lags), panel, _fit_config(args))
    path = _write(args.out / "fit.txt", serialize_fit(fit))
    state = "converged" if fit.converged else "did NOT converge"
    print(f"{state} after {fit.n_iterations} iterations: loglik={fit.loglik:.4f} aic={fit.aic:.4f}; wrote {path}")
    code = EXIT_OK if fit.converged else EXIT_NONCONVERGED
    return code, {"fit": path}, {"resolved": {"fit": asdict(_fit_config(args)), "trust_lags": list(args.trust_lags)}}


def cmd_search(args) -> tuple[int, dict, dict]:
    panel = _load_panel(args.panel)
    mto = args.min_train_origin if args.min_train_origin is not None else args.eta + 1
    try:
        config = SearchConfig(tau=args.tau, eta=args.eta, criterion=args.criterion, min_train_origin=mto,
                              threshold=args.threshold, fit=_fit_config(args), n_jobs=args.jobs)
        config.check_panel(panel)
    except EnumerationCapError:
        raise
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    base = _diagram(args.task)
    extra = {}
    if args.gate:
        sel = select_static_diagram([base], panel, config)
        flag = "meets" if sel.above_threshold else "is BELOW"
        print(f"base diagram rolling-CV accuracy {sel.score:.3f} {flag} tau={config.tau}")
        extra["gate"] = {"accuracy": sel.score, "above_threshold": sel.above_threshold}
    best, cands = optimize_structure(base, panel, config)
    outputs = {"report": _write(args.out / "search.csv", search_report_csv(cands, config.criterion)),
               "best_fit": _write(args.out / "best_fit.txt", serialize_fit(best.fit))}
    failed = sum(not c.ok for c in cands)
    print(f"{len(cands)} candidates ({failed} failed); best lag subset {{{format_subset(best.lag_subset)}}}"
          f" with {config.criterion}={best.score:.6g}")
    resolved = {"search": {k: v for k, v in asdict(config).items() if k != "fit"}, "fit": asdict(config.fit)}
    resolved.update(extra)
    return EXIT_OK, outputs, {"resolved": resolved}


def cmd_compare(args) -> tuple[int, dict, dict]:
    panel = _load_panel(args.panel)
    if not args.fit.is_file():
        raise FileNotFoundError(f"fit file not found: {args.fit}")
    try:
        fit = parse_fit(args.fit.read_text(encoding="utf-8"))
    except (ValueError, KeyError) as exc:
        raise PanelError(f"cannot read fit file {args.fit}: {exc}") from None
    season = args.season if args.season is not None else SEASON[args.task]
    specs = [AR(1), ARMA(1, 1), SARIMA(1, 0, 1, season)]
    config = CompareConfig(threshold=args.threshold, binary=args.binary)
    report = compare_models(panel, fit, specs, config)
    outputs = write_report(report, args.out)
    sys.stdout.write(text_summary(report))
    resolved = {"compare": asdict(config), "baselines": [str(s) for s in specs], "eval_start": report.eval_start}
    return EXIT_OK, outputs, {"resolved": resolved}


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "search": cmd_search, "compare": cmd_compare}
INPUT_ARGS = ("panel", "fit", "config")


def _jsonable(v):
    if isinstance(v, Path):
        return str(v)
    if isinstance(v, tuple):
        return list(v)
    return v


def _manifest(args, argv_args: dict, outputs: dict, extra: dict, code: int) -> dict:
    inputs = {}
    for name in INPUT_ARGS:
        path = getattr(args, name, None)
        if path is not None:
            inputs[name] = {"path": str(path), "sha256": _digest(path)}
    out_dir = args.out
    return {
        "tool": "trustdsem",
        "version": __version__,
        "command": args.command,
        "args": argv_args,
        "inputs": inputs,
        "outputs": {p.relative_to(out_dir).as_posix(): _digest(p) for p in sorted(outputs.values())},
        "exit_code": code,
        **extra,
    }


def _run(args) -> int:
    argv_args = {k: _jsonable(v) for k, v in sorted(vars(args).items())
                 if k not in ("command", "manifest", "rerun_out", "verbose")}
    code, outputs, extra = COMMANDS[args.command](args)
    man = _manifest(args, argv_args, outputs, extra, code)
    _write(args.out / MANIFEST, json.dumps(man, indent=2, sort_keys=True) + "\n")
    return code


def _argv_from_manifest(man: dict, out: Path | None) -> list[str]:
    argv = [man["command"]]
    for key, value in sorted(man["args"].items()):
        if key == "out" and out is not None:
            value = str(out)
        if value is None or value is False:
            continue
        flag = "--" + key.replace("_", "-")
        if value is True:
            argv.append(flag)
        elif isinstance(value, list):
            argv += [flag, ",".join(str(v) for v in value)]
        else:
            argv += [flag, str(value)]
    return argv


def _rerun(parser, manifest_path: Path, out: Path | None) -> int:
    if not manifest_path.is_file():
        raise FileNotFoundError(f"manifest not found: {manifest_path}")
    man = json.loads(manifest_path.read_text(encoding="utf-8"))
    args = parser.parse_args(_argv_from_manifest(man, out))
    for name, rec in man.get("inputs", {}).items():
        path = getattr(args, name)
        if _digest(path) != rec["sha256"]:
            print(f"warning: input {name} ({path}) differs from the recorded digest", file=sys.stderr)
    code = _run(args)
    new = json.loads((args.out / MANIFEST).read_text(encoding="utf-8"))
    if new["outputs"] != man["outputs"]:
        diff = sorted(k for k in set(new["outputs"]) | set(man["outputs"])
                      if new["outputs"].get(k) != man["outputs"].get(k))
        print(f"outputs differ from the manifest: {', '.join(diff)}", file=sys.stderr)
        return EXIT_DATA
    print(f"reproduced {len(new['outputs'])} output file(s) byte-for-byte")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    try:
        if args.manifest is not None:
            if args.command is not None:
                parser.error("--manifest cannot be combined with a subcommand")
            return _rerun(parser, args.manifest, args.rerun_out)
        if args.command is None:
            parser.error("a subcommand is required")
        return _run(args)
    except UsageError as exc:
        print(f"trustdsem: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except EnumerationCapError as exc:
        print(f"trustdsem {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DATA_ERRORS as exc:
        print(f"trustdsem {args.command or 'rerun'}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"trustdsem {args.command or 'rerun'}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
