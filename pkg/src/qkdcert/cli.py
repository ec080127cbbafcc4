"""Command-line front end.

Verbs:

* ``certify`` — run a certification task from a config file and report the
  decision, the intervals, and the exact approval probability.
* ``verify``  — check the security bound for a scenario (or adaptive
  scenario) built from a config file.
* ``suite``   — run the randomized verification battery for a seed.
* ``audit``   — bracket the per-instance security levels of a scenario.

Reports are JSON (plus a CSV table for the suite); everything except the
``timing`` block is a deterministic function of the config and the seed.

Exit codes: 0 success, 1 suite checks failed, 2 config error, 3 violated
invariant or inconsistent scenario, 4 dimension cap exceeded.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from pathlib import Path

from .errors import (
    ChannelError,
    ConfigError,
    ConsistencyError,
    DimensionCapError,
    LayoutError,
    StateError,
)
from .certify import approval_probability, certify
from .compose import AdaptiveScenario, Scenario, verify_adaptive_bound, verify_main_bound
from .fixtures import SCHEMA_VERSION, build_from_config, load_config
from .protocol import audit_epsilon, exact_classical_epsilon
from .suite import SCENARIO_COLUMNS, run_suite

__all__ = ["main"]

EXIT_OK = 0
EXIT_SUITE_FAILED = 1
EXIT_CONFIG = 2
EXIT_INVARIANT = 3
EXIT_DIM_CAP = 4

# Audit refuses the solver route above this Choi dimension and reports the
# exact value only (device instances are classical, so nothing is lost).
_AUDIT_SOLVER_DIM = 128


def _sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _resolve_seed(args, cfg: dict | None) -> int:
    if args.seed is not None:
        return args.seed
    if cfg is not None and isinstance(cfg.get("seed"), int):
        return cfg["seed"]
    raise ConfigError("no seed: pass --seed or put an integer 'seed' in the config")


def _emit(report: dict, out_dir: str | None, filename: str) -> None:
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if out_dir is None:
        sys.stdout.write(text)
        return
    path = Path(out_dir)
    path.mkdir(parents=True, exist_ok=True)
    (path / filename).write_text(text, encoding="utf-8", newline="\n")
    print(f"wrote {path / filename}")


def _write_csv(rows, columns, out_dir: str, filename: str) -> None:
    path = Path(out_dir)
    path.mkdir(parents=True, exist_ok=True)
    with open(path / filename, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=columns, extrasaction="ignore", lineterminator="\n"
        )
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in columns})
    print(f"wrote {path / filename}")


def _report_shell(command: str, seed: int, config_path: str | None) -> dict:
    shell = {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "seed": seed,
    }
    if config_path is not None:
        shell["config"] = str(config_path)
        shell["config_sha256"] = _sha256(config_path)
    return shell


def _cmd_certify(args) -> int:
    cfg = load_config(args.config)
    task = build_from_config(cfg)
    if not isinstance(task, dict):
        raise ConfigError("certify needs a config with kind 'certification'")
    seed = _resolve_seed(args, cfg)
    t0 = time.perf_counter()
    outcome = certify(task["model"], task["robust"], task["plan"], seed=seed, rule=task["rule"])
    exact = approval_probability(task["model"], task["robust"], task["plan"], rule=task["rule"])
    elapsed = time.perf_counter() - t0
    report = _report_shell("certify", seed, args.config)
    report["result"] = {
        "name": task["name"],
        "approved": outcome.approved,
        "rule": outcome.rule,
        "approval_probability_exact": exact,
        "observed": {name: mean for name, mean in outcome.observed},
        "intervals": {
            name: {"low": ci.low, "high": ci.high, "epsilon": ci.epsilon}
            for name, ci in outcome.intervals
        },
    }
    report["timing"] = {"seconds": elapsed}
    _emit(report, args.out, f"certify_{task['name']}.json")
    return EXIT_OK


def _cmd_verify(args) -> int:
    cfg = load_config(args.config)
    obj = build_from_config(cfg)
    if isinstance(obj, dict):
        raise ConfigError("verify needs a scenario or adaptive config, not a certification")
    seed = _resolve_seed(args, cfg)
    if args.adaptive and not isinstance(obj, AdaptiveScenario):
        raise ConfigError("--adaptive given but the config builds a plain scenario")
    t0 = time.perf_counter()
    if isinstance(obj, AdaptiveScenario):
        result = verify_adaptive_bound(obj, seed=seed).as_dict()
        name = obj.name
    else:
        result = verify_main_bound(obj, seed=seed).as_dict()
        name = obj.name
    elapsed = time.perf_counter() - t0
    report = _report_shell("verify", seed, args.config)
    report["result"] = result
    report["timing"] = {"seconds": elapsed}
    _emit(report, args.out, f"verify_{name}.json")
    return EXIT_OK


def _cmd_audit(args) -> int:
    cfg = load_config(args.config)
    obj = build_from_config(cfg)
    if not isinstance(obj, Scenario):
        raise ConfigError("audit needs a plain scenario config")
    seed = _resolve_seed(args, cfg)
    from .compose import run_sequence

    t0 = time.perf_counter()
    result = run_sequence(obj)
    rows = []
    for inst in result.instances:
        row = {"index": inst.index, "classical": inst.is_classical}
        if inst.stipulated_epsilon is not None:
            row["stipulated"] = inst.stipulated_epsilon
        if inst.is_classical:
            row["exact"] = exact_classical_epsilon(inst)
        choi_dim = inst.channel.input_layout.dim * inst.channel.output_layout.dim
        if choi_dim <= _AUDIT_SOLVER_DIM:
            lower, upper = audit_epsilon(inst, samples=args.samples, seed=seed)
            row["lower"] = lower
            row["upper"] = upper
            row["bracket_ok"] = lower <= upper + 1e-6
        rows.append(row)
    elapsed = time.perf_counter() - t0
    report = _report_shell("audit", seed, args.config)
    report["result"] = {"scenario": obj.name, "instances": rows}
    report["timing"] = {"seconds": elapsed}
    _emit(report, args.out, f"audit_{obj.name}.json")
    return EXIT_OK


def _cmd_suite(args) -> int:
    if args.seed is None:
        raise ConfigError("suite needs an explicit --seed")
    t0 = time.perf_counter()
    result = run_suite(args.seed, size=args.sizes)
    elapsed = time.perf_counter() - t0
    report = _report_shell("suite", args.seed, None)
    report["result"] = result.as_dict()
    report["timing"] = {"seconds": elapsed}
    _emit(report, args.out, "suite_report.json")
    if args.out is not None:
        _write_csv(result.scenario_rows, SCENARIO_COLUMNS, args.out, "suite_scenarios.csv")
    return EXIT_OK if result.ok else EXIT_SUITE_FAILED


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qkdcert",
        description="certification-aware security bound verification",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    p_certify = sub.add_parser("certify", help="run a certification task")
    p_certify.add_argument("--config", required=True, help="certification config (JSON)")
    p_certify.add_argument("--seed", type=int, default=None)
    p_certify.add_argument("--out", default=None, help="directory for reports")
    p_certify.set_defaults(func=_cmd_certify)

    p_verify = sub.add_parser("verify", help="verify the security bound for a scenario")
    p_verify.add_argument("--config", required=True, help="scenario config (JSON)")
    p_verify.add_argument("--seed", type=int, default=None)
    p_verify.add_argument("--adaptive", action="store_true",
                          help="require the config to build an adaptive scenario")
    p_verify.add_argument("--out", default=None)
    p_verify.set_defaults(func=_cmd_verify)

    p_suite = sub.add_parser("suite", help="run the randomized verification battery")
    p_suite.add_argument("--seed", type=int, default=None, required=True)
    p_suite.add_argument("--sizes", choices=("tiny", "default", "large"), default="default")
    p_suite.add_argument("--out", default=None)
    p_suite.set_defaults(func=_cmd_suite)

    p_audit = sub.add_parser("audit", help="bracket per-instance security levels")
    p_audit.add_argument("--config", required=True)
    p_audit.add_argument("--seed", type=int, default=None)
    p_audit.add_argument("--samples", type=int, default=200,
                         help="random pure inputs for the lower bound")
    p_audit.add_argument("--out", default=None)
    p_audit.set_defaults(func=_cmd_audit)
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DimensionCapError as exc:
        print(f"dimension cap: {exc}", file=sys.stderr)
        return EXIT_DIM_CAP
    except (ConsistencyError, StateError, ChannelError, LayoutError) as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
