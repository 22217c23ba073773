"""Command-line entry point: configure, run, write CSV, JSON report and figures."""

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import diagnostics
from .blcd import run
from .config import PRESETS, parse_config
from .errors import ConfigError, InvalidArgument, NumericError, RunAbort

COLUMNS = ["round", "train_loss", "test_loss", "test_accuracy", "grad_norm", "bias_norm", "comm_mse", "scheme"]


def format_value(v):
    """Shortest round-trip text for floats, blank for missing values."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(evals, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for row in evals:
            w.writerow([format_value(getattr(row, c)) for c in COLUMNS])
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    return obj


def report_path(csv_path):
    p = Path(csv_path)
    return p.with_name(p.stem + "_report.json")


def run_experiment(cfg, plot=None):
    """Run one configuration and write its outputs; returns ``(result, report, paths)``."""
    result = run(cfg, keep_plans=True)
    report = diagnostics.full_report(result)
    report = {"config": _jsonable(vars(cfg)), "final": _jsonable(vars(result.evals[-1])),
              "diagnostics": _jsonable(report)}
    paths = [write_csv(result.evals, cfg.out)]
    rp = report_path(cfg.out)
    rp.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    paths.append(rp)
    if cfg.plot if plot is None else plot:
        from .plotting import write_figures

        paths += write_figures(result, report["diagnostics"], cfg.out)
    return result, report, paths


def _split_override(text):
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    key, value = text.split("=", 1)
    return key.strip(), value.strip()


def build_parser():
    ap = argparse.ArgumentParser(
        prog="blcdsim",
        description="Simulate band-limited coordinate descent over a fading multiple-access channel.",
    )
    ap.add_argument("overrides", nargs="*", type=_split_override, metavar="KEY=VALUE",
                    help="any RunConfig field, applied after the preset and config file")
    ap.add_argument("--config", metavar="PATH", help="flat key = value config file")
    ap.add_argument("--preset", choices=sorted(PRESETS), help="named parameter set")
    ap.add_argument("--scheme", help="error_free, scheme1, scheme2, scheme3, scheme4 or receiver_centric")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--rounds", type=int, help="number of rounds T")
    ap.add_argument("--out", metavar="PATH", help="CSV path; the report and figures go beside it")
    ap.add_argument("--sweep", metavar="KEY=V1,V2,...", type=_split_override,
                    help="run once per value, suffixing the output name with key=value")
    ap.add_argument("--no-plot", action="store_true", help="skip the PNG figures")
    ap.add_argument("--print-config", action="store_true", help="print the resolved config and exit")
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    overrides = list(args.overrides)
    for flag, key in (("scheme", "scheme"), ("seed", "seed"), ("rounds", "T"), ("out", "out")):
        v = getattr(args, flag)
        if v is not None:
            overrides.append((key, str(v)))
    if args.no_plot:
        overrides.append(("plot", "false"))
    try:
        cfg = parse_config(args.config, args.preset, overrides)
        if args.print_config:
            from .config import dump_config

            sys.stdout.write(dump_config(cfg))
            return 0
        runs = [cfg]
        if args.sweep:
            key, values = args.sweep
            out = Path(cfg.out)
            runs = []
            for v in values.split(","):
                name = out.with_name(f"{out.stem}_{key}={v}{out.suffix}")
                runs.append(parse_config(args.config, args.preset,
                                         overrides + [(key, v), ("out", str(name))]))
        for c in runs:
            result, report, paths = run_experiment(c)
            final = result.evals[-1]
            bound = report["diagnostics"].get("theorem1", {})
            status = "holds" if bound.get("holds") else ("violated" if "holds" in bound else "skipped")
            print(f"{c.scheme} seed={c.seed} T={c.T}: test_accuracy={final.test_accuracy:.4f} "
                  f"train_loss={final.train_loss:.6g} bound={status}")
            for p in paths:
                print(f"  wrote {p}")
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return 2
    except (InvalidArgument, NumericError, RunAbort, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
