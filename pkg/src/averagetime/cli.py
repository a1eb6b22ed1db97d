"""``avgtime`` command line: train, eval, cluster, sweep, ablation, synth.

Exit status is 0 on success, 1 on a runtime failure and 2 on a usage,
configuration, dataset or checkpoint problem.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import _io, pipeline
from .data import DataError, write_csv
from .model import CheckpointError
from .synth import KINDS, SynthSpec, generate

log = logging.getLogger("avgtime")

USAGE_ERRORS = (pipeline.ConfigError, DataError, CheckpointError, FileNotFoundError)


def _cmd_train(args) -> int:
    rc = pipeline.load_run_config(args.config)
    res = pipeline.run(rc)
    out = pipeline.write_run(rc, res)
    print(f"test mse {res.test.mse:.6f} mae {res.test.mae:.6f} -> {out}")
    return 0


def _cmd_eval(args) -> int:
    rc = pipeline.load_run_config(args.config)
    ckpt = Path(args.checkpoint)
    if not ckpt.is_file():
        raise pipeline.ConfigError(f"checkpoint not found: {ckpt}")
    doc = pipeline.evaluate_checkpoint(rc, ckpt)
    out = Path(args.output) if args.output else Path(rc.output_dir) / "eval.json"
    _io.atomic_write_json(out, doc)
    sys.stdout.write(_io.dumps_json(doc))
    return 0


def _cmd_cluster(args) -> int:
    rc = pipeline.load_run_config(args.config)
    threshold = args.threshold if args.threshold is not None else rc.threshold
    result = pipeline.cluster(rc, threshold=0.8 if threshold is None else threshold)
    doc = {"config": rc.to_dict(), **result.to_dict()}
    _io.atomic_write_json(Path(rc.output_dir) / "grouping.json", doc)
    sys.stdout.write(_io.dumps_json(result.to_dict()))
    return 0


def _parse_values(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def _cmd_sweep(args) -> int:
    rc = pipeline.load_run_config(args.config)
    values = _parse_values(args.values)
    if not values:
        raise pipeline.ConfigError("--values is empty")
    try:
        values = [float(v) if args.axis == "threshold" else int(v) for v in values]
    except ValueError:
        raise pipeline.ConfigError(f"bad --values for axis {args.axis}: {args.values!r}") from None
    rows = pipeline.sweep(rc, args.axis, values, jobs=args.jobs)
    for r in rows:
        print(", ".join(f"{k}={v}" for k, v in r.items()))
    return 0 if all(r["status"] == "ok" for r in rows) else 1


def _cmd_ablation(args) -> int:
    rc = pipeline.load_run_config(args.config)
    doc = pipeline.ablation(rc)
    for name in ("mlp", "average"):
        t = doc[name]["test"]
        print(f"{name:8s} mse {t['mse']:.6f} mae {t['mae']:.6f}")
    imp = doc["improvement_pct"]
    print(f"improv.  mse {imp['mse']:.2f}% mae {imp['mae']:.2f}%")
    if "reference_improvement_pct" in doc:
        ref = doc["reference_improvement_pct"]
        print(f"reference ({ref['dataset']}) mse {ref['mse']:.2f}% mae {ref['mae']:.2f}%")
    return 0


def _cmd_synth(args) -> int:
    spec = SynthSpec(args.kind, args.channels, args.length, args.noise_std, args.seed)
    series = generate(spec)
    Path(args.output).parent.mkdir(parents=True, exist_ok=True)
    write_csv(series, args.output)
    print(f"wrote {series.n_channels} x {series.length} {args.kind} series to {args.output}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="avgtime", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train", help="train one model and write its artifacts")
    s.add_argument("-c", "--config", required=True)
    s.set_defaults(func=_cmd_train)

    s = sub.add_parser("eval", help="score a checkpoint on the test split")
    s.add_argument("-c", "--config", required=True)
    s.add_argument("-k", "--checkpoint", required=True)
    s.add_argument("-o", "--output", help="metrics path (default <output_dir>/eval.json)")
    s.set_defaults(func=_cmd_eval)

    s = sub.add_parser("cluster", help="group channels of the training split")
    s.add_argument("-c", "--config", required=True)
    s.add_argument("--threshold", type=float)
    s.set_defaults(func=_cmd_cluster)

    s = sub.add_parser("sweep", help="train once per threshold or lookback value")
    s.add_argument("-c", "--config", required=True)
    s.add_argument("--axis", choices=pipeline.SWEEP_AXES, required=True)
    s.add_argument("--values", required=True, help="comma separated, e.g. 1.0,0.8,0.6")
    s.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    s.set_defaults(func=_cmd_sweep)

    s = sub.add_parser("ablation", help="compare heads-only and averaged models")
    s.add_argument("-c", "--config", required=True)
    s.set_defaults(func=_cmd_ablation)

    s = sub.add_parser("synth", help="write a synthetic dataset CSV")
    s.add_argument("--kind", choices=KINDS, default="lagged-copies")
    s.add_argument("--channels", type=int, default=8)
    s.add_argument("--length", type=int, default=4000)
    s.add_argument("--noise-std", type=float, default=0.1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=_cmd_synth)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        return args.func(args)
    except USAGE_ERRORS as exc:
        print(f"avgtime: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        log.exception("run failed")
        print(f"avgtime: failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
