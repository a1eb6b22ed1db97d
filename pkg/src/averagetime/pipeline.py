"""Run configuration and the end-to-end train / evaluate / sweep / ablation flows."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from . import _io
from .cluster import ClusterResult, build_grouping
from .data import SplitSpec, WindowSet, fit_scaler, load_csv, make_windows, split
from .model import (
    ModelConfig,
    ModelParams,
    check_compatible,
    init_params,
    load_checkpoint,
    parameter_count,
    save_checkpoint,
)
from .train import MetricsReport, TrainConfig, evaluate, train

log = logging.getLogger(__name__)

# Published ablation improvements (MSE %, MAE %) of averaging over heads only.
REFERENCE_ABLATION = {
    "ETTh1": (0.45, 0.46),
    "ETTh2": (4.62, 2.69),
    "ETTm1": (1.30, 1.01),
    "ETTm2": (0.72, 0.63),
    "weather": (2.07, 1.09),
    "solar": (24.42, 12.01),
    "electricity": (10.77, 4.93),
    "traffic": (17.99, 14.15),
}

_MODEL_KEYS = ("n_transformer_layers", "n_mlp_layers", "d_model", "n_heads", "dropout",
               "channel_independent", "revin_affine")


class ConfigError(ValueError):
    """Invalid or unreadable run configuration (CLI exit status 2)."""


@dataclass
class RunConfig:
    dataset_path: str
    output_dir: str = "runs/default"
    split: SplitSpec = field(default_factory=SplitSpec)
    lookback: int = 96
    horizon: int = 96
    model: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    threshold: float | None = None
    ablation_disable_embedding: bool = False

    def to_dict(self) -> dict:
        d = asdict(self)
        d["split"] = {"mode": self.split.mode, "ratios": list(self.split.ratios)}
        return d

    def model_config(self, n_channels: int, grouping=None) -> ModelConfig:
        return ModelConfig(
            n_channels=n_channels,
            lookback=self.lookback,
            horizon=self.horizon,
            grouping=grouping,
            use_embedding_path=not self.ablation_disable_embedding,
            **self.model,
        )


def _section(raw: dict, name: str, allowed) -> dict:
    sec = raw.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"'{name}' must be an object")
    unknown = set(sec) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in '{name}': {sorted(unknown)}")
    return sec


def parse_run_config(raw: dict, base_dir: Path | None = None) -> RunConfig:
    """Validate a config mapping; relative paths resolve against ``base_dir``."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    top = {f.name for f in fields(RunConfig)}
    unknown = set(raw) - top
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "dataset_path" not in raw:
        raise ConfigError("config is missing 'dataset_path'")
    base = base_dir or Path.cwd()

    def resolve(p):
        p = Path(str(p))
        return str(p if p.is_absolute() else base / p)

    try:
        split_sec = _section(raw, "split", ("mode", "ratios"))
        spec = SplitSpec(split_sec.get("mode", "ratio"), tuple(split_sec.get("ratios", (0.7, 0.1, 0.2))))
        model = _section(raw, "model", _MODEL_KEYS)
        tcfg = TrainConfig(**_section(raw, "train", [f.name for f in fields(TrainConfig)]))
        rc = RunConfig(
            dataset_path=resolve(raw["dataset_path"]),
            output_dir=resolve(raw.get("output_dir", "runs/default")),
            split=spec,
            lookback=int(raw.get("lookback", 96)),
            horizon=int(raw.get("horizon", 96)),
            model=dict(model),
            train=tcfg,
            threshold=None if raw.get("threshold") is None else float(raw["threshold"]),
            ablation_disable_embedding=bool(raw.get("ablation_disable_embedding", False)),
        )
        rc.model_config(1)  # validates the model section
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    if rc.threshold is not None and not -1.0 <= rc.threshold <= 1.0:
        raise ConfigError(f"threshold must lie in [-1, 1], got {rc.threshold}")
    return rc


def load_run_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return parse_run_config(raw, path.parent)


# -------------------------------------------------------------------- data


@dataclass
class Prepared:
    train_series: object
    windows: dict[str, WindowSet]
    n_channels: int


def prepare(rc: RunConfig) -> Prepared:
    path = Path(rc.dataset_path)
    if not path.is_file():
        raise ConfigError(f"dataset not found: {path}")
    series = load_csv(path)
    parts = split(series, rc.split, rc.lookback, rc.horizon)
    scaler = fit_scaler(parts[0])
    std = [scaler.transform(p) for p in parts]
    windows = {
        name: make_windows(s, rc.lookback, rc.horizon)
        for name, s in zip(("train", "val", "test"), std)
    }
    return Prepared(std[0], windows, series.n_channels)


def cluster(rc: RunConfig, prepared: Prepared | None = None, threshold: float | None = None) -> ClusterResult:
    prepared = prepared or prepare(rc)
    t = rc.threshold if threshold is None else threshold
    if t is None:
        raise ConfigError("no threshold configured")
    return build_grouping(prepared.train_series, t)


# -------------------------------------------------------------------- runs


@dataclass
class RunResult:
    params: ModelParams
    model_config: ModelConfig
    report: MetricsReport
    test: MetricsReport
    cluster: ClusterResult | None

    @property
    def parameter_count(self) -> int:
        return parameter_count(self.params)


def run(rc: RunConfig, prepared: Prepared | None = None) -> RunResult:
    prepared = prepared or prepare(rc)
    result = cluster(rc, prepared) if rc.threshold is not None else None
    config = rc.model_config(prepared.n_channels, result.grouping if result else None)
    params = init_params(config, rc.train.seed)
    best, report = train(params, config, prepared.windows["train"], prepared.windows["val"], rc.train)
    test = evaluate(best, config, prepared.windows["test"])
    return RunResult(best, config, report, test, result)


def _metrics(m: MetricsReport) -> dict:
    return {"mse": m.mse, "mae": m.mae, "per_horizon_mse": m.per_horizon_mse}


def metrics_document(rc: RunConfig, res: RunResult) -> dict:
    """Content of metrics.json; wall-clock timings are kept out so reruns match byte for byte."""
    return {
        "config": rc.to_dict(),
        "model": {
            "parameter_count": res.parameter_count,
            "head_sets": res.model_config.n_head_sets,
            "grouping": None if res.cluster is None else res.cluster.grouping.groups,
        },
        "validation": _metrics(res.report),
        "test": _metrics(res.test),
        "training": {
            "epochs_run": res.report.epochs_run,
            "best_epoch": res.report.best_epoch,
            "history": [list(h) for h in res.report.history],
        },
    }


def write_run(rc: RunConfig, res: RunResult, out: Path | None = None) -> Path:
    out = Path(out or rc.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "model.ckpt", res.params, res.model_config)
    _io.atomic_write_json(out / "metrics.json", metrics_document(rc, res))
    _io.atomic_write_json(
        out / "timing.json",
        {"config": rc.to_dict(), "train_seconds_per_epoch": res.report.train_seconds_per_epoch},
    )
    rows = [
        (i + 1, repr(tr), repr(va), f"{sec:.6f}")
        for i, ((tr, va), sec) in enumerate(zip(res.report.history, res.report.epoch_seconds))
    ]
    _io.atomic_write_csv(out / "history.csv", ("epoch", "train_loss", "val_loss", "seconds"), rows)
    if res.cluster is not None:
        _io.atomic_write_json(out / "grouping.json", {"config": rc.to_dict(), **res.cluster.to_dict()})
    return out


def evaluate_checkpoint(rc: RunConfig, checkpoint) -> dict:
    params, _ = load_checkpoint(checkpoint)
    prepared = prepare(rc)
    result = cluster(rc, prepared) if rc.threshold is not None else None
    config = rc.model_config(prepared.n_channels, result.grouping if result else None)
    check_compatible(params, config)
    test = evaluate(params, config, prepared.windows["test"])
    return {"config": rc.to_dict(), "checkpoint": str(checkpoint), "test": _metrics(test)}


# ------------------------------------------------------------------ sweeps

SWEEP_AXES = ("threshold", "lookback")


def _sweep_point(args):
    rc, axis, value = args
    if axis == "threshold":
        point = replace(rc, threshold=float(value))
    else:
        point = replace(rc, lookback=int(value))
    point = replace(point, output_dir=str(Path(rc.output_dir) / "sweep" / f"{axis}={value}"))
    row = {"value": value, "status": "ok"}
    try:
        res = run(point)
        write_run(point, res)
    except Exception as exc:  # one failed point must not stop the sweep
        log.warning("sweep point %s=%s failed: %s", axis, value, exc)
        row["status"] = f"failed: {exc}"
        return row
    row.update(
        mse=res.test.mse,
        mae=res.test.mae,
        parameter_count=res.parameter_count,
        seconds_per_epoch=res.report.train_seconds_per_epoch,
    )
    if axis == "threshold":
        row["group_count"] = res.cluster.grouping.group_count
    return row


def sweep(rc: RunConfig, axis: str, values, jobs: int = 1) -> list[dict]:
    """One training run per value, all with the configured seed; writes sweep.csv."""
    if axis not in SWEEP_AXES:
        raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}, got {axis!r}")
    values = list(values)
    if not values:
        raise ConfigError("sweep needs at least one value")
    tasks = [(rc, axis, v) for v in values]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_point, tasks))
    else:
        rows = [_sweep_point(t) for t in tasks]
    header = ["value", "mse", "mae", "parameter_count", "seconds_per_epoch"]
    if axis == "threshold":
        header.append("group_count")
    header.append("status")
    table = [[r.get(h, "") for h in header] for r in rows]
    _io.atomic_write_csv(Path(rc.output_dir) / "sweep.csv", header, table)
    return rows


def ablation(rc: RunConfig) -> dict:
    """Heads-only baseline versus the full averaged model, same seed and settings."""
    prepared = prepare(rc)
    out = {}
    for name, disable in (("mlp", True), ("average", False)):
        sub = replace(rc, ablation_disable_embedding=disable, output_dir=str(Path(rc.output_dir) / "ablation" / name))
        res = run(sub, prepared)
        write_run(sub, res)
        out[name] = {
            "validation": _metrics(res.report),
            "test": _metrics(res.test),
            "parameter_count": res.parameter_count,
        }

    def improv(metric, part="test"):
        base = out["mlp"][part][metric]
        return 100.0 * (base - out["average"][part][metric]) / base

    doc = {
        "config": rc.to_dict(),
        "mlp": out["mlp"],
        "average": out["average"],
        "improvement_pct": {"mse": improv("mse"), "mae": improv("mae")},
        "validation_improvement_pct": {"mse": improv("mse", "validation"), "mae": improv("mae", "validation")},
    }
    stem = Path(rc.dataset_path).stem
    ref = {k.lower(): v for k, v in REFERENCE_ABLATION.items()}.get(stem.lower())
    if ref is not None:
        doc["reference_improvement_pct"] = {"dataset": stem, "mse": ref[0], "mae": ref[1]}
    _io.atomic_write_json(Path(rc.output_dir) / "ablation.json", doc)
    rows = [
        ("MLP", out["mlp"]["test"]["mse"], out["mlp"]["test"]["mae"]),
        ("+Average", out["average"]["test"]["mse"], out["average"]["test"]["mae"]),
        ("Improv.(%)", doc["improvement_pct"]["mse"], doc["improvement_pct"]["mae"]),
    ]
    _io.atomic_write_csv(Path(rc.output_dir) / "ablation.csv", ("row", "mse", "mae"), rows)
    return doc

