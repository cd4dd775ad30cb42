"""Stage runners and run configuration for the command-line pipeline.

Every stage reads its inputs from the config and from artifacts written
by earlier stages into ``out_dir``, and writes its own artifacts there
atomically. Layout of ``out_dir``::

    flows_coarse.csv, flows_fine.csv, ingest.json          (ingest)
    normalization_coarse.csv, split.json                   (train/tune)
    models/<kind>.json, eval_zone_<kind>.json              (train/tune)
    leaderboard_<kind>.csv                                 (tune)
    predictions_<kind>.csv, eval_tract_<kind>.json,
    errors_<kind>_{origin,destination}.geojson,
    normalization_fine.csv                                 (downscale)
    sensitivity_<kind>.csv                                 (sensitivity)
    report.md, report.csv                                  (report)
    manifest_<stage>.json                                  (every stage)
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import os
import platform
import sys
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass, field, fields
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, models
from .downscale import ROLES, downscale_predict, error_geojson, unit_errors
from .features import FeatureTable, NormalizationParams, prepare_downscale, prepare_training
from .geo import ODFlowTable, TripColumns, Zoning, ingest_trips
from .sensitivity import pseudo_coefficients
from .synth import SynthSpec, generate
from .tuning import EvalReport, evaluate, grid_from_overrides, grid_search, parse_axis

logger = logging.getLogger(__name__)

STAGES = ("synth", "ingest", "train", "tune", "downscale", "sensitivity", "report")
REPORT_ORDER = ("linear", "forest", "svr", "fnn")
REPORT_LABELS = {
    "linear": "Linear Regression",
    "forest": "Random Forest",
    "svr": "Support Vector Machine",
    "fnn": "Feedforward Neural Network",
}


class ConfigError(ValueError):
    """Invalid configuration; maps to exit status 2."""


class MissingArtifactError(RuntimeError):
    """A prerequisite artifact of an earlier stage is absent; exit status 2."""


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt(default, cast, help_text, choices=None, path=False):
    return field(default=default, metadata={"cast": cast, "help": help_text, "choices": choices, "path": path})


@dataclass
class RunConfig:
    trips: str = _opt("", str, "delimited trip file", path=True)
    coarse_zoning: str = _opt("", str, "GeoJSON zoning used for training", path=True)
    fine_zoning: str = _opt("", str, "GeoJSON zoning used for downscaling", path=True)
    coarse_features: str = _opt("", str, "feature table for the coarse units", path=True)
    fine_features: str = _opt("", str, "feature table for the fine units", path=True)
    out_dir: str = _opt("out", str, "artifact directory")
    id_property: str = _opt("unit_id", str, "GeoJSON property holding the unit id")
    delimiter: str = _opt(",", str, "trip file delimiter")
    pickup_x: str = _opt("pickup_x", str, "trip column: pickup x")
    pickup_y: str = _opt("pickup_y", str, "trip column: pickup y")
    dropoff_x: str = _opt("dropoff_x", str, "trip column: dropoff x")
    dropoff_y: str = _opt("dropoff_y", str, "trip column: dropoff y")
    include_zero_pairs: bool = _opt(False, _bool, "emit rows for unobserved OD pairs")
    normalization: str = _opt("refit", str, "fine-level scaling", choices=("refit", "reuse"))
    ddof: int = _opt(0, int, "delta degrees of freedom for the standard deviation")
    models: str = _opt("linear,forest,svr,fnn", str, "comma-separated model kinds")
    split_ratio: float = _opt(0.8, float, "training share of the OD rows; 1 trains on all rows")
    split_seed: int = _opt(0, int, "train/test permutation seed")
    seeds: int = _opt(5, int, "number of initialisation seeds per grid")
    forest_trees: str = _opt("", str, "forest tree counts (comma list)")
    forest_max_features: str = _opt("", str, "forest feature rules (sqrt,log2)")
    svr_c: str = _opt("", str, "SVR C values (comma list)")
    svr_epsilon: str = _opt("", str, "SVR epsilon values (comma list)")
    svr_gamma: float = _opt(0.0, float, "RBF width; 0 selects 1/(n_features * var)")
    fnn_width: str = _opt("", str, "network widths (comma list)")
    fnn_depth: str = _opt("", str, "network depths (comma list)")
    fnn_epochs: int = _opt(2000, int, "training epochs")
    fnn_batch_size: int = _opt(5000, int, "mini-batch size")
    fnn_cycles: int = _opt(1, int, "triangular learning-rate cycles")
    allow_off_grid: bool = _opt(False, _bool, "accept hyperparameters outside the grids")
    delta: float = _opt(0.0, float, "perturbation step; 0 picks the per-model default")
    difference: str = _opt("central", str, "finite-difference form", choices=("central", "forward"))
    error_statistic: str = _opt("mean", str, "per-unit error statistic", choices=("mean", "sum"))
    synth_rule: str = _opt("affine", str, "synthetic flow rule", choices=("affine", "gravity", "noisy-gravity"))
    synth_seed: int = _opt(0, int, "synthetic world seed")
    synth_grid: str = _opt("4x4", str, "coarse grid, e.g. 4x4")
    synth_subdivision: int = _opt(2, int, "fine cells per coarse cell side")
    synth_noise: float = _opt(0.0, float, "relative flow noise (noisy-gravity)")
    synth_trips_per_pair: float = _opt(20.0, float, "mean trips per fine pair (gravity)")
    synth_softening: float = _opt(4.0, float, "gravity distance softening in fine cells")
    synth_affine_spread: int = _opt(1, int, "coarse deviation scale of the affine world")

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def from_sources(cls, file_values: dict[str, str] | None = None, overrides: dict[str, str] | None = None):
        """Built-in defaults < config file < command-line flags."""
        values = {}
        errors = []
        meta = {f.name: f for f in fields(cls)}
        for source in (file_values or {}, overrides or {}):
            for key, raw in source.items():
                if key not in meta:
                    errors.append(f"unknown key {key!r}")
                    continue
                try:
                    values[key] = meta[key].metadata["cast"](raw)
                except ValueError as exc:
                    errors.append(f"{key}: {exc}")
        if errors:
            raise ConfigError("; ".join(errors))
        cfg = cls(**values)
        cfg.check_choices()
        return cfg

    def check_choices(self) -> None:
        bad = []
        for f in fields(self):
            choices = f.metadata.get("choices")
            if choices and getattr(self, f.name) not in choices:
                bad.append(f"{f.name}={getattr(self, f.name)!r} (choose from {', '.join(choices)})")
        kinds = self.model_kinds()
        unknown = [k for k in kinds if k not in models.KINDS]
        if unknown:
            bad.append(f"models: unknown kinds {unknown}")
        if not 0.0 < self.split_ratio <= 1.0:
            bad.append("split_ratio must lie in (0, 1]")
        if not 1 <= self.seeds <= 5:
            bad.append("seeds must be between 1 and 5")
        if bad:
            raise ConfigError("; ".join(bad))

    def require(self, *keys: str) -> None:
        """Check that the named path keys are set and exist."""
        problems = []
        for key in keys:
            value = getattr(self, key)
            if not value:
                problems.append(f"{key} is not set")
            elif not Path(value).exists():
                problems.append(f"{key}: {value} does not exist")
        if problems:
            raise ConfigError("; ".join(problems))

    def model_kinds(self) -> list[str]:
        return [k.strip() for k in self.models.split(",") if k.strip()]

    def digest(self) -> str:
        blob = json.dumps(dataclasses.asdict(self), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()

    @property
    def out(self) -> Path:
        return Path(self.out_dir)


def read_config_file(path: str | Path) -> dict[str, str]:
    """Parse a flat ``key = value`` file; ``#`` starts a comment line."""
    values = {}
    with open(path) as fh:
        for n, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{n}: expected key = value")
            key, value = line.split("=", 1)
            values[key.strip().replace("-", "_")] = value.strip()
    return values


# ---------------------------------------------------------------- file helpers


@contextmanager
def atomic_write(path: Path, mode: str = "w"):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, newline="" if "b" not in mode else None) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic_via(path: Path, writer) -> None:
    """Run ``writer(tmp_path)`` and move the result into place."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        writer(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: Path, obj) -> None:
    with atomic_write(path) as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _need(path: Path, stage: str) -> Path:
    if not path.exists():
        raise MissingArtifactError(f"{stage}: missing prerequisite {path} (run the earlier stage first)")
    return path


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(cfg: RunConfig, stage: str, inputs: list[Path], outputs: list[Path]) -> Path:
    manifest = {
        "stage": stage,
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "config": dataclasses.asdict(cfg),
        "config_sha256": cfg.digest(),
        "seeds": {"split_seed": cfg.split_seed, "seeds": cfg.seeds, "synth_seed": cfg.synth_seed},
        "inputs": {str(p): _sha256(p) for p in inputs if p.exists() and p.is_file()},
        "outputs": sorted(str(p) for p in outputs),
        "versions": {
            "oddownscale": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
    }
    path = cfg.out / f"manifest_{stage}.json"
    write_json(path, manifest)
    return path


def _report_dict(report: EvalReport | None) -> dict | None:
    return None if report is None else dataclasses.asdict(report)


# ---------------------------------------------------------------------- stages


def stage_synth(cfg: RunConfig) -> list[Path]:
    try:
        nx, ny = (int(v) for v in cfg.synth_grid.lower().split("x"))
    except ValueError:
        raise ConfigError(f"synth_grid must look like 4x4, got {cfg.synth_grid!r}") from None
    spec = SynthSpec(
        coarse_nx=nx, coarse_ny=ny, subdivision=cfg.synth_subdivision, seed=cfg.synth_seed,
        rule=cfg.synth_rule, noise=cfg.synth_noise, trips_per_pair=cfg.synth_trips_per_pair,
        softening=cfg.synth_softening, affine_spread=cfg.synth_affine_spread,
    )
    world = generate(spec)
    world_dir = cfg.out / "world"
    paths = world.write(world_dir)
    lines = [
        f"trips = {paths['trips']}",
        f"coarse_zoning = {paths['coarse_zoning']}",
        f"fine_zoning = {paths['fine_zoning']}",
        f"coarse_features = {paths['coarse_features']}",
        f"fine_features = {paths['fine_features']}",
        "id_property = unit_id",
    ]
    cfg_path = world_dir / "world.cfg"
    with atomic_write(cfg_path) as fh:
        fh.write("\n".join(lines) + "\n")
    return [*paths.values(), cfg_path]


def stage_ingest(cfg: RunConfig) -> list[Path]:
    cfg.require("trips", "coarse_zoning")
    zonings = [Zoning.from_geojson(cfg.coarse_zoning, cfg.id_property, level="coarse")]
    if cfg.fine_zoning:
        cfg.require("fine_zoning")
        zonings.append(Zoning.from_geojson(cfg.fine_zoning, cfg.id_property, level="fine"))
    columns = TripColumns(cfg.pickup_x, cfg.pickup_y, cfg.dropoff_x, cfg.dropoff_y)
    summaries = ingest_trips(cfg.trips, zonings, columns, cfg.delimiter)
    outputs = []
    summary_doc = {}
    for s in summaries:
        path = cfg.out / f"flows_{s.table.level}.csv"
        _atomic_via(path, s.table.to_csv)
        outputs.append(path)
        summary_doc[s.table.level] = {
            "rows": s.rows, "retained": s.retained, "dropped": s.dropped,
            "malformed": s.malformed, "pairs": len(s.table),
        }
    write_json(cfg.out / "ingest.json", summary_doc)
    return [*outputs, cfg.out / "ingest.json"]


def _training_data(cfg: RunConfig, stage: str):
    flows_path = _need(cfg.out / "flows_coarse.csv", stage)
    cfg.require("coarse_features")
    flows = ODFlowTable.from_csv(flows_path, "coarse")
    table = FeatureTable.from_csv(cfg.coarse_features)
    ratio = None if cfg.split_ratio == 1.0 else cfg.split_ratio
    return prepare_training(flows, table, cfg.include_zero_pairs, ratio, cfg.split_seed, cfg.ddof)


def _grid_overrides(cfg: RunConfig, kind: str) -> dict[str, tuple]:
    table = {
        "forest": {"n_trees": (cfg.forest_trees, int), "max_features": (cfg.forest_max_features, str)},
        "svr": {"C": (cfg.svr_c, float), "epsilon": (cfg.svr_epsilon, float)},
        "fnn": {"width": (cfg.fnn_width, int), "depth": (cfg.fnn_depth, int)},
    }.get(kind, {})
    return {axis: parse_axis(text, cast) for axis, (text, cast) in table.items() if text}


def _fixed(cfg: RunConfig, kind: str) -> dict:
    fixed = {}
    if kind != "linear":
        fixed["allow_off_grid"] = cfg.allow_off_grid
    if kind == "svr" and cfg.svr_gamma > 0:
        fixed["gamma"] = cfg.svr_gamma
    if kind == "fnn":
        fixed.update(epochs=cfg.fnn_epochs, batch_size=cfg.fnn_batch_size, cycles=cfg.fnn_cycles)
    return fixed


def _single_config(cfg: RunConfig, kind: str):
    """The configuration ``train`` uses: defaults, or the first override value."""
    params = {axis: values[0] for axis, values in _grid_overrides(cfg, kind).items()}
    cls = models.serialize.CONFIG_TYPES[kind]
    return cls(**_fixed(cfg, kind), **params)


def _save_training_common(cfg: RunConfig, data) -> list[Path]:
    norm = cfg.out / "normalization_coarse.csv"
    _atomic_via(norm, data.params.to_csv)
    split_path = cfg.out / "split.json"
    write_json(split_path, {
        "seed": cfg.split_seed, "ratio": cfg.split_ratio,
        "n_train": int(data.x_train.shape[0]), "n_test": int(data.x_test.shape[0]),
    })
    return [norm, split_path]


def stage_train(cfg: RunConfig) -> list[Path]:
    data = _training_data(cfg, "train")
    outputs = _save_training_common(cfg, data)
    for kind in cfg.model_kinds():
        config = _single_config(cfg, kind)
        model = models.fit(data.x_train, data.y_train, config)
        outputs += _save_model_and_eval(cfg, kind, model, data)
    return outputs


def _save_model_and_eval(cfg: RunConfig, kind: str, model, data) -> list[Path]:
    model_path = cfg.out / "models" / f"{kind}.json"
    model_path.parent.mkdir(parents=True, exist_ok=True)
    models.save_model(model, model_path)
    target = data.params.target
    doc = {
        "kind": kind,
        "train": _report_dict(evaluate(model, data.x_train, data.y_train, target)),
        "test": _report_dict(evaluate(model, data.x_test, data.y_test, target)) if data.x_test.shape[0] else None,
    }
    eval_path = cfg.out / f"eval_zone_{kind}.json"
    write_json(eval_path, doc)
    return [model_path, eval_path]


def stage_tune(cfg: RunConfig) -> list[Path]:
    if cfg.split_ratio == 1.0:
        raise ConfigError("tune selects on held-out rows; split_ratio must be below 1")
    data = _training_data(cfg, "tune")
    outputs = _save_training_common(cfg, data)
    for kind in cfg.model_kinds():
        grid = grid_from_overrides(kind, _grid_overrides(cfg, kind), cfg.seeds, **_fixed(cfg, kind))
        result = grid_search(grid, data)
        board = cfg.out / f"leaderboard_{kind}.csv"
        _atomic_via(board, result.write_leaderboard)
        outputs.append(board)
        outputs += _save_model_and_eval(cfg, kind, result.model, data)
    return outputs


def _trained_kinds(cfg: RunConfig, stage: str) -> list[str]:
    kinds = [k for k in cfg.model_kinds() if (cfg.out / "models" / f"{k}.json").exists()]
    if not kinds:
        raise MissingArtifactError(
            f"{stage}: missing prerequisite {cfg.out / 'models'}/<kind>.json (run train or tune first)"
        )
    return kinds


def stage_downscale(cfg: RunConfig) -> list[Path]:
    kinds = _trained_kinds(cfg, "downscale")
    reference = NormalizationParams.from_csv(_need(cfg.out / "normalization_coarse.csv", "downscale"))
    cfg.require("fine_features")
    table = FeatureTable.from_csv(cfg.fine_features)
    flows_path = cfg.out / "flows_fine.csv"
    flows = ODFlowTable.from_csv(flows_path, "fine") if flows_path.exists() else None
    if flows is None:
        logger.warning("no fine-level flows; writing predictions without evaluation")
    data = prepare_downscale(table, flows, cfg.normalization, reference, cfg.include_zero_pairs, cfg.ddof)
    zoning = None
    if cfg.fine_zoning:
        cfg.require("fine_zoning")
        zoning = Zoning.from_geojson(cfg.fine_zoning, cfg.id_property, level="fine")
    norm = cfg.out / "normalization_fine.csv"
    _atomic_via(norm, data.params.to_csv)
    outputs = [norm]
    for kind in kinds:
        model = models.load_model(cfg.out / "models" / f"{kind}.json")
        run = downscale_predict(model, data)
        pred_path = cfg.out / f"predictions_{kind}.csv"
        _atomic_via(pred_path, run.write_predictions)
        eval_path = cfg.out / f"eval_tract_{kind}.json"
        write_json(eval_path, {"kind": kind, "downscale": _report_dict(run.report),
                               "normalization": cfg.normalization})
        outputs += [pred_path, eval_path]
        if zoning is not None and run.error_trips is not None:
            for role in ROLES:
                records = unit_errors(run, role, cfg.error_statistic)
                geo_path = cfg.out / f"errors_{kind}_{role}.geojson"
                write_json(geo_path, error_geojson(records, zoning))
                outputs.append(geo_path)
    return outputs


def stage_sensitivity(cfg: RunConfig) -> list[Path]:
    kinds = _trained_kinds(cfg, "sensitivity")
    data = _training_data(cfg, "sensitivity")
    rows = data.x_test if data.x_test.shape[0] else data.x
    outputs = []
    for kind in kinds:
        model = models.load_model(cfg.out / "models" / f"{kind}.json")
        report = pseudo_coefficients(model, rows, cfg.delta or None, cfg.difference)
        path = cfg.out / f"sensitivity_{kind}.csv"
        _atomic_via(path, report.to_csv)
        outputs.append(path)
    return outputs


def build_report(out_dir: Path) -> tuple[list[dict], str]:
    rows = []
    for kind in REPORT_ORDER:
        zone_path = out_dir / f"eval_zone_{kind}.json"
        if not zone_path.exists():
            continue
        with open(zone_path) as fh:
            zone = json.load(fh)
        tract = None
        tract_path = out_dir / f"eval_tract_{kind}.json"
        if tract_path.exists():
            with open(tract_path) as fh:
                tract = json.load(fh).get("downscale")
        test = zone.get("test") or {}
        rows.append({
            "kind": kind,
            "method": REPORT_LABELS[kind],
            "zone_mse_z": test.get("mse_z"),
            "zone_rmse_trips": test.get("rmse_trips"),
            "tract_mse_z": None if tract is None else tract["mse_z"],
            "tract_rmse_trips": None if tract is None else tract["rmse_trips"],
        })
    if not rows:
        raise MissingArtifactError(f"report: no eval_zone_<kind>.json artifacts in {out_dir}")

    def fmt(v):
        return "n/a" if v is None else f"{v:.6g}"

    buf = io.StringIO()
    buf.write("| Method | Z-score zone MSE | Zone RMSE (trips) | Z-score fine MSE | Fine RMSE (trips) |\n")
    buf.write("|---|---|---|---|---|\n")
    for r in rows:
        buf.write(
            f"| {r['method']} | {fmt(r['zone_mse_z'])} | {fmt(r['zone_rmse_trips'])} "
            f"| {fmt(r['tract_mse_z'])} | {fmt(r['tract_rmse_trips'])} |\n"
        )
    return rows, buf.getvalue()


def stage_report(cfg: RunConfig) -> list[Path]:
    rows, markdown = build_report(cfg.out)
    md = cfg.out / "report.md"
    with atomic_write(md) as fh:
        fh.write(markdown)
    table = cfg.out / "report.csv"
    with atomic_write(table) as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        for r in rows:
            writer.writerow({k: ("" if v is None else (repr(v) if isinstance(v, float) else v)) for k, v in r.items()})
    return [md, table]


RUNNERS = {
    "synth": stage_synth,
    "ingest": stage_ingest,
    "train": stage_train,
    "tune": stage_tune,
    "downscale": stage_downscale,
    "sensitivity": stage_sensitivity,
    "report": stage_report,
}


def run_stage(stage: str, cfg: RunConfig) -> list[Path]:
    if stage not in RUNNERS:
        raise ConfigError(f"unknown stage {stage!r}")
    cfg.out.mkdir(parents=True, exist_ok=True)
    outputs = RUNNERS[stage](cfg)
    inputs = [Path(getattr(cfg, f.name)) for f in fields(cfg) if f.metadata.get("path") and getattr(cfg, f.name)]
    write_manifest(cfg, stage, inputs, outputs)
    logger.info("%s: wrote %d artifacts", stage, len(outputs))
    return outputs


def python_version() -> str:
    return sys.version.split()[0]
