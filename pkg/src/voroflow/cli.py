"""Command-line entry point: train, eval, sample, plot-density, check.

Configs are flat ``key = value`` text with dotted section keys, validated
against a fixed schema before any compute.  Checkpoints are single JSON
documents with sorted keys, so save -> load -> save is byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from .autodiff import Binding, Tape
from .data import (DiscreteTable, binary_toy, load_csv_discrete, make_nursery,
                   split, synth_continuous_2d, synth_quantized_2d)
from .dequant import DequantModel, JointDensity, nll_bound_rows, train_dequant
from .errors import (CheckpointInvalid, ConfigInvalid, DivergedLoss,
                     EmptyFile, NotTwoDimensional, RaggedRows, VocabMismatch,
                     VoroflowError)
from .flows import ACTIVATIONS
from .mixture import MixtureModel, mixture_logprob, mixture_sample, train_mixture
from .selfcheck import run_all_checks
from .tessellation import locate_many

SCHEMA_VERSION = 1

# key -> (type, which task may set it).  "both" keys apply to either task.
_SCHEMA = {
    "task": ("str", "both"),
    "out": ("str", "both"),
    "data.path": ("str", "both"),
    "data.synthetic": ("str", "both"),
    "data.n": ("int", "both"),
    "data.bins": ("int", "dequant"),
    "data.p": ("float", "dequant"),
    "data.seed": ("int", "both"),
    "split.train": ("float", "both"),
    "split.val": ("float", "both"),
    "split.test": ("float", "both"),
    "split.seed": ("int", "both"),
    "model.dim": ("int", "dequant"),
    "model.k": ("int", "mixture"),
    "model.flow_depth": ("int", "dequant"),
    "model.pre_depth": ("int", "mixture"),
    "model.comp_depth": ("int", "mixture"),
    "model.hidden": ("int", "both"),
    "model.n_hidden": ("int", "both"),
    "model.embed_dim": ("int", "both"),
    "model.base_std": ("float", "both"),
    "model.share_flow": ("bool", "dequant"),
    "model.train_box": ("bool", "both"),
    "model.train_base": ("bool", "mixture"),
    "model.activation": ("str", "both"),
    "model.scale_clamp": ("float", "both"),
    "model.seed": ("int", "both"),
    "density.blocks": ("int", "dequant"),
    "density.hidden": ("int", "dequant"),
    "density.n_hidden": ("int", "dequant"),
    "train.lr": ("float", "both"),
    "train.batch_size": ("int", "both"),
    "train.epochs": ("int", "both"),
    "train.patience": ("int", "both"),
    "train.seed": ("int", "both"),
    "train.val_samples": ("int", "dequant"),
    "eval.samples": ("int", "both"),
    "eval.split": ("str", "both"),
}

_MIN_ONE = {"data.n", "model.dim", "model.k", "model.hidden", "model.n_hidden",
            "model.embed_dim", "density.blocks", "density.hidden",
            "density.n_hidden", "train.batch_size", "train.epochs",
            "train.val_samples", "eval.samples"}
_MIN_ZERO = {"model.flow_depth", "model.pre_depth", "model.comp_depth",
             "train.patience"}
_POSITIVE = {"model.base_std", "model.scale_clamp", "train.lr"}

_DEQUANT_SHAPES = ("checkerboard", "two_moons", "rings", "two_gaussians",
                   "eight_gaussians", "binary_toy", "nursery")
_MIXTURE_SHAPES = ("checkerboard", "two_moons", "rings", "two_gaussians",
                   "eight_gaussians")


def _parse_value(key: str, raw: str):
    kind = _SCHEMA[key][0]
    if kind == "bool":
        if raw == "true":
            return True
        if raw == "false":
            return False
        raise ConfigInvalid(f"{key} must be true or false, got {raw!r}")
    try:
        return {"str": str, "int": int, "float": float}[kind](raw)
    except ValueError:
        raise ConfigInvalid(f"{key} must be {kind}, got {raw!r}") from None


def _validate(cfg: dict) -> dict:
    """Check key names, per-task applicability, types, and ranges."""
    for key, value in cfg.items():
        if key not in _SCHEMA:
            raise ConfigInvalid(f"unknown config key {key!r}")
        kind = _SCHEMA[key][0]
        ok = {"str": lambda v: isinstance(v, str),
              "int": lambda v: isinstance(v, int) and not isinstance(v, bool),
              "float": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
              "bool": lambda v: isinstance(v, bool)}[kind](value)
        if not ok:
            raise ConfigInvalid(f"{key} must be {kind}, got {value!r}")
        if kind == "float":
            cfg[key] = float(value)
    task = cfg.get("task")
    if task not in ("dequant", "mixture"):
        raise ConfigInvalid("task must be dequant or mixture")
    for key in cfg:
        applies = _SCHEMA[key][1]
        if applies not in ("both", task):
            raise ConfigInvalid(f"{key} does not apply to the {task} task")
    if ("data.path" in cfg) == ("data.synthetic" in cfg):
        raise ConfigInvalid("set exactly one of data.path and data.synthetic")
    for key, value in cfg.items():
        if key in _MIN_ONE and value < 1:
            raise ConfigInvalid(f"{key} must be at least 1, got {value}")
        if key in _MIN_ZERO and value < 0:
            raise ConfigInvalid(f"{key} must be non-negative, got {value}")
        if key in _POSITIVE and value <= 0.0:
            raise ConfigInvalid(f"{key} must be positive, got {value}")
    if cfg.get("data.bins", 8) < 2:
        raise ConfigInvalid("data.bins must be at least 2")
    if not 0.0 < cfg.get("data.p", 0.9) < 1.0:
        raise ConfigInvalid("data.p must be strictly between 0 and 1")
    name = cfg.get("data.synthetic")
    if name is not None:
        shapes = _DEQUANT_SHAPES if task == "dequant" else _MIXTURE_SHAPES
        if name not in shapes:
            raise ConfigInvalid(f"unknown {task} generator {name!r}; "
                                f"choose from {', '.join(shapes)}")
    fracs = [cfg.get(k, d) for k, d in (("split.train", 0.8), ("split.val", 0.1),
                                        ("split.test", 0.1))]
    if any(f < 0.0 for f in fracs) or abs(sum(fracs) - 1.0) > 1e-9:
        raise ConfigInvalid(f"split fractions must be non-negative and sum to 1, "
                            f"got {fracs}")
    if cfg.get("eval.split", "test") not in ("train", "val", "test"):
        raise ConfigInvalid("eval.split must be train, val, or test")
    if cfg.get("model.activation", "swish") not in ACTIVATIONS:
        raise ConfigInvalid(f"model.activation must be one of "
                            f"{', '.join(sorted(ACTIVATIONS))}")
    return cfg


def parse_config(text: str) -> dict:
    """Parse flat ``key = value`` lines; # starts a comment."""
    cfg: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigInvalid(f"line {lineno}: expected key = value, got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _SCHEMA:
            raise ConfigInvalid(f"line {lineno}: unknown config key {key!r}")
        if key in cfg:
            raise ConfigInvalid(f"line {lineno}: duplicate key {key!r}")
        cfg[key] = _parse_value(key, raw)
    return _validate(cfg)


def load_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise ConfigInvalid(f"cannot read config {path}: {err}") from None
    return parse_config(text)


# ---- datasets ----

def _load_csv_numeric(path):
    """Float CSV with a header row; returns (rows, column names)."""
    with open(path, newline="") as fh:
        rows = [row for row in csv.reader(fh) if row]
    if len(rows) < 2:
        raise EmptyFile(f"{path} has no data rows")
    header, data = rows[0], rows[1:]
    for i, row in enumerate(data):
        if len(row) != len(header):
            raise RaggedRows(f"row {i + 2} has {len(row)} fields, expected {len(header)}")
    try:
        x = np.array([[float(cell) for cell in row] for row in data])
    except ValueError as err:
        raise ConfigInvalid(f"{path} has a non-numeric value: {err}") from None
    return x, tuple(header)


def load_dequant_table(cfg: dict) -> DiscreteTable:
    """The discrete table a dequant config describes."""
    if "data.path" in cfg:
        return load_csv_discrete(cfg["data.path"])
    name = cfg["data.synthetic"]
    n = cfg.get("data.n", 20000)
    seed = cfg.get("data.seed", 0)
    if name == "nursery":
        return make_nursery()
    if name == "binary_toy":
        return binary_toy(n, cfg.get("data.p", 0.9), seed)
    return synth_quantized_2d(name, cfg.get("data.bins", 8), n, seed)


def load_mixture_rows(cfg: dict):
    """The real-valued rows a mixture config describes, plus column names."""
    if "data.path" in cfg:
        return _load_csv_numeric(cfg["data.path"])
    x = synth_continuous_2d(cfg["data.synthetic"], cfg.get("data.n", 20000),
                            cfg.get("data.seed", 0))
    return x, ("x0", "x1")


def _three_way(cfg: dict, n_rows: int):
    ratios = (cfg.get("split.train", 0.8), cfg.get("split.val", 0.1),
              cfg.get("split.test", 0.1))
    return split(n_rows, ratios, cfg.get("split.seed", 0))


# ---- model construction ----

_DEQUANT_KEYS = {"model.dim": "dim", "model.flow_depth": "flow_depth",
                 "model.hidden": "hidden", "model.n_hidden": "n_hidden",
                 "model.embed_dim": "embed_dim", "model.base_std": "base_std",
                 "model.share_flow": "share_flow", "model.train_box": "train_box",
                 "model.activation": "activation",
                 "model.scale_clamp": "scale_clamp", "model.seed": "seed"}
_MIXTURE_KEYS = {"model.pre_depth": "pre_depth", "model.comp_depth": "comp_depth",
                 "model.hidden": "hidden", "model.n_hidden": "n_hidden",
                 "model.embed_dim": "embed_dim", "model.base_std": "base_std",
                 "model.train_base": "train_base", "model.train_box": "train_box",
                 "model.activation": "activation",
                 "model.scale_clamp": "scale_clamp", "model.seed": "seed"}
_TRAIN_KEYS = {"train.lr": "lr", "train.batch_size": "batch_size",
               "train.epochs": "epochs", "train.patience": "patience",
               "train.seed": "seed"}


def _kwargs(cfg: dict, mapping: dict) -> dict:
    # absent keys fall through to the constructor defaults
    return {kw: cfg[k] for k, kw in mapping.items() if k in cfg}


def build_dequant(cfg: dict, cardinalities):
    """Dequantizer plus joint density from a validated config."""
    model = DequantModel(cardinalities, **_kwargs(cfg, _DEQUANT_KEYS))
    density = JointDensity(model.total_dim,
                           n_blocks=cfg.get("density.blocks", 16),
                           hidden=cfg.get("density.hidden", 128),
                           n_hidden=cfg.get("density.n_hidden", 2),
                           activation=cfg.get("model.activation", "swish"),
                           scale_clamp=cfg.get("model.scale_clamp", 5.0),
                           seed=cfg.get("model.seed", 0) + 1)
    return model, density


def build_mixture(cfg: dict, dim: int) -> MixtureModel:
    """Mixture model from a validated config; model.k is required."""
    if "model.k" not in cfg:
        raise ConfigInvalid("the mixture task needs model.k")
    return MixtureModel(dim, cfg["model.k"], **_kwargs(cfg, _MIXTURE_KEYS))


def _collect_params(task, model, density):
    params = list(model.all_params())
    if task == "dequant":
        params += density.parameters()
    return params


# ---- checkpoints ----

def save_checkpoint(path, task: str, cfg: dict, model, density, meta: dict,
                    metrics: dict) -> None:
    """Write one JSON document; sorted keys make the bytes reproducible."""
    doc = {"schema_version": SCHEMA_VERSION, "task": task, "config": cfg,
           "params": {p.name: p.value.tolist()
                      for p in _collect_params(task, model, density)},
           "meta": meta, "metrics": metrics}
    Path(path).write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")))


def load_checkpoint(path):
    """Rebuild the models a checkpoint describes.

    Returns (task, cfg, model, density, meta, metrics); density is None for
    the mixture task.  Unknown schema versions, malformed configs, and
    missing or misshapen parameters all fail loudly.
    """
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as err:
        raise CheckpointInvalid(f"cannot read checkpoint {path}: {err}") from None
    except json.JSONDecodeError as err:
        raise CheckpointInvalid(f"{path} is not valid JSON: {err}") from None
    if not isinstance(doc, dict):
        raise CheckpointInvalid(f"{path} is not a checkpoint document")
    version = doc.get("schema_version")
    if not isinstance(version, int):
        raise CheckpointInvalid(f"{path} has no schema_version")
    if version > SCHEMA_VERSION:
        raise CheckpointInvalid(
            f"{path} uses schema {version}, newer than supported {SCHEMA_VERSION}")
    for key in ("task", "config", "params", "meta", "metrics"):
        if key not in doc:
            raise CheckpointInvalid(f"{path} is missing {key!r}")
    try:
        cfg = _validate(dict(doc["config"]))
    except ConfigInvalid as err:
        raise CheckpointInvalid(f"{path} has a bad config: {err}") from None
    task, meta = doc["task"], doc["meta"]
    if task != cfg["task"]:
        raise CheckpointInvalid(f"{path} task does not match its config")
    if task == "dequant":
        cards = [len(v) for v in meta["vocab"]]
        model, density = build_dequant(cfg, cards)
    else:
        model, density = build_mixture(cfg, int(meta["dim"])), None
    params = _collect_params(task, model, density)
    stored = doc["params"]
    names = {p.name for p in params}
    if set(stored) != names:
        missing = sorted(names - set(stored))
        extra = sorted(set(stored) - names)
        raise CheckpointInvalid(f"{path} parameter names do not match the "
                                f"config (missing {missing}, extra {extra})")
    for p in params:
        arr = np.array(stored[p.name], dtype=np.float64)
        if arr.shape != p.value.shape:
            raise CheckpointInvalid(f"{path} parameter {p.name} has shape "
                                    f"{arr.shape}, expected {p.value.shape}")
        p.value = arr
    return task, cfg, model, density, meta, doc["metrics"]


# ---- metrics and reports ----

def marginal_oracle_nll(train_codes, eval_codes, cardinalities) -> float:
    """NLL of the independent per-variable histogram fit on the train split,
    add-one smoothed so unseen values stay finite."""
    total = 0.0
    for v, k in enumerate(cardinalities):
        counts = np.bincount(train_codes[:, v], minlength=k) + 1.0
        logp = np.log(counts / counts.sum())
        total -= logp[eval_codes[:, v]].mean()
    return float(total)


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


# ---- density rendering ----

_RAMP = ["#440154", "#481567", "#482677", "#453781", "#404788", "#39568c",
         "#33638d", "#2d708e", "#287d8e", "#238a8d", "#1f968b", "#20a387",
         "#29af7f", "#3cbb75", "#55c667", "#73d055", "#95d840", "#b8de29",
         "#dce319", "#fde725"]


def render_svg(density: np.ndarray, cells: np.ndarray) -> str:
    """Heatmap of a G x G density grid with cell-boundary overlay.

    Row i, column j of both arrays is the grid point with the i-th y and
    j-th x coordinate; the image puts y upward.  Output is a pure function
    of the inputs, so bytes are stable.
    """
    g = density.shape[0]
    vmax = float(density.max())
    if vmax <= 0.0:
        idx = np.zeros_like(density, dtype=np.int64)
    else:
        idx = np.minimum(len(_RAMP) - 1,
                         (density / vmax * len(_RAMP)).astype(np.int64))
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {g} {g}" '
             f'width="512" height="512" shape-rendering="crispEdges">']
    for i in range(g):
        row = idx[i]
        y = g - 1 - i
        breaks = np.flatnonzero(np.diff(row)) + 1
        starts = np.concatenate([[0], breaks])
        ends = np.concatenate([breaks, [g]])
        for s, e in zip(starts, ends):
            parts.append(f'<rect x="{s}" y="{y}" width="{e - s}" height="1" '
                         f'fill="{_RAMP[row[s]]}"/>')
    seg = []
    for i in range(g):
        for j in np.flatnonzero(cells[i, :-1] != cells[i, 1:]):
            seg.append(f"M{j + 1} {g - 1 - i}v1")
    for i in range(g - 1):
        for j in np.flatnonzero(cells[i] != cells[i + 1]):
            seg.append(f"M{j} {g - 1 - i}h1")
    if seg:
        parts.append(f'<path d="{"".join(seg)}" stroke="#ffffff" '
                     f'stroke-width="0.12" fill="none"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _chunked(fn, rows: np.ndarray, chunk: int = 32768) -> np.ndarray:
    out = [fn(rows[i:i + chunk]) for i in range(0, len(rows), chunk)]
    return np.concatenate(out)


def _density_grid(task, model, density, grid: int):
    """(values, cells, (x_lo, x_hi, y_lo, y_hi)) on grid x grid midpoints."""
    if task == "dequant":
        if model.total_dim != 2:
            raise NotTwoDimensional(
                f"plotting needs 2 total dims, model has {model.total_dim}")
        if model.n_variables == 1:
            tess = model.tessellation(0)
            lo, hi = tess.box_lo, tess.box_hi
        else:
            t0, t1 = model.tessellation(0), model.tessellation(1)
            lo = np.array([t0.box_lo[0], t1.box_lo[0]])
            hi = np.array([t0.box_hi[0], t1.box_hi[0]])
    else:
        tess = model.tessellation()
        if model.dim != 2:
            raise NotTwoDimensional(f"plotting needs 2 dims, model has {model.dim}")
        if model.pre.blocks:
            corners = np.stack(np.meshgrid(
                np.linspace(tess.box_lo[0], tess.box_hi[0], 33),
                np.linspace(tess.box_lo[1], tess.box_hi[1], 33),
                indexing="xy"), axis=-1).reshape(-1, 2)
            tape = Tape(record=False)
            mapped, _ = model.pre.forward(Binding(tape, trainable=False),
                                          tape.const(corners))
            lo, hi = mapped.value.min(axis=0), mapped.value.max(axis=0)
            pad = 0.05 * (hi - lo)
            lo, hi = lo - pad, hi + pad
        else:
            lo, hi = tess.box_lo, tess.box_hi

    step = (hi - lo) / grid
    xs = lo[0] + (np.arange(grid) + 0.5) * step[0]
    ys = lo[1] + (np.arange(grid) + 0.5) * step[1]
    pts = np.stack(np.meshgrid(xs, ys, indexing="xy"), axis=-1).reshape(-1, 2)

    if task == "dequant":
        def logprob(rows):
            tape = Tape(record=False)
            return density.logprob(Binding(tape, trainable=False),
                                   tape.const(rows)).value

        values = np.exp(_chunked(logprob, pts))
        codes = _chunked(model.quantize_many, pts)
        radix = np.array([1, model.cardinalities[0]])[:codes.shape[1]]
        cells = codes @ radix
    else:
        values = np.exp(_chunked(lambda rows: mixture_logprob(model, rows), pts))

        def locate_rows(rows):
            tape = Tape(record=False)
            z, _ = model.pre.inverse(Binding(tape, trainable=False),
                                     tape.const(rows))
            return locate_many(model.tessellation(), z.value)

        cells = _chunked(locate_rows, pts)
    shape = (grid, grid)
    return (values.reshape(shape), cells.reshape(shape),
            (float(lo[0]), float(hi[0]), float(lo[1]), float(hi[1])))


# ---- subcommands ----

def _out_dir(args, cfg=None) -> Path:
    out = args.out or (cfg or {}).get("out")
    if not out:
        raise ConfigInvalid("no output directory: pass --out or set out in the config")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = _validate({**cfg, "train.seed": args.seed})
    task = cfg["task"]
    out = _out_dir(args, cfg)
    lock = out / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        print(f"error: {out} is in use (stale? remove {lock})", file=sys.stderr)
        return 1
    os.write(fd, f"{os.getpid()}\n".encode())
    os.close(fd)
    try:
        return _train_locked(cfg, task, out)
    finally:
        lock.unlink(missing_ok=True)


def _train_locked(cfg: dict, task: str, out: Path) -> int:
    t0 = time.perf_counter()
    summary: dict = {"task": task}
    if task == "dequant":
        table = load_dequant_table(cfg)
        parts = _three_way(cfg, table.n_rows)
        model, density = build_dequant(cfg, table.cardinalities)
        meta = {"columns": list(table.columns),
                "vocab": [list(v) for v in table.vocab]}
        summary["oracle_val_nll"] = marginal_oracle_nll(
            table.codes[parts.train], table.codes[parts.val], table.cardinalities)
    else:
        x, columns = load_mixture_rows(cfg)
        parts = _three_way(cfg, x.shape[0])
        model = build_mixture(cfg, x.shape[1])
        density = None
        meta = {"columns": list(columns), "dim": x.shape[1]}

    diverged = None
    with open(out / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_nll", "val_nll", "seconds"])

        def log(stats):
            writer.writerow([stats.epoch, repr(stats.train_nll),
                             repr(stats.val_nll), f"{stats.seconds:.3f}"])
            fh.flush()

        kwargs = _kwargs(cfg, _TRAIN_KEYS)
        try:
            if task == "dequant":
                if "train.val_samples" in cfg:
                    kwargs["val_samples"] = cfg["train.val_samples"]
                report = train_dequant(model, density, table.codes[parts.train],
                                       table.codes[parts.val], log=log, **kwargs)
            else:
                report = train_mixture(model, x[parts.train], x[parts.val],
                                       log=log, **kwargs)
        except DivergedLoss as err:
            report = err.report
            diverged = str(err)

    metrics = {"best_epoch": report.best_epoch, "best_val": report.best_val,
               "epochs": report.rows()}
    save_checkpoint(out / "checkpoint.json", task, cfg, model, density, meta,
                    metrics)
    summary.update(best_epoch=report.best_epoch, best_val_nll=report.best_val,
                   epochs_run=len(report.epochs), n_train=len(parts.train),
                   n_val=len(parts.val),
                   wall_seconds=round(time.perf_counter() - t0, 3))
    if diverged is not None:
        summary["diverged"] = diverged
    _write_json(out / "summary.json", summary)
    if diverged is not None:
        print(f"error: {diverged} (best parameters kept)", file=sys.stderr)
        return 1
    print(f"best val NLL {report.best_val:.6f} at epoch {report.best_epoch}; "
          f"wrote {out / 'checkpoint.json'}")
    return 0


def cmd_eval(args) -> int:
    task, cfg, model, density, meta, _ = load_checkpoint(args.checkpoint)
    data_cfg = cfg
    if args.config is not None:
        data_cfg = load_config(args.config)
        if data_cfg["task"] != task:
            raise ConfigInvalid(f"config task {data_cfg['task']} does not match "
                                f"the {task} checkpoint")
    which = data_cfg.get("eval.split", "test")
    samples = args.samples or data_cfg.get("eval.samples", 8)
    if task == "dequant":
        table = load_dequant_table(data_cfg)
        vocab = tuple(tuple(v) for v in meta["vocab"])
        if table.vocab != vocab or list(table.columns) != list(meta["columns"]):
            raise VocabMismatch("dataset vocabulary does not match the checkpoint")
        rows = table.codes[getattr(_three_way(data_cfg, table.n_rows), which)]
        per_row = nll_bound_rows(model, density, rows, samples, args.seed)
    else:
        x, _ = load_mixture_rows(data_cfg)
        rows = x[getattr(_three_way(data_cfg, x.shape[0]), which)]
        per_row = -mixture_logprob(model, rows)
    report = {"mean_nll": float(per_row.mean()),
              "stderr": float(per_row.std(ddof=1) / math.sqrt(len(per_row))),
              "n": int(len(per_row)), "S": int(samples), "seed": args.seed,
              "split": which}
    if args.out:
        _write_json(_out_dir(args) / "eval_report.json", report)
    print(json.dumps(report, sort_keys=True))
    return 0


def cmd_sample(args) -> int:
    task, _, model, density, meta, _ = load_checkpoint(args.checkpoint)
    rng = np.random.default_rng(args.seed)
    n = args.samples
    if task == "dequant":
        x = density.sample(n, rng)
        codes = model.quantize_many(x)
        vocab = [list(v) for v in meta["vocab"]]
        rows = [[vocab[v][c] for v, c in enumerate(row)] for row in codes]
    else:
        rows = mixture_sample(model, n, rng).tolist()
    target = sys.stdout
    close = False
    if args.out:
        out = Path(args.out)
        if out.is_dir() or not out.suffix:
            out.mkdir(parents=True, exist_ok=True)
            out = out / "samples.csv"
        target = open(out, "w", newline="")
        close = True
    try:
        writer = csv.writer(target)
        writer.writerow(list(meta["columns"]))
        writer.writerows(rows)
    finally:
        if close:
            target.close()
            print(f"wrote {out}")
    return 0


def cmd_plot_density(args) -> int:
    task, _, model, density, _, _ = load_checkpoint(args.checkpoint)
    out = _out_dir(args)
    values, cells, bounds = _density_grid(task, model, density, args.grid)
    x_lo, x_hi, y_lo, y_hi = bounds
    area = (x_hi - x_lo) * (y_hi - y_lo) / args.grid ** 2
    integral = float(values.sum() * area)
    with open(out / "density.csv", "w") as fh:
        for row in values:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    (out / "density.svg").write_text(render_svg(values, cells))
    _write_json(out / "density_meta.json",
                {"grid": args.grid, "x_lo": x_lo, "x_hi": x_hi,
                 "y_lo": y_lo, "y_hi": y_hi, "integral": integral})
    print(f"integral over the plotted box: {integral:.4f}; wrote "
          f"{out / 'density.csv'}, {out / 'density.svg'}")
    return 0


def cmd_check(args) -> int:
    results = run_all_checks(seed=args.seed)
    width = max(len(name) for name, _, _ in results)
    failures = 0
    for name, ok, detail in results:
        failures += not ok
        print(f"{'PASS' if ok else 'FAIL'}  {name:<{width}}  {detail}")
    print(f"{len(results) - failures}/{len(results)} checks passed")
    return 1 if failures else 0


# ---- argument parsing ----

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="voroflow",
        description="Voronoi dequantization and disjoint mixture models.")
    sub = ap.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train a model from a config file")
    train.add_argument("--config", required=True, help="config file path")
    train.add_argument("--out", help="output directory (overrides the config)")
    train.add_argument("--seed", type=int, help="override train.seed")

    ev = sub.add_parser("eval", help="test NLL of a checkpoint")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--config", help="dataset override (defaults to the "
                                     "checkpoint's own config)")
    ev.add_argument("--samples", type=int, help="bound draws per row")
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--out", help="where to write eval_report.json")

    sa = sub.add_parser("sample", help="draw samples from a checkpoint")
    sa.add_argument("--checkpoint", required=True)
    sa.add_argument("--samples", type=int, default=1000)
    sa.add_argument("--seed", type=int, default=0)
    sa.add_argument("--out", help="CSV path or directory (default stdout)")

    pd = sub.add_parser("plot-density", help="density heatmap of a 2D model")
    pd.add_argument("--checkpoint", required=True)
    pd.add_argument("--grid", type=int, default=200)
    pd.add_argument("--out", required=True, help="output directory")

    ck = sub.add_parser("check", help="run the invariant self-checks")
    ck.add_argument("--seed", type=int, default=0)
    return ap


_USAGE_ERRORS = (ConfigInvalid, CheckpointInvalid, VocabMismatch,
                 NotTwoDimensional)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"train": cmd_train, "eval": cmd_eval, "sample": cmd_sample,
               "plot-density": cmd_plot_density, "check": cmd_check}
    try:
        return handler[args.command](args)
    except _USAGE_ERRORS as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except VoroflowError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
