"""Result aggregation: grid tables (CSV/JSON) and activation-map images."""

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import IncompleteResultsError, InvalidSpecError, InvalidTapError
from .model import TAP_POST_RELU
from .triage import INIT_SCHEMES, TRAIN_SCHEMES

CSV_COLUMNS = ("block", "init", "train", "max_accuracy",
               "convergence_epoch", "param_count", "wall_time")


@dataclass
class BaselineRow:
    """Uncompressed reference model's numbers, one per results table."""

    accuracy_series: list
    max_accuracy: float
    convergence_epoch: int
    param_count: int
    wall_time: float
    test_accuracy: float | None = None

    def __post_init__(self):
        if not self.accuracy_series:
            raise InvalidSpecError("baseline accuracy series must be non-empty")


class ResultsTable:
    """Grid of experiment results keyed by (block, init, train).

    Keys are unique; a baseline row must be present (and, when a required
    grid is declared, every cell of it) before results are emitted.
    """

    def __init__(self, required=None):
        self.cells = {}
        self.baseline = None
        self.required = list(required) if required is not None else None

    def add(self, result):
        key = (result.config.block_index, result.config.init,
               result.config.train)
        if key in self.cells:
            raise InvalidSpecError(f"duplicate result for cell {key}")
        self.cells[key] = result

    def set_baseline(self, baseline):
        self.baseline = baseline

    def missing(self):
        out = []
        if self.baseline is None:
            out.append("baseline")
        if self.required is not None:
            for key in self.required:
                if key not in self.cells:
                    out.append("b{}-{}-{}".format(*key))
        elif not self.cells:
            out.append("<any grid cell>")
        return out

    def sorted_cells(self):
        order = {s: i for i, s in enumerate(INIT_SCHEMES)}
        torder = {s: i for i, s in enumerate(TRAIN_SCHEMES)}
        return [self.cells[k] for k in sorted(
            self.cells, key=lambda k: (k[0], order[k[1]], torder[k[2]]))]


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _rows(table):
    b = table.baseline
    rows = [{
        "block": "base", "init": "-", "train": "-",
        "max_accuracy": b.max_accuracy,
        "convergence_epoch": b.convergence_epoch,
        "param_count": b.param_count,
        "wall_time": b.wall_time,
        "accuracy_series": list(b.accuracy_series),
        "test_accuracy": b.test_accuracy,
    }]
    for r in table.sorted_cells():
        rows.append({
            "block": r.config.block_index,
            "init": r.config.init,
            "train": r.config.train,
            "max_accuracy": r.max_accuracy,
            "convergence_epoch": r.convergence_epoch,
            "param_count": r.param_count_child,
            "wall_time": r.wall_time,
            "accuracy_series": list(r.accuracy_series),
            "test_accuracy": r.test_accuracy,
            "stn_loss_trace": r.stn_loss_trace,
        })
    return rows


def _aggregates(table):
    """Per-scheme averages of convergence epochs across the grid."""
    by_train = {}
    by_combo = {}
    for r in table.sorted_cells():
        by_train.setdefault(r.config.train, []).append(r.convergence_epoch)
        combo = f"{r.config.init}-{r.config.train}"
        by_combo.setdefault(combo, []).append(r.convergence_epoch)
    return {
        "mean_convergence_epoch_by_train": {
            k: float(np.mean(v)) for k, v in sorted(by_train.items())},
        "mean_convergence_epoch_by_init_train": {
            k: float(np.mean(v)) for k, v in sorted(by_combo.items())},
    }


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def emit_results(table, out_dir):
    """Write results.csv and results.json under ``out_dir``.

    The CSV has one row per grid cell plus a leading baseline row; the
    JSON mirrors it, adds the full accuracy series per row, and an
    aggregate section with per-training-scheme convergence averages.
    Returns the two paths.
    """
    missing = table.missing()
    if missing:
        raise IncompleteResultsError(missing)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = _rows(table)

    csv_path = out_dir / "results.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in CSV_COLUMNS])

    json_path = out_dir / "results.json"
    payload = {
        "rows": rows,
        "aggregates": _aggregates(table),
        "grid_size": len(rows) - 1,
    }
    json_path.write_text(canonical_json(payload))
    return csv_path, json_path


# -- activation maps --------------------------------------------------------


@dataclass
class ActivationGrid:
    """Post-ReLU tap of one block on one image, rendered channel by
    channel as byte images (per-channel min-max to [0,255]; constant
    channels become all-zero)."""

    tap: np.ndarray
    filter_indices: list
    images: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    def __post_init__(self):
        for i in self.filter_indices:
            ch = self.tap[0, :, :, i].astype(np.float64)
            mn, mx = float(ch.min()), float(ch.max())
            if mx > mn:
                img = np.rint((ch - mn) / (mx - mn) * 255.0).astype(np.uint8)
            else:
                img = np.zeros(ch.shape, dtype=np.uint8)
            self.images.append(img)


def activation_grid(net, image, block_index, k=10):
    """Capture the block's final ReLU output (pre-pool) for one image."""
    if image.ndim == 3:
        image = image[None]
    if image.ndim != 4 or image.shape[0] != 1:
        raise InvalidTapError("expected a single image [H,W,C] or [1,H,W,C]")
    tap = net.forward_to_tap(image, block_index, mode="eval",
                             point=TAP_POST_RELU)
    channels = tap.shape[3]
    warnings = []
    if k > channels:
        warnings.append(
            f"requested {k} filters but block {block_index} has {channels}; "
            f"clamped")
        k = channels
    return ActivationGrid(tap=tap, filter_indices=list(range(k)),
                          warnings=warnings)


def write_pgm(img, path):
    """Binary PGM (P5, maxval 255) for one uint8 2D array."""
    if img.dtype != np.uint8 or img.ndim != 2:
        raise InvalidSpecError("PGM writer expects a uint8 2D array")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def dump_activations(net, image, block_index, k, out_dir):
    """Write the first ``k`` post-ReLU channel maps of a block as
    ``filterNN.pgm`` files.  Returns (paths, warnings)."""
    grid = activation_grid(net, image, block_index, k)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, img in zip(grid.filter_indices, grid.images):
        path = out_dir / f"filter{i:02d}.pgm"
        write_pgm(img, path)
        paths.append(path)
    return paths, grid.warnings
