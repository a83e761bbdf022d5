"""File formats: IBUG ``.pts`` annotations, JSON documents and CSV/SVG exports.

All JSON writers keep full float precision (``repr`` round-trip) and sort
nothing implicitly, so identical inputs produce identical bytes.
"""
import csv
import json
import math
import re
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from .metrics import EvalReport
from .pipeline import Dataset, TeacherPredictions
from .regressor import AdamState, MlpSpec, Regressor
from .shape_model import ShapeModel

FORMAT_VERSION = 1


class FormatError(ValueError):
    """Malformed file content. ``where`` is a line number or JSON pointer."""

    def __init__(self, message, where=None):
        super().__init__(message if where is None else f"{where}: {message}")
        self.where = where


# -- .pts -------------------------------------------------------------------

@dataclass
class PtsFile:
    version: int
    n_points: int
    points: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 2)
        if len(self.points) != self.n_points:
            raise FormatError(f"n_points is {self.n_points} but {len(self.points)} points given")


_HEADER = re.compile(r"^\s*(\w+)\s*:\s*(\S+)\s*$")


def _header_value(line, lineno, key):
    m = _HEADER.match(line)
    if not m or m.group(1) != key:
        raise FormatError(f"expected '{key}: <int>' header, got {line.strip()!r}", f"line {lineno}")
    try:
        return int(m.group(2))
    except ValueError:
        raise FormatError(f"{key} must be an integer, got {m.group(2)!r}", f"line {lineno}") from None


def parse_pts(text):
    """Parse an IBUG ``.pts`` annotation."""
    lines = [(i, ln) for i, ln in enumerate(text.splitlines(), start=1) if ln.strip()]
    if len(lines) < 3:
        raise FormatError("truncated .pts file", "line 1")
    version = _header_value(lines[0][1], lines[0][0], "version")
    n_points = _header_value(lines[1][1], lines[1][0], "n_points")
    lineno, line = lines[2]
    if line.strip() != "{":
        raise FormatError(f"expected '{{', got {line.strip()!r}", f"line {lineno}")
    points = []
    closed = False
    for lineno, line in lines[3:]:
        if closed:
            raise FormatError(f"content after closing brace: {line.strip()!r}", f"line {lineno}")
        if line.strip() == "}":
            closed = True
            continue
        fields = line.split()
        if len(fields) != 2:
            raise FormatError(f"expected two coordinates, got {line.strip()!r}", f"line {lineno}")
        try:
            xy = [float(f) for f in fields]
        except ValueError:
            raise FormatError(f"non-numeric coordinate in {line.strip()!r}", f"line {lineno}") from None
        if not all(math.isfinite(v) for v in xy):
            raise FormatError(f"non-finite coordinate in {line.strip()!r}", f"line {lineno}")
        points.append(xy)
    if not closed:
        raise FormatError("missing closing '}'", f"line {lines[-1][0]}")
    if len(points) != n_points:
        raise FormatError(
            f"n_points declares {n_points} points but {len(points)} were found", f"line {lines[1][0]}"
        )
    return PtsFile(version=version, n_points=n_points, points=np.array(points).reshape(-1, 2))


def format_pts(pts):
    body = "\n".join(f"{x!r} {y!r}" for x, y in pts.points.tolist())
    return f"version: {pts.version}\nn_points: {pts.n_points}\n{{\n{body}\n}}\n"


def read_pts(path):
    return parse_pts(Path(path).read_text())


def write_pts(pts, path):
    _write_text(path, format_pts(pts))


# -- JSON helpers -----------------------------------------------------------

def _write_text(path, text):
    path = Path(path)
    try:
        with open(path, "w", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc


def dump_json(obj, path):
    try:
        text = json.dumps(obj, indent=1, allow_nan=False)
    except ValueError as exc:
        raise FormatError(f"refusing to write non-finite number: {exc}") from exc
    _write_text(path, text + "\n")


def _reject_constant(name):
    raise ValueError(f"non-finite number {name} is not allowed")


def loads(text):
    """``json.loads`` that rejects NaN and Infinity literals."""
    try:
        return json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON: {exc.msg}", f"line {exc.lineno}") from exc
    except ValueError as exc:
        raise FormatError(str(exc)) from exc


def load_json(path):
    return loads(Path(path).read_text())


def _pointer(path):
    return "/" + "/".join(str(p) for p in path)


def _validate(doc, schema):
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise FormatError(err.message, _pointer(err.absolute_path))


def _check_version(doc):
    if doc.get("version") != FORMAT_VERSION:
        raise FormatError(f"unsupported version {doc.get('version')!r}", "/version")


_POINT = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}
_SHAPE = {"type": "array", "items": _POINT, "minItems": 1}

DATASET_SCHEMA = {
    "type": "object",
    "required": ["version", "k", "input_dim", "samples"],
    "additionalProperties": False,
    "properties": {
        "version": {"type": "integer"},
        "k": {"type": "integer", "minimum": 1},
        "input_dim": {"type": "integer", "minimum": 1},
        "samples": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["input", "hard", "split"],
                "additionalProperties": False,
                "properties": {
                    "input": {"type": "array", "items": {"type": "number"}},
                    "hard": _SHAPE,
                    "soft": _SHAPE,
                    "split": {"enum": ["train", "test"]},
                    "tags": {"type": "array", "items": {"type": "string"}},
                },
            },
        },
    },
}


# -- datasets ---------------------------------------------------------------

def dataset_to_dict(dataset):
    samples = []
    for i in range(len(dataset)):
        sample = {
            "input": dataset.inputs[i].tolist(),
            "hard": dataset.hard[i].tolist(),
        }
        if dataset.soft is not None:
            sample["soft"] = dataset.soft[i].tolist()
        sample["split"] = str(dataset.split[i])
        if dataset.tags is not None:
            sample["tags"] = list(dataset.tags[i])
        samples.append(sample)
    return {
        "version": FORMAT_VERSION,
        "k": dataset.num_points,
        "input_dim": dataset.input_dim,
        "samples": samples,
    }


def dataset_from_dict(doc):
    _validate(doc, DATASET_SCHEMA)
    _check_version(doc)
    k, input_dim, samples = doc["k"], doc["input_dim"], doc["samples"]
    if not samples:
        raise FormatError("dataset has no samples", "/samples")
    has_soft = "soft" in samples[0]
    has_tags = any("tags" in s for s in samples)
    for i, s in enumerate(samples):
        if len(s["input"]) != input_dim:
            raise FormatError(f"input has {len(s['input'])} values, expected {input_dim}",
                              f"/samples/{i}/input")
        for key in ("hard", "soft"):
            if key in s and len(s[key]) != k:
                raise FormatError(f"{key} has {len(s[key])} points, expected k={k}",
                                  f"/samples/{i}/{key}")
        if ("soft" in s) != has_soft:
            raise FormatError("soft landmarks must be present on all samples or none",
                              f"/samples/{i}")
    return Dataset(
        inputs=np.array([s["input"] for s in samples], dtype=float),
        hard=np.array([s["hard"] for s in samples], dtype=float),
        split=np.array([s["split"] for s in samples]),
        soft=np.array([s["soft"] for s in samples], dtype=float) if has_soft else None,
        tags=[list(s.get("tags", [])) for s in samples] if has_tags else None,
    )


def save_dataset(dataset, path):
    dump_json(dataset_to_dict(dataset), path)


def load_dataset(path):
    return dataset_from_dict(load_json(path))


# -- shape models -----------------------------------------------------------

SHAPE_MODEL_SCHEMA = {
    "type": "object",
    "required": ["version", "k", "mean", "eigenvalues", "basis"],
    "additionalProperties": False,
    "properties": {
        "version": {"type": "integer"},
        "k": {"type": "integer", "minimum": 1},
        "mean": {"type": "array", "items": {"type": "number"}},
        "eigenvalues": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "basis": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
    },
}


def shape_model_to_dict(model):
    return {
        "version": FORMAT_VERSION,
        "k": model.num_points,
        "mean": model.mean.tolist(),
        "eigenvalues": model.eigenvalues.tolist(),
        # column-major: one list per eigenvector
        "basis": model.basis.T.tolist(),
    }


def shape_model_from_dict(doc):
    _validate(doc, SHAPE_MODEL_SCHEMA)
    _check_version(doc)
    k = doc["k"]
    if len(doc["mean"]) != 2 * k:
        raise FormatError(f"mean has {len(doc['mean'])} entries, expected {2 * k}", "/mean")
    if len(doc["basis"]) != len(doc["eigenvalues"]):
        raise FormatError("basis column count differs from eigenvalue count", "/basis")
    for j, col in enumerate(doc["basis"]):
        if len(col) != 2 * k:
            raise FormatError(f"column has {len(col)} entries, expected {2 * k}", f"/basis/{j}")
    basis = np.array(doc["basis"], dtype=float).reshape(-1, 2 * k).T
    return ShapeModel(
        mean=np.array(doc["mean"], dtype=float),
        basis=basis,
        eigenvalues=np.array(doc["eigenvalues"], dtype=float),
        num_points=k,
    )


def save_shape_model(model, path):
    dump_json(shape_model_to_dict(model), path)


def load_shape_model(path):
    return shape_model_from_dict(load_json(path))


# -- regressor checkpoints --------------------------------------------------

def checkpoint_to_dict(model, adam=None):
    doc = {
        "version": FORMAT_VERSION,
        "spec": model.spec.to_dict(),
        "params": [{"weight": w.tolist(), "bias": b.tolist()} for w, b in model.params],
    }
    if adam is not None:
        doc["adam_state"] = adam.to_dict()
    return doc


def checkpoint_from_dict(doc):
    """Returns ``(Regressor, AdamState or None)``."""
    for key in ("version", "spec", "params"):
        if key not in doc:
            raise FormatError(f"missing field {key!r}", f"/{key}")
    unknown = set(doc) - {"version", "spec", "params", "adam_state"}
    if unknown:
        raise FormatError(f"unknown fields {sorted(unknown)}", "/")
    _check_version(doc)
    try:
        spec = MlpSpec.from_dict(doc["spec"])
        params = [(np.array(p["weight"], dtype=float), np.array(p["bias"], dtype=float))
                  for p in doc["params"]]
        model = Regressor(spec, params)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"invalid checkpoint: {exc}", "/params") from exc
    if not np.all(np.isfinite(model.theta)):
        raise FormatError("checkpoint contains non-finite parameters", "/params")
    adam = AdamState.from_dict(doc["adam_state"]) if "adam_state" in doc else None
    return model, adam


def save_checkpoint(model, path, adam=None):
    dump_json(checkpoint_to_dict(model, adam), path)


def load_checkpoint(path):
    return checkpoint_from_dict(load_json(path))[0]


# -- teacher predictions and reports ---------------------------------------

def save_teacher_predictions(preds, path):
    dump_json({
        "version": FORMAT_VERSION,
        "accurate": preds.accurate.tolist(),
        "smooth": preds.smooth.tolist(),
    }, path)


def load_teacher_predictions(path):
    doc = load_json(path)
    _check_version(doc)
    return TeacherPredictions(
        accurate=np.array(doc["accurate"], dtype=float),
        smooth=np.array(doc["smooth"], dtype=float),
    )


def save_report(report, path):
    dump_json({"version": FORMAT_VERSION, **report.to_dict()}, path)


def load_report(path):
    doc = load_json(path)
    _check_version(doc)
    return EvalReport.from_dict(doc)


# -- CSV / SVG ---------------------------------------------------------------

def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path, header, rows):
    path = Path(path)
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([_fmt(v) for v in row])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc


def export_ced_csv(ced, path):
    write_csv(path, ["threshold", "fraction"], [(float(t), float(f)) for t, f in ced])


ABLATION_COLUMNS = ["variant", "seed", "nme", "fr", "auc"]


def export_ablation_csv(rows, path):
    write_csv(path, ABLATION_COLUMNS, [[r[c] for c in ABLATION_COLUMNS] for r in rows])


def export_report_csv(report, path):
    write_csv(path, ["metric", "value"], [
        ("nme_percent", report.nme_percent),
        ("fr_percent", report.fr_percent),
        ("auc", report.auc),
        ("n_images", report.n_images),
    ])


def read_errors_csv(path):
    """One error per row in the first column; a non-numeric first row is a header."""
    values = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not row[0].strip():
                continue
            try:
                v = float(row[0])
            except ValueError:
                if lineno == 1:
                    continue
                raise FormatError(f"non-numeric error value {row[0]!r}", f"line {lineno}") from None
            if not math.isfinite(v) or v < 0:
                raise FormatError(f"error value must be finite and >= 0, got {row[0]!r}",
                                  f"line {lineno}")
            values.append(v)
    if not values:
        raise FormatError("no error values found", "line 1")
    return np.array(values)


def ced_svg(ced, title="CED"):
    """Polyline plot of a CED curve on an 800x600 canvas."""
    left, right, top, bottom = 80, 760, 40, 540
    t = np.array([p[0] for p in ced], dtype=float)
    f = np.array([p[1] for p in ced], dtype=float)
    t_max = t[-1] if t[-1] > 0 else 1.0
    xs = left + (right - left) * t / t_max
    ys = bottom - (bottom - top) * f
    points = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))
    ticks = []
    for i in range(6):
        fx = i / 5
        x = left + (right - left) * fx
        y = bottom - (bottom - top) * fx
        ticks.append(f'<text x="{x:.1f}" y="{bottom + 20}" text-anchor="middle" '
                     f'font-size="12">{fx * t_max:.3g}</text>')
        ticks.append(f'<text x="{left - 8}" y="{y + 4:.1f}" text-anchor="end" '
                     f'font-size="12">{fx:.1f}</text>')
    return "\n".join([
        '<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 800 600" width="800" height="600">',
        '<rect width="800" height="600" fill="white"/>',
        f'<text x="400" y="24" text-anchor="middle" font-size="16">{title}</text>',
        f'<line x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}" stroke="black"/>',
        f'<line x1="{left}" y1="{bottom}" x2="{left}" y2="{top}" stroke="black"/>',
        *ticks,
        f'<text x="{(left + right) / 2}" y="585" text-anchor="middle" font-size="14">NME threshold</text>',
        f'<text x="20" y="{(top + bottom) / 2}" text-anchor="middle" font-size="14" '
        f'transform="rotate(-90 20 {(top + bottom) / 2})">fraction of images</text>',
        f'<polyline fill="none" stroke="#1f77b4" stroke-width="2" points="{points}"/>',
        "</svg>",
        "",
    ])


def write_ced_svg(ced, path, title="CED"):
    _write_text(path, ced_svg(ced, title))
