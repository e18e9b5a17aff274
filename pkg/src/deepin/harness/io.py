"""Dataset CSV files and versioned JSON model documents."""

import csv
import json
import math
from pathlib import Path

import numpy as np

from deepin.errors import FormatError
from deepin.model import DeepInModel, PenaltyConfig, Task
from deepin.network import RepuNetwork

__all__ = [
    "FORMAT_VERSION",
    "format_real",
    "write_dataset",
    "read_dataset",
    "model_to_document",
    "model_from_document",
    "save_model",
    "load_model",
]

FORMAT_VERSION = 1

_MODEL_KEYS = {
    "format_version", "task", "p", "dims", "B", "layers", "masks", "frozen_B",
    "penalty", "seed",
}


def format_real(x):
    """17 significant digits, enough to round-trip any double."""
    return format(float(x), ".17g")


def write_dataset(path, X, y, response="y", names=None):
    """Write ``X`` and ``y`` as CSV with header ``x1..xd`` plus ``response``."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    names = list(names) if names else [f"x{j + 1}" for j in range(X.shape[1])]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names + [response])
        for row, target in zip(X, y):
            writer.writerow([format_real(v) for v in row] + [format_real(target)])


def read_dataset(path, response="y"):
    """Read a CSV dataset.

    Returns ``(X, y, feature_names)`` with the feature columns in file order.
    Row numbers in errors count file lines, the header being row 1.
    """
    path = Path(path)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise FormatError(f"cannot read dataset {path}: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise FormatError(f"dataset {path} is not UTF-8") from exc
    if not rows:
        raise FormatError(f"dataset {path} is empty")
    header = [h.strip() for h in rows[0]]
    if response not in header:
        raise FormatError(f"response column {response!r} not found in {path}")
    if len(set(header)) != len(header):
        raise FormatError("duplicate column names in header")
    target = header.index(response)
    values = np.empty((len(rows) - 1, len(header)))
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise FormatError(
                f"row {i} has {len(row)} fields, header has {len(header)}"
            )
        for j, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise FormatError(
                    f"row {i}, column {header[j]}: cannot parse {cell!r} as a number"
                ) from None
            if not math.isfinite(v):
                raise FormatError(f"row {i}, column {header[j]}: non-finite value {cell!r}")
            values[i - 2, j] = v
    if values.shape[0] == 0:
        raise FormatError(f"dataset {path} has no data rows")
    features = [j for j in range(len(header)) if j != target]
    return values[:, features], values[:, target], [header[j] for j in features]


def _matrix(M):
    M = np.asarray(M, dtype=float)
    return {"shape": list(M.shape), "values": [float(v) for v in M.reshape(-1)]}


def _unmatrix(doc, what):
    try:
        shape = tuple(int(s) for s in doc["shape"])
        values = np.array(doc["values"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed matrix {what}: {exc}") from exc
    if values.size != int(np.prod(shape)):
        raise FormatError(f"matrix {what} has {values.size} values for shape {shape}")
    return values.reshape(shape)


def model_to_document(model, penalty=None, seed=None):
    """Plain-JSON description of ``model``; floats round-trip exactly."""
    net = model.net
    return {
        "format_version": FORMAT_VERSION,
        "task": model.task.value,
        "p": net.power,
        "dims": list(net.dims),
        "B": _matrix(model.B),
        "layers": [{"W": _matrix(W), "a": [float(v) for v in a]} for W, a in net.layers],
        "masks": {
            "row": [bool(v) for v in model.row_mask],
            "col": [bool(v) for v in model.col_mask],
            "theta": [bool(v) for v in model.theta_mask],
        },
        "frozen_B": bool(model.frozen_B),
        "penalty": penalty.to_dict() if penalty is not None else None,
        "seed": seed,
    }


def model_from_document(doc):
    """Inverse of :func:`model_to_document`; returns ``(model, penalty, seed)``."""
    if not isinstance(doc, dict):
        raise FormatError("model document must be a JSON object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise FormatError(
            f"unsupported model format_version {version!r}; this reader handles {FORMAT_VERSION}"
        )
    unknown = set(doc) - _MODEL_KEYS
    if unknown:
        raise FormatError(
            f"unknown fields {sorted(unknown)} for model format_version {FORMAT_VERSION}"
        )
    missing = _MODEL_KEYS - set(doc) - {"penalty", "seed", "frozen_B"}
    if missing:
        raise FormatError(f"model document is missing {sorted(missing)}")
    try:
        dims = tuple(int(d) for d in doc["dims"])
        net = RepuNetwork(dims, int(doc["p"]))
        if len(doc["layers"]) != len(net.layers):
            raise FormatError("layer count does not match dims")
        for l, layer in enumerate(doc["layers"]):
            W = _unmatrix(layer["W"], f"layers[{l}].W")
            a = np.array(layer["a"], dtype=float)
            if W.shape != net.layers[l][0].shape or a.shape != net.layers[l][1].shape:
                raise FormatError(f"layer {l} has the wrong shape")
            net.layers[l][0][:] = W
            net.layers[l][1][:] = a
        masks = doc["masks"]
        model = DeepInModel(
            _unmatrix(doc["B"], "B"), net, Task(doc["task"]),
            np.array(masks["row"], dtype=bool), np.array(masks["col"], dtype=bool),
            np.array(masks["theta"], dtype=bool), bool(doc.get("frozen_B", False)),
        )
        penalty = PenaltyConfig(**doc["penalty"]) if doc.get("penalty") else None
    except FormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed model document: {exc}") from exc
    return model, penalty, doc.get("seed")


def save_model(model, path, penalty=None, seed=None):
    text = json.dumps(model_to_document(model, penalty, seed), indent=1)
    Path(path).write_text(text + "\n", encoding="utf-8")


def load_model(path):
    """Load a model file; returns ``(model, penalty, seed)``."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise FormatError(f"cannot read model {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"malformed model document {path}: {exc}") from exc
    return model_from_document(doc)
