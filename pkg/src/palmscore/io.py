"""File formats.

Dataset (CSV)
    header ``id,u1..ur[,y],x1..xp``; one row per subject. An empty ``y`` cell
    marks an unlabeled subject; counts are nonnegative integers.
Basis (CSV)
    p rows of q numbers, optional header row. Normalized on load.
Model (JSON)
    ``{"format", "version", "dims", "constraints", "B", "Lambda", "b",
    "meta", "checksum"}``; the checksum is the SHA-256 of the canonical JSON
    of every other field.
Truth (JSON)
    simulator config, true parameters, latent embeddings and full labels.
Predictions (CSV)
    header ``id,gamma,e1..eq``.
"""
import csv
import hashlib
import json
import os

import numpy as np

from .core import ConstraintSpec, Dataset, EmbeddingBasis, ModelParams, orthonormalize_basis
from .errors import ChecksumError, DimensionError, SchemaError, VersionError

MODEL_FORMAT = "palmscore-model"
MODEL_VERSION = 1


def _read_rows(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError(f"{path}: empty file")
    return rows[0], rows[1:]


def _layout(header, path):
    header = [h.strip() for h in header]
    if not header or header[0] != "id":
        raise SchemaError(f"{path}: first column must be 'id'")
    u_cols, x_cols, y_col = [], [], None
    for j, name in enumerate(header[1:], start=1):
        if name == "y":
            y_col = j
        elif name.startswith("u") and name[1:].isdigit():
            u_cols.append(j)
        elif name.startswith("x") and name[1:].isdigit():
            x_cols.append(j)
        else:
            raise SchemaError(f"{path}: unrecognized column '{name}' (column {j + 1})")
    if not x_cols:
        raise SchemaError(f"{path}: no count columns x1..xp")
    return header, u_cols, y_col, x_cols


def _to_float(cells, cols, body, path, what):
    try:
        return cells[:, cols].astype(float) if cols else np.empty((len(cells), 0))
    except ValueError:
        pass
    for i, row in enumerate(body):
        for j in cols:
            try:
                float(row[j])
            except ValueError:
                raise SchemaError(f"{path}: row {i + 2}, column {j + 1}: {what} '{row[j]}' is not a number") from None
    raise SchemaError(f"{path}: unparseable {what}")


def load_dataset(path):
    header, body = _read_rows(path)
    header, u_cols, y_col, x_cols = _layout(header, path)
    width = len(header)
    for i, row in enumerate(body):
        if len(row) != width:
            raise SchemaError(f"{path}: row {i + 2} has {len(row)} fields, expected {width}")
    cells = np.array(body, dtype=object).reshape(len(body), width)
    ids = [str(v) for v in cells[:, 0]]
    seen = {}
    for i, sid in enumerate(ids):
        if sid in seen:
            raise SchemaError(f"{path}: duplicate id '{sid}' at rows {seen[sid] + 2} and {i + 2}")
        seen[sid] = i
    X = _to_float(cells, x_cols, body, path, "count")
    bad = np.argwhere(~np.isfinite(X) | (X < 0) | (X != np.round(X)))
    if bad.size:
        i, j = bad[0]
        raise SchemaError(f"{path}: row {i + 2}, column {x_cols[j] + 1}: count '{body[i][x_cols[j]]}' "
                          "is not a nonnegative integer")
    U = _to_float(cells, u_cols, body, path, "covariate")
    labels = np.full(len(body), -1, dtype=np.int64)
    if y_col is not None:
        for i, row in enumerate(body):
            v = row[y_col].strip()
            if v == "":
                continue
            if v not in ("0", "1"):
                raise SchemaError(f"{path}: row {i + 2}, column {y_col + 1}: label '{v}' must be 0, 1 or empty")
            labels[i] = int(v)
    return Dataset(X.astype(np.int64), U, labels, ids)


def _fmt(v):
    return repr(float(v))


def save_dataset(data, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id"] + [f"u{k + 1}" for k in range(data.r)] + ["y"] + [f"x{j + 1}" for j in range(data.p)])
        for i in range(data.N):
            lab = "" if data.labels[i] < 0 else str(int(data.labels[i]))
            w.writerow([data.ids[i]] + [_fmt(v) for v in data.U[i]] + [lab] + [str(int(v)) for v in data.X[i]])


def load_basis(path):
    """Read a p x q matrix and normalize it so that (q/p) V'V = I."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise SchemaError(f"{path}: empty basis file")
    try:
        [float(v) for v in rows[0]]
    except ValueError:
        rows = rows[1:]
    if len({len(r) for r in rows}) != 1:
        raise SchemaError(f"{path}: ragged basis rows")
    try:
        raw = np.array(rows, dtype=float)
    except ValueError as exc:
        raise SchemaError(f"{path}: non-numeric basis entry ({exc})") from None
    p, q = raw.shape
    if q >= p:
        raise DimensionError(f"{path}: basis is {p} x {q}; need q < p")
    if not np.all(np.isfinite(raw)):
        raise SchemaError(f"{path}: non-finite basis entry")
    return orthonormalize_basis(raw)


def save_basis(basis, path):
    V = basis.V if isinstance(basis, EmbeddingBasis) else np.asarray(basis)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in V:
            w.writerow([_fmt(v) for v in row])


def _canonical(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def _params_dict(theta):
    return {"B": theta.B.tolist(), "Lambda": theta.Lambda.tolist(), "b": theta.b.tolist()}


def save_model(theta, meta, path, constraints=None, p=None):
    constraints = constraints or ConstraintSpec()
    payload = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "dims": {"q": theta.q, "r": theta.r, "p": p},
        "constraints": {"K_B": constraints.K_B, "K_M": constraints.K_M, "eta_clip": constraints.eta_clip},
        **_params_dict(theta),
        "meta": meta or {},
    }
    payload["checksum"] = hashlib.sha256(_canonical(payload)).hexdigest()
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_model(path):
    """Returns ``(theta, constraints, payload)`` after checksum and version checks."""
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from None
    if payload.get("format") != MODEL_FORMAT:
        raise SchemaError(f"{path}: not a {MODEL_FORMAT} file")
    if payload.get("version") != MODEL_VERSION:
        raise VersionError(f"{path}: model format version {payload.get('version')}, expected {MODEL_VERSION}")
    body = {k: v for k, v in payload.items() if k != "checksum"}
    if hashlib.sha256(_canonical(body)).hexdigest() != payload.get("checksum"):
        raise ChecksumError(f"{path}: checksum mismatch")
    theta = ModelParams(np.array(payload["B"], dtype=float), np.array(payload["Lambda"], dtype=float),
                        np.array(payload["b"], dtype=float))
    return theta, ConstraintSpec(**payload["constraints"]), payload


def check_compatible(theta, data=None, V=None, model_p=None):
    q = theta.q
    if V is not None:
        if V.shape[1] != q:
            raise DimensionError(f"basis has q={V.shape[1]}, model has q={q}")
        if model_p is not None and V.shape[0] != model_p:
            raise DimensionError(f"basis has p={V.shape[0]}, model was fitted with p={model_p}")
    if data is not None:
        if data.r != theta.r:
            raise DimensionError(f"dataset has r={data.r} covariates, model expects {theta.r}")
        if V is not None and data.p != V.shape[0]:
            raise DimensionError(f"dataset has p={data.p} counts, basis has {V.shape[0]} rows")


def save_truth(truth, cfg, path):
    obj = {
        "config": cfg.to_dict(),
        "theta0": _params_dict(truth.theta0),
        "W": truth.W.tolist(),
        "xi_bar": truth.xi_bar.tolist(),
        "labels_full": truth.labels_full.tolist(),
        "C": None if truth.C is None else truth.C.tolist(),
        "c_loading": truth.c_loading,
    }
    with open(path, "w") as fh:
        json.dump(obj, fh)


def load_truth(path):
    """Returns a dict with ``theta0`` (ModelParams), arrays and the config dict."""
    with open(path) as fh:
        obj = json.load(fh)
    t = obj["theta0"]
    return {
        "config": obj["config"],
        "theta0": ModelParams(np.array(t["B"]), np.array(t["Lambda"]), np.array(t["b"])),
        "W": np.array(obj["W"], dtype=float),
        "xi_bar": np.array(obj["xi_bar"], dtype=float),
        "labels_full": np.array(obj["labels_full"], dtype=np.int64),
        "C": None if obj["C"] is None else np.array(obj["C"]),
    }


def save_predictions(ids, gamma, E, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "gamma"] + [f"e{k + 1}" for k in range(E.shape[1])])
        for i, sid in enumerate(ids):
            w.writerow([sid, _fmt(gamma[i])] + [_fmt(v) for v in E[i]])


def load_predictions(path):
    header, body = _read_rows(path)
    if header[:2] != ["id", "gamma"]:
        raise SchemaError(f"{path}: expected columns id,gamma,e1..")
    ids = [r[0] for r in body]
    vals = np.array([[float(v) for v in r[1:]] for r in body]).reshape(len(body), len(header) - 1)
    return ids, vals[:, 0], vals[:, 1:]


def write_json(obj, path):
    text = json.dumps(obj, indent=1, sort_keys=True) + "\n"
    if path in (None, "-"):
        print(text, end="")
        return
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        fh.write(text)
