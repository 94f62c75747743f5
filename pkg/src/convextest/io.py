"""Problem/scheme file parsing and report serialization.

Reals are written with 17 significant digits so that every float survives a
write/read round trip bit for bit.  Output files are replaced atomically.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from .discrete import DiscreteScheme
from .errors import ConvexTestError
from .gaussian import GaussianScheme
from .geometry import Ball, Box, Ellipsoid, Polytope


class ProblemFormatError(ConvexTestError, ValueError):
    """Malformed problem, scheme or pair file; ``field`` names the offending entry."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


def fmt_float(x: float) -> str:
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return format(x, ".17g")


def dumps(obj, indent: int = 2) -> str:
    """JSON text for nested dict/list/scalar/ndarray data, floats at 17 significant digits."""

    def enc(o, level):
        pad = " " * (indent * (level + 1))
        end = " " * (indent * level)
        if isinstance(o, np.ndarray):
            o = o.tolist()
        if isinstance(o, (bool, np.bool_)):
            return "true" if o else "false"
        if o is None:
            return "null"
        if isinstance(o, (int, np.integer)):
            return str(int(o))
        if isinstance(o, (float, np.floating)):
            return fmt_float(float(o))
        if isinstance(o, str):
            return json.dumps(o)
        if isinstance(o, dict):
            if not o:
                return "{}"
            items = [f"{pad}{json.dumps(str(k))}: {enc(v, level + 1)}" for k, v in o.items()]
            return "{\n" + ",\n".join(items) + "\n" + end + "}"
        if isinstance(o, (list, tuple)):
            if not o:
                return "[]"
            if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in o):
                return "[" + ", ".join(enc(v, level + 1) for v in o) + "]"
            return "[\n" + ",\n".join(pad + enc(v, level + 1) for v in o) + "\n" + end + "]"
        raise TypeError(f"cannot serialize {type(o).__name__}")

    return enc(obj, 0) + "\n"


def write_atomic(path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj) -> None:
    write_atomic(path, dumps(obj))


def csv_text(columns, rows) -> str:
    """CSV with a fixed column order; floats at 17 digits, None as empty, bools lowercase."""

    def cell(v):
        if v is None:
            return ""
        if isinstance(v, (bool, np.bool_)):
            return "true" if v else "false"
        if isinstance(v, (float, np.floating)):
            return fmt_float(float(v))
        return str(v)

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([cell(r.get(c)) for c in columns])
    return buf.getvalue()


def load_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as err:
        raise ProblemFormatError("file", f"cannot read {path}: {err.strerror}") from None
    except json.JSONDecodeError as err:
        raise ProblemFormatError("file", f"invalid JSON in {path}: {err}") from None


def _real_array(value, field, ndim):
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise ProblemFormatError(field, "expected numbers") from None
    if arr.ndim != ndim:
        kind = "a list of numbers" if ndim == 1 else "a list of equal-length rows"
        raise ProblemFormatError(field, f"expected {kind}")
    if not np.all(np.isfinite(arr)):
        raise ProblemFormatError(field, "non-finite entry")
    return arr


def _get(d, key, field):
    if not isinstance(d, dict):
        raise ProblemFormatError(field, "expected an object")
    if key not in d:
        raise ProblemFormatError(f"{field}.{key}" if field else key, "missing")
    return d[key]


def parse_set(spec, field: str):
    kind = _get(spec, "type", field)
    try:
        if kind == "box":
            return Box(_real_array(_get(spec, "lower", field), f"{field}.lower", 1),
                       _real_array(_get(spec, "upper", field), f"{field}.upper", 1))
        if kind == "ball":
            r = _get(spec, "radius", field)
            if not isinstance(r, (int, float)) or isinstance(r, bool):
                raise ProblemFormatError(f"{field}.radius", "expected a number")
            return Ball(_real_array(_get(spec, "center", field), f"{field}.center", 1), r)
        if kind == "ellipsoid":
            return Ellipsoid(_real_array(_get(spec, "center", field), f"{field}.center", 1),
                             _real_array(_get(spec, "shape", field), f"{field}.shape", 2))
        if kind == "polytope":
            return Polytope(_real_array(_get(spec, "vertices", field), f"{field}.vertices", 2))
    except ProblemFormatError:
        raise
    except ValueError as err:
        raise ProblemFormatError(field, str(err)) from None
    raise ProblemFormatError(f"{field}.type", f"unknown set type {kind!r}")


def set_to_spec(s) -> dict:
    if isinstance(s, Box):
        return {"type": "box", "lower": s.lower, "upper": s.upper}
    if isinstance(s, Ball):
        return {"type": "ball", "center": s.center, "radius": s.radius}
    if isinstance(s, Ellipsoid):
        return {"type": "ellipsoid", "center": s.center, "shape": s.shape}
    return {"type": "polytope", "vertices": s.vertices}


def parse_gaussian_problem(data) -> GaussianScheme:
    d = _get(data, "dimension", "")
    if not isinstance(d, int) or isinstance(d, bool) or d < 1:
        raise ProblemFormatError("dimension", "expected a positive integer")
    sigma = _real_array(_get(data, "sigma", ""), "sigma", 2)
    if sigma.shape != (d, d):
        raise ProblemFormatError("sigma", f"expected a {d}x{d} matrix, got shape {sigma.shape}")
    if np.abs(sigma - sigma.T).max() > 1e-12:
        raise ProblemFormatError("sigma", "matrix is not symmetric")
    if np.linalg.eigvalsh(0.5 * (sigma + sigma.T))[0] <= 0:
        raise ProblemFormatError("sigma", "matrix is not positive definite")
    sets = []
    for name in ("theta0", "theta1"):
        s = parse_set(_get(data, name, ""), name)
        if s.dim != d:
            raise ProblemFormatError(name, f"set has dimension {s.dim}, expected {d}")
        sets.append(s)
    return GaussianScheme(sigma, *sets)


def gaussian_problem_to_dict(scheme: GaussianScheme) -> dict:
    return {"dimension": scheme.dim, "sigma": scheme.sigma,
            "theta0": set_to_spec(scheme.theta0), "theta1": set_to_spec(scheme.theta1)}


def parse_discrete_scheme(data) -> DiscreteScheme:
    K = _get(data, "outcomes", "")
    if not isinstance(K, int) or isinstance(K, bool) or K < 1:
        raise ProblemFormatError("outcomes", "expected a positive integer")
    params = _get(data, "params", "")
    if not isinstance(params, list) or not params:
        raise ProblemFormatError("params", "expected a non-empty list")
    pmfs, labels = [], []
    for i, p in enumerate(params):
        f = f"params[{i}]"
        pmf = _real_array(_get(p, "pmf", f), f"{f}.pmf", 1)
        if pmf.size != K:
            raise ProblemFormatError(f"{f}.pmf", f"expected {K} entries, got {pmf.size}")
        if np.any(pmf < 0):
            raise ProblemFormatError(f"{f}.pmf", "negative probability")
        if abs(pmf.sum() - 1.0) > 1e-12:
            raise ProblemFormatError(f"{f}.pmf", f"sums to {pmf.sum()!r}, not 1")
        lab = _get(p, "label", f)
        if lab not in (-1, 1) or isinstance(lab, bool):
            raise ProblemFormatError(f"{f}.label", "expected -1 or 1")
        pmfs.append(pmf)
        labels.append(lab)
    if -1 not in labels or 1 not in labels:
        raise ProblemFormatError("params", "both labels -1 and 1 must occur")
    return DiscreteScheme(np.array(pmfs), np.array(labels))


def discrete_scheme_to_dict(scheme: DiscreteScheme) -> dict:
    return {"outcomes": scheme.outcomes,
            "params": [{"pmf": p, "label": int(s)} for p, s in zip(scheme.pmfs, scheme.labels)]}


def parse_pair(data, dim: int):
    """A candidate pair: ``{"theta0": [...], "theta1": [...]}`` or a solve report."""
    if isinstance(data, dict) and "theta0_star" in data:
        keys = ("theta0_star", "theta1_star")
    else:
        keys = ("theta0", "theta1")
    out = []
    for k in keys:
        v = _real_array(_get(data, k, ""), k, 1)
        if v.size != dim:
            raise ProblemFormatError(k, f"expected {dim} entries, got {v.size}")
        out.append(v)
    return tuple(out)
