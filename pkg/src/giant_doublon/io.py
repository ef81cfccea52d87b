"""Artifact writers: CSV tables, binary field grids, density-matrix dumps, manifests."""
from __future__ import annotations

import hashlib
import json
import math
import struct
from pathlib import Path

import numpy as np

__all__ = [
    "format_number",
    "write_csv",
    "read_csv",
    "write_field_csv",
    "write_field_binary",
    "read_field_binary",
    "write_density_matrix",
    "sha256_file",
    "write_json",
    "FIELD_MAGIC",
    "FIELD_VERSION",
]

FIELD_MAGIC = b"GDFD"
FIELD_VERSION = 1
# magic, version, N, sample count
_HEADER = struct.Struct("<4sIII")


def format_number(x) -> str:
    """Round-trip decimal with 17 significant digits."""
    x = float(x)
    if x == 0.0:
        return "0"  # also folds -0.0 so that hashes do not depend on signed zeros
    return format(x, ".17g")


def write_csv(path, columns: dict) -> Path:
    """Write equal-length columns; complex columns split into _re/_im."""
    path = Path(path)
    names, cols = [], []
    for name, col in columns.items():
        a = np.atleast_1d(np.asarray(col))
        if np.iscomplexobj(a):
            names += [f"{name}_re", f"{name}_im"]
            cols += [a.real, a.imag]
        else:
            names.append(name)
            cols.append(a)
    n = {c.size for c in cols}
    if len(n) > 1:
        raise ValueError(f"columns have different lengths {sorted(n)}")
    lines = [",".join(names)]
    for row in zip(*cols):
        lines.append(",".join(v if isinstance(v, str) else format_number(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="ascii", newline="\n")
    return path


def read_csv(path) -> dict[str, np.ndarray]:
    lines = Path(path).read_text().splitlines()
    names = lines[0].split(",")
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]]).reshape(-1, len(names))
    return {k: data[:, i] for i, k in enumerate(names)}


def write_field_csv(path, field, min_density: float = 0.0) -> Path:
    """Dense (x_c, r_d, density) table of a FieldDistribution."""
    X, R = np.meshgrid(field.center, field.relative, indexing="ij")
    keep = field.density > min_density if min_density > 0 else np.ones(field.density.shape, bool)
    return write_csv(path, {"x_c": X[keep], "r_d": R[keep], "density": field.density[keep]})


def write_field_binary(path, num_sites: int, grids) -> Path:
    """Compact float64 grid series behind a 16-byte header (magic, version, N, samples)."""
    grids = [np.ascontiguousarray(g, dtype="<f8") for g in grids]
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FIELD_MAGIC, FIELD_VERSION, int(num_sites), len(grids)))
        for g in grids:
            fh.write(g.tobytes())
    return Path(path)


def read_field_binary(path):
    raw = Path(path).read_bytes()
    magic, version, N, count = _HEADER.unpack_from(raw)
    if magic != FIELD_MAGIC or version != FIELD_VERSION:
        raise ValueError(f"not a field grid file: {magic!r} v{version}")
    side = 2 * N - 1
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    return N, data.reshape(count, side, side)


def write_density_matrix(path_stem, rho) -> tuple[Path, Path]:
    """Real and imaginary parts as row-major CSV matrices.

    Basis order: index = sum_k 2^k e_k over emitters (A1, A2, B1, B2), so
    |eegg> is row 3 and |ggee> is row 12.
    """
    rho = np.asarray(rho)
    out = []
    for part, arr in (("re", rho.real), ("im", rho.imag)):
        p = Path(f"{path_stem}_{part}.csv")
        p.write_text("\n".join(",".join(format_number(v) for v in row) for row in arr) + "\n",
                     encoding="ascii", newline="\n")
        out.append(p)
    return out[0], out[1]


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, complex):
        return [x.real, x.imag]
    return x


def write_json(path, obj) -> Path:
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return Path(path)
