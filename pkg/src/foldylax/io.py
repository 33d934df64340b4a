"""File formats: voxel masks, meshes, tensors and voxel field dumps.

Voxel data is stored as a raw little-endian array next to a JSON header
``{"dims": [nx, ny, nz], "h": ..., "origin": [...], "dtype": ..., "ordering": "x-fastest"}``.
Meshes are ASCII: a line ``nv nf``, then ``nv`` vertex lines ``x y z`` and
``nf`` face lines ``i j k`` (0-based).
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

__all__ = [
    "write_voxel_array",
    "read_voxel_array",
    "read_voxel_mask",
    "write_voxel_mask",
    "write_mesh",
    "read_mesh",
    "complex_to_json",
    "complex_from_json",
]


def _header_path(path: Path) -> Path:
    return path.with_suffix(path.suffix + ".json")


def write_voxel_array(path, data: np.ndarray, h: float, origin=(0.0, 0.0, 0.0), extra=None):
    """Write ``data`` of shape ``(nx, ny, nz, ...)`` with x varying fastest."""
    path = Path(path)
    data = np.asarray(data)
    dims = list(data.shape[:3])
    # x-fastest: C order over (z, y, x), components innermost
    payload = np.transpose(data, (2, 1, 0) + tuple(range(3, data.ndim)))
    dt = data.dtype.newbyteorder("<")
    np.ascontiguousarray(payload, dtype=dt).tofile(path)
    header = {
        "dims": dims,
        "components": list(data.shape[3:]),
        "h": float(h),
        "origin": [float(v) for v in origin],
        "dtype": dt.str,
        "ordering": "x-fastest",
    }
    header.update(extra or {})
    _header_path(path).write_text(json.dumps(header, indent=2, sort_keys=True))


def read_voxel_array(path):
    path = Path(path)
    header = json.loads(_header_path(path).read_text())
    if header.get("ordering", "x-fastest") != "x-fastest":
        raise ValueError(f"unsupported voxel ordering {header['ordering']!r}")
    dims = header["dims"]
    comps = header.get("components", [])
    raw = np.fromfile(path, dtype=np.dtype(header["dtype"]))
    arr = raw.reshape(tuple(reversed(dims)) + tuple(comps))
    arr = np.transpose(arr, (2, 1, 0) + tuple(range(3, arr.ndim)))
    return np.ascontiguousarray(arr), header


def write_voxel_mask(path, mask, h, origin=(0.0, 0.0, 0.0)):
    write_voxel_array(path, np.asarray(mask, dtype=np.uint8), h, origin)


def read_voxel_mask(path):
    arr, header = read_voxel_array(path)
    return arr.astype(bool), float(header["h"]), tuple(header["origin"])


def write_mesh(path, vertices, faces):
    vertices = np.asarray(vertices, dtype=float)
    faces = np.asarray(faces, dtype=int)
    lines = [f"{len(vertices)} {len(faces)}"]
    lines += [" ".join(repr(float(c)) for c in v) for v in vertices]
    lines += [" ".join(str(int(c)) for c in f) for f in faces]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path):
    tokens = Path(path).read_text().split()
    nv, nf = int(tokens[0]), int(tokens[1])
    vals = tokens[2:]
    if len(vals) != 3 * (nv + nf):
        raise ValueError(f"mesh file {path}: expected {3 * (nv + nf)} numbers, found {len(vals)}")
    v = np.array(vals[: 3 * nv], dtype=float).reshape(nv, 3)
    f = np.array(vals[3 * nv:], dtype=int).reshape(nf, 3)
    return v, f


def complex_to_json(a):
    """Nested lists of ``[re, im]`` pairs."""
    a = np.asarray(a, dtype=complex)
    return np.stack([a.real, a.imag], axis=-1).tolist()


def complex_from_json(obj):
    arr = np.asarray(obj, dtype=float)
    return arr[..., 0] + 1j * arr[..., 1]
