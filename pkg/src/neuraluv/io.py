"""File formats: OBJ, PLY (ascii/binary), XYZ text, metrics/history tables.

Every writer/reader pair here round-trips to the tolerances promised in
its docstring; exported UVs are affinely rescaled into [0, 1]^2 with the
transform logged both in the OBJ header and in a raw-UV sidecar file.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Tuple

import numpy as np

from .geometry import PointSet, TriMesh
from .model import LossHistory

__all__ = [
    "load_obj",
    "load_obj_with_uv",
    "load_points",
    "export_obj_with_uv",
    "write_xyz",
    "write_ply",
    "load_ply",
    "write_loss_history",
    "read_loss_history",
    "write_metrics_report",
]


class ParseError(ValueError):
    """Malformed record, annotated with the source line number."""

    def __init__(self, path, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.line_no = line_no


def _resolve_index(raw: str, count: int, path, line_no: int) -> int:
    try:
        idx = int(raw)
    except ValueError:
        raise ParseError(path, line_no, f"bad index {raw!r}") from None
    if idx > 0:
        resolved = idx - 1
    elif idx < 0:
        resolved = count + idx
    else:
        raise ParseError(path, line_no, "OBJ indices are 1-based; 0 is invalid")
    if resolved < 0 or resolved >= count:
        raise ParseError(path, line_no, f"index {idx} out of range")
    return resolved


def _parse_obj(path):
    vertices = []
    uvs = []
    face_v = []
    face_vt = []
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for line_no, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            parts = stripped.split()
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise ParseError(path, line_no, "v record needs 3 coordinates")
                try:
                    vertices.append([float(x) for x in parts[1:4]])
                except ValueError:
                    raise ParseError(path, line_no, "bad vertex coordinate") from None
            elif tag == "vt":
                if len(parts) < 3:
                    raise ParseError(path, line_no, "vt record needs 2 coordinates")
                try:
                    uvs.append([float(x) for x in parts[1:3]])
                except ValueError:
                    raise ParseError(path, line_no, "bad texture coordinate") from None
            elif tag == "vn":
                if len(parts) < 4:
                    raise ParseError(path, line_no, "vn record needs 3 components")
            elif tag == "f":
                if len(parts) < 4:
                    raise ParseError(path, line_no, "face needs at least 3 vertices")
                poly = []
                poly_t = []
                for token in parts[1:]:
                    fields = token.split("/")
                    poly.append(
                        _resolve_index(fields[0], len(vertices), path, line_no)
                    )
                    if len(fields) > 1 and fields[1]:
                        poly_t.append(
                            _resolve_index(fields[1], len(uvs), path, line_no)
                        )
                # fan-triangulate polygons
                for k in range(1, len(poly) - 1):
                    face_v.append([poly[0], poly[k], poly[k + 1]])
                    if len(poly_t) == len(poly):
                        face_vt.append([poly_t[0], poly_t[k], poly_t[k + 1]])
            # other records (o, g, s, usemtl, ...) are ignored
    if not vertices:
        raise ParseError(path, 0, "no vertices found")
    return (
        np.asarray(vertices, dtype=np.float64),
        np.asarray(uvs, dtype=np.float64) if uvs else None,
        np.asarray(face_v, dtype=np.int64).reshape(-1, 3),
        np.asarray(face_vt, dtype=np.int64).reshape(-1, 3) if face_vt else None,
    )


def load_obj(path) -> TriMesh:
    """Parse v/vn/f records into a TriMesh.

    Polygon faces are fan-triangulated; 1-based and negative indices are
    resolved; vt records are ignored (see :func:`load_obj_with_uv`).
    Malformed records raise with the offending line number.
    """
    vertices, _, faces, _ = _parse_obj(path)
    return TriMesh(vertices, faces)


def load_obj_with_uv(path) -> TriMesh:
    """Like :func:`load_obj` but attaches per-vertex UVs from vt records.

    Requires every face to carry texture indices; when a vertex appears
    with several different vt rows the first assignment wins.
    """
    vertices, uvs, faces, face_vt = _parse_obj(path)
    if uvs is None or face_vt is None:
        raise ValueError(f"{path}: no usable vt records")
    uv = np.full((vertices.shape[0], 2), np.nan)
    for fv, ft in zip(faces, face_vt):
        for v_idx, t_idx in zip(fv, ft):
            if np.isnan(uv[v_idx, 0]):
                uv[v_idx] = uvs[t_idx]
    if np.isnan(uv).any():
        # vertices never referenced by any face get a neutral UV
        uv[np.isnan(uv[:, 0])] = 0.0
    return TriMesh(vertices, faces, uv=uv)


def load_points(path) -> PointSet:
    """Load a point cloud from XYZ text (3 or 6 columns) or PLY."""
    path = Path(path)
    if path.suffix.lower() == ".ply":
        return load_ply(path)
    rows = []
    width = None
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for line_no, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            parts = stripped.replace(",", " ").split()
            if width is None:
                width = len(parts)
                if width not in (3, 6):
                    raise ParseError(path, line_no,
                                     f"expected 3 or 6 columns, got {width}")
            if len(parts) != width:
                raise ParseError(path, line_no,
                                 f"expected {width} columns, got {len(parts)}")
            try:
                rows.append([float(x) for x in parts])
            except ValueError:
                raise ParseError(path, line_no, "bad number") from None
    if not rows:
        raise ParseError(path, 0, "no points found")
    data = np.asarray(rows, dtype=np.float64)
    if width == 3:
        return PointSet(data)
    normals = data[:, 3:6]
    lengths = np.linalg.norm(normals, axis=1, keepdims=True)
    lengths[lengths == 0] = 1.0
    return PointSet(data[:, :3], normals=normals / lengths)


def write_xyz(path, ps: PointSet) -> None:
    """XYZ text writer; 6 columns when normals are present."""
    if ps.normals is not None:
        data = np.hstack([ps.positions, ps.normals])
    else:
        data = ps.positions
    np.savetxt(path, data, fmt="%.17g")


_PLY_TYPES = {
    "float": ("<f4", 4), "float32": ("<f4", 4),
    "double": ("<f8", 8), "float64": ("<f8", 8),
    "uchar": ("<u1", 1), "uint8": ("<u1", 1),
    "char": ("<i1", 1), "int8": ("<i1", 1),
    "short": ("<i2", 2), "ushort": ("<u2", 2),
    "int": ("<i4", 4), "int32": ("<i4", 4),
    "uint": ("<u4", 4), "uint32": ("<u4", 4),
}


def load_ply(path) -> PointSet:
    """Read vertex positions (plus normals when present) from a PLY file.

    Supports ascii 1.0 and binary_little_endian 1.0; non-vertex elements
    and extra vertex properties are skipped.
    """
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"ply":
            raise ValueError(f"{path}: not a PLY file")
        fmt = None
        elements = []  # (name, count, [(prop_name, type_str), ...])
        current = None
        while True:
            line = fh.readline()
            if not line:
                raise ValueError(f"{path}: unexpected end of header")
            tokens = line.decode("ascii", errors="replace").strip().split()
            if not tokens:
                continue
            if tokens[0] == "format":
                fmt = tokens[1]
            elif tokens[0] == "element":
                current = (tokens[1], int(tokens[2]), [])
                elements.append(current)
            elif tokens[0] == "property":
                if current is None:
                    raise ValueError(f"{path}: property before element")
                if tokens[1] == "list":
                    current[2].append((tokens[-1], ("list", tokens[2], tokens[3])))
                else:
                    current[2].append((tokens[-1], tokens[1]))
            elif tokens[0] == "end_header":
                break
        if fmt not in ("ascii", "binary_little_endian"):
            raise ValueError(f"{path}: unsupported PLY format {fmt}")
        positions = normals = None
        for name, count, props in elements:
            if name == "vertex":
                data = _read_ply_vertices(fh, fmt, count, props, path)
                positions, normals = data
            else:
                _skip_ply_element(fh, fmt, count, props)
        if positions is None:
            raise ValueError(f"{path}: no vertex element")
    if normals is not None:
        lengths = np.linalg.norm(normals, axis=1, keepdims=True)
        lengths[lengths == 0] = 1.0
        normals = normals / lengths
    return PointSet(positions, normals=normals)


def _read_ply_vertices(fh, fmt, count, props, path):
    names = [p[0] for p in props]
    if any(isinstance(p[1], tuple) for p in props):
        raise ValueError(f"{path}: list property on vertex element")
    for needed in ("x", "y", "z"):
        if needed not in names:
            raise ValueError(f"{path}: vertex element lacks {needed}")
    has_normals = all(n in names for n in ("nx", "ny", "nz"))
    if fmt == "ascii":
        rows = []
        for _ in range(count):
            rows.append(fh.readline().decode("ascii").split())
        table = np.asarray(rows, dtype=np.float64)
    else:
        dtype = np.dtype([(p[0], _PLY_TYPES[p[1]][0]) for p in props])
        raw = fh.read(dtype.itemsize * count)
        rec = np.frombuffer(raw, dtype=dtype, count=count)
        table = np.column_stack([rec[n].astype(np.float64) for n in names])
    cols = {n: i for i, n in enumerate(names)}
    positions = table[:, [cols["x"], cols["y"], cols["z"]]]
    normals = None
    if has_normals:
        normals = table[:, [cols["nx"], cols["ny"], cols["nz"]]]
    return positions, normals


def _skip_ply_element(fh, fmt, count, props):
    if fmt == "ascii":
        for _ in range(count):
            fh.readline()
        return
    fixed = 0
    has_list = False
    for _, kind in props:
        if isinstance(kind, tuple):
            has_list = True
        else:
            fixed += _PLY_TYPES[kind][1]
    if not has_list:
        fh.read(fixed * count)
        return
    for _ in range(count):
        for _, kind in props:
            if isinstance(kind, tuple):
                _, count_type, item_type = kind
                csize = _PLY_TYPES[count_type][1]
                n = int(np.frombuffer(fh.read(csize),
                                      dtype=_PLY_TYPES[count_type][0])[0])
                fh.read(_PLY_TYPES[item_type][1] * n)
            else:
                fh.read(_PLY_TYPES[kind][1])


def write_ply(path, positions, normals=None, colors=None,
              binary: bool = False) -> None:
    """PLY writer (ascii or binary little-endian): position/normal/color.

    Colors are float RGB in [0, 1], quantized to uchar.
    """
    positions = np.asarray(positions, dtype=np.float64)
    n = positions.shape[0]
    header = ["ply",
              "format binary_little_endian 1.0" if binary else "format ascii 1.0",
              f"element vertex {n}",
              "property double x", "property double y", "property double z"]
    if normals is not None:
        header += ["property double nx", "property double ny", "property double nz"]
    if colors is not None:
        header += ["property uchar red", "property uchar green",
                   "property uchar blue"]
    header.append("end_header")
    cols = [positions]
    if normals is not None:
        cols.append(np.asarray(normals, dtype=np.float64))
    rgb = None
    if colors is not None:
        rgb = np.clip(np.round(np.asarray(colors) * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            fields = [("x", "<f8"), ("y", "<f8"), ("z", "<f8")]
            if normals is not None:
                fields += [("nx", "<f8"), ("ny", "<f8"), ("nz", "<f8")]
            if rgb is not None:
                fields += [("red", "<u1"), ("green", "<u1"), ("blue", "<u1")]
            rec = np.zeros(n, dtype=np.dtype(fields))
            data = np.hstack(cols)
            for i, name in enumerate([f[0] for f in fields if f[1] == "<f8"]):
                rec[name] = data[:, i]
            if rgb is not None:
                rec["red"], rec["green"], rec["blue"] = rgb.T
            fh.write(rec.tobytes())
        else:
            for i in range(n):
                row = " ".join(f"{x:.17g}" for x in np.hstack([c[i] for c in cols]))
                if rgb is not None:
                    row += " " + " ".join(str(int(x)) for x in rgb[i])
                fh.write((row + "\n").encode("ascii"))


def export_obj_with_uv(mesh: TriMesh, uv: np.ndarray, path) -> Tuple[float, np.ndarray]:
    """Write v/vt/f records with UVs rescaled into [0, 1]^2.

    vt rows are one per vertex in vertex order, so f records reference
    identical v and vt indices. The affine rescale (scale, offset) is
    logged in the OBJ header, and the raw free-boundary coordinates go
    to a ``<name>.rawuv.txt`` sidecar. Returns (scale, offset) with
    ``raw_uv = exported_uv / scale + offset``.
    """
    uv = np.asarray(uv, dtype=np.float64)
    if uv.shape != (mesh.n_vertices, 2):
        raise ValueError("uv must be (V, 2) and row-aligned with vertices")
    lo = uv.min(axis=0)
    extent = float((uv.max(axis=0) - lo).max())
    scale = 1.0 / extent if extent > 0 else 1.0
    scaled = (uv - lo) * scale
    path = Path(path)
    with open(path, "w", encoding="ascii") as fh:
        fh.write("# exported with per-vertex UV\n")
        fh.write(f"# uv_rescale scale {scale:.17g} offset {lo[0]:.17g} {lo[1]:.17g}\n")
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for q in scaled:
            fh.write(f"vt {q[0]:.17g} {q[1]:.17g}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0]+1}/{f[0]+1} {f[1]+1}/{f[1]+1} {f[2]+1}/{f[2]+1}\n")
    sidecar = path.with_suffix(path.suffix + ".rawuv.txt")
    np.savetxt(sidecar, uv, fmt="%.17g",
               header="raw free-boundary uv (u v), one row per vertex")
    return scale, lo


def read_uv_rescale(path) -> Tuple[float, np.ndarray]:
    """Recover the (scale, offset) logged by :func:`export_obj_with_uv`."""
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            if line.startswith("# uv_rescale"):
                parts = line.split()
                return float(parts[3]), np.array([float(parts[5]), float(parts[6])])
    raise ValueError(f"{path}: no uv_rescale header")


_HISTORY_COLUMNS = ("iteration", "unwrap", "wrap", "cycle", "conformal", "total")


def write_loss_history(path, history: LossHistory, sep: str = "\t") -> None:
    """Delimited text table of the per-iteration loss components."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write(sep.join(_HISTORY_COLUMNS) + "\n")
        for row in history.as_array():
            fh.write(sep.join(f"{x:.17g}" for x in row) + "\n")


def read_loss_history(path, sep: str = "\t") -> np.ndarray:
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip().split(sep)
        if tuple(header) != _HISTORY_COLUMNS:
            raise ValueError(f"{path}: unexpected history header {header}")
        return np.loadtxt(fh, delimiter=sep, ndmin=2)


def write_metrics_report(path_base, report) -> None:
    """Write a MetricsReport as both TSV and JSON (stable field names)."""
    base = Path(path_base)
    with open(base.with_suffix(".tsv"), "w", encoding="ascii") as fh:
        fh.write(report.header() + "\n")
        fh.write(report.to_delimited() + "\n")
    with open(base.with_suffix(".json"), "w", encoding="ascii") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
