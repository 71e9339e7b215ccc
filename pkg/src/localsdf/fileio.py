"""Reading and writing point clouds and triangle meshes (xyz, ply, obj)."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import EmptyCloud, ParseError

POINT_FORMATS = ("xyz", "ply", "obj")

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


def guess_format(path) -> str:
    suffix = Path(path).suffix.lower().lstrip(".")
    if suffix in ("xyz", "txt", "pts"):
        return "xyz"
    if suffix in ("ply", "obj"):
        return suffix
    raise ParseError(f"cannot infer format from extension {suffix!r}")


def load_points(path, format: str | None = None) -> np.ndarray:
    """Load the vertex positions of a file as an (n, 3) float64 array.

    Normals, colors and faces are ignored. Raises FileNotFoundError,
    ParseError or EmptyCloud.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    format = format or guess_format(path)
    if format in ("xyz", "xyz-text"):
        pts = _read_xyz(path)
    elif format == "ply":
        pts, _ = _read_ply(path)
    elif format in ("obj", "obj-vertices"):
        pts, _ = _read_obj(path)
    else:
        raise ParseError(f"unsupported format {format!r}")
    if len(pts) == 0:
        raise EmptyCloud(f"{path} contains no points")
    return pts


def load_mesh(path, format: str | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Load ``(vertices, triangles)`` from a ply or obj file."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    format = format or guess_format(path)
    if format == "ply":
        return _read_ply(path)
    if format == "obj":
        return _read_obj(path)
    raise ParseError(f"unsupported mesh format {format!r}")


def _read_xyz(path: Path) -> np.ndarray:
    rows = []
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.replace(",", " ").split()
            if len(parts) < 3:
                raise ParseError("expected at least 3 coordinates", lineno)
            try:
                rows.append([float(v) for v in parts[:3]])
            except ValueError:
                raise ParseError(f"bad number in {line!r}", lineno) from None
    pts = np.array(rows, dtype=np.float64).reshape(-1, 3)
    if not np.all(np.isfinite(pts)):
        raise ParseError("non-finite coordinate")
    return pts


def _read_obj(path: Path) -> tuple[np.ndarray, np.ndarray]:
    verts, faces = [], []
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            try:
                if parts[0] == "v":
                    verts.append([float(v) for v in parts[1:4]])
                    if len(verts[-1]) != 3:
                        raise ValueError
                elif parts[0] == "f":
                    idx = [int(tok.split("/")[0]) for tok in parts[1:]]
                    idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                    for k in range(1, len(idx) - 1):
                        faces.append([idx[0], idx[k], idx[k + 1]])
            except ValueError:
                raise ParseError(f"malformed record {line.strip()!r}", lineno) from None
    return (np.array(verts, dtype=np.float64).reshape(-1, 3),
            np.array(faces, dtype=np.int64).reshape(-1, 3))


def _parse_ply_header(fh):
    magic = fh.readline().strip()
    if magic != b"ply":
        raise ParseError("missing ply magic", 1)
    fmt = None
    elements = []  # [name, count, [(prop, dtype, list_count_dtype | None)]]
    lineno = 1
    while True:
        raw = fh.readline()
        lineno += 1
        if not raw:
            raise ParseError("unterminated ply header", lineno)
        parts = raw.decode("ascii", "replace").split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            elements.append([parts[1], int(parts[2]), []])
        elif parts[0] == "property":
            if not elements:
                raise ParseError("property before element", lineno)
            try:
                if parts[1] == "list":
                    prop = (parts[4], _PLY_TYPES[parts[3]], _PLY_TYPES[parts[2]])
                else:
                    prop = (parts[2], _PLY_TYPES[parts[1]], None)
            except (KeyError, IndexError):
                raise ParseError(f"bad property line {raw!r}", lineno) from None
            elements[-1][2].append(prop)
        elif parts[0] == "end_header":
            break
        else:
            raise ParseError(f"unknown header keyword {parts[0]!r}", lineno)
    if fmt not in ("ascii", "binary_little_endian"):
        raise ParseError(f"unsupported ply format {fmt!r}")
    return fmt, elements, lineno


def _read_ply(path: Path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, "rb") as fh:
        fmt, elements, lineno = _parse_ply_header(fh)
        body = fh.read()
    data = {}
    if fmt == "ascii":
        tokens = body.decode("ascii", "replace").split()
        pos = 0
        for name, count, props in elements:
            rows = []
            for _ in range(count):
                row = {}
                for pname, dtype, ltype in props:
                    try:
                        if ltype is None:
                            row[pname] = float(tokens[pos])
                            pos += 1
                        else:
                            k = int(tokens[pos])
                            row[pname] = [float(t) for t in tokens[pos + 1:pos + 1 + k]]
                            if len(row[pname]) != k:
                                raise IndexError
                            pos += 1 + k
                    except (IndexError, ValueError):
                        raise ParseError(f"truncated or malformed {name} data") from None
                rows.append(row)
            data[name] = rows
    else:
        offset = 0
        for name, count, props in elements:
            if all(ltype is None for _, _, ltype in props):
                dt = np.dtype([(p, "<" + t) for p, t, _ in props])
                nbytes = dt.itemsize * count
                if offset + nbytes > len(body):
                    raise ParseError(f"truncated binary {name} data")
                arr = np.frombuffer(body, dtype=dt, count=count, offset=offset)
                offset += nbytes
                data[name] = [{p: arr[p][i] for p, _, _ in props} for i in range(count)] \
                    if name != "vertex" else arr
                continue
            if len(props) == 1 and count > 0:
                pname, dtype, ltype = props[0]
                dt = np.dtype([("n", "<" + ltype), ("idx", "<" + dtype, (3,))])
                if offset + dt.itemsize * count <= len(body):
                    arr = np.frombuffer(body, dtype=dt, count=count, offset=offset)
                    if np.all(arr["n"] == 3):
                        offset += dt.itemsize * count
                        data[name] = [{pname: r} for r in arr["idx"]]
                        continue
            rows = []
            for _ in range(count):
                row = {}
                for pname, dtype, ltype in props:
                    try:
                        if ltype is None:
                            (row[pname],) = struct.unpack_from("<" + np.dtype(dtype).char, body, offset)
                            offset += np.dtype(dtype).itemsize
                        else:
                            (k,) = struct.unpack_from("<" + np.dtype(ltype).char, body, offset)
                            offset += np.dtype(ltype).itemsize
                            vals = struct.unpack_from("<" + np.dtype(dtype).char * k, body, offset)
                            offset += np.dtype(dtype).itemsize * k
                            row[pname] = list(vals)
                    except struct.error:
                        raise ParseError(f"truncated binary {name} data") from None
                rows.append(row)
            data[name] = rows

    verts = data.get("vertex")
    if verts is None or len(verts) == 0:
        pts = np.zeros((0, 3))
    elif isinstance(verts, np.ndarray):
        try:
            pts = np.stack([verts["x"], verts["y"], verts["z"]], axis=1).astype(np.float64)
        except ValueError:
            raise ParseError("vertex element lacks x/y/z") from None
    else:
        try:
            pts = np.array([[v["x"], v["y"], v["z"]] for v in verts], dtype=np.float64)
        except KeyError:
            raise ParseError("vertex element lacks x/y/z") from None
    tris = []
    for row in data.get("face", []):
        idx = row.get("vertex_indices", row.get("vertex_index"))
        if idx is None:
            raise ParseError("face element lacks vertex_indices")
        idx = [int(i) for i in idx]
        for k in range(1, len(idx) - 1):
            tris.append([idx[0], idx[k], idx[k + 1]])
    return pts, np.array(tris, dtype=np.int64).reshape(-1, 3)


def save_points(points, path) -> None:
    """Write points as whitespace-separated xyz text (full float precision)."""
    np.savetxt(path, np.asarray(points, dtype=np.float64).reshape(-1, 3), fmt="%.17g")


def save_mesh(vertices, triangles, path, format: str | None = None) -> None:
    """Write a triangle mesh as obj or binary little-endian ply.

    Vertex order is preserved and coordinates round-trip exactly.
    """
    format = format or guess_format(path)
    vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    triangles = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    if format == "obj":
        with open(path, "w") as fh:
            for v in vertices:
                fh.write("v %r %r %r\n" % (float(v[0]), float(v[1]), float(v[2])))
            for t in triangles + 1:
                fh.write("f %d %d %d\n" % tuple(t))
    elif format == "ply":
        header = (
            "ply\nformat binary_little_endian 1.0\n"
            f"element vertex {len(vertices)}\n"
            "property double x\nproperty double y\nproperty double z\n"
            f"element face {len(triangles)}\n"
            "property list uchar int vertex_indices\nend_header\n"
        )
        face_dt = np.dtype([("n", "u1"), ("idx", "<i4", (3,))])
        faces = np.empty(len(triangles), dtype=face_dt)
        faces["n"] = 3
        faces["idx"] = triangles
        with open(path, "wb") as fh:
            fh.write(header.encode("ascii"))
            fh.write(vertices.astype("<f8").tobytes())
            fh.write(faces.tobytes())
    else:
        raise ParseError(f"unsupported mesh format {format!r}")
