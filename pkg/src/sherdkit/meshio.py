"""Mesh file IO: OBJ (ASCII), PLY (ASCII / binary little-endian), STL (ASCII / binary).

Coordinates are read and written as-is; unit interpretation is the caller's
job (the project file declares units explicitly).
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .errors import MeshFormatError
from .mesh import TriangleMesh

_FORMATS = ("obj", "ply", "stl")


def _detect_format(path: Path, declared: str) -> str:
    if declared != "auto":
        if declared not in _FORMATS:
            raise MeshFormatError(f"unknown mesh format {declared!r}", path=path)
        return declared
    ext = path.suffix.lower().lstrip(".")
    if ext not in _FORMATS:
        raise MeshFormatError(
            f"cannot infer format from extension {path.suffix!r}", path=path
        )
    return ext


def load_mesh(path, format: str = "auto") -> TriangleMesh:
    """Load a triangle mesh; polygon faces are fan-triangulated."""
    path = Path(path)
    if not path.is_file():
        raise MeshFormatError("file not found or unreadable", path=path)
    fmt = _detect_format(path, format)
    if fmt == "obj":
        mesh = _load_obj(path)
    elif fmt == "ply":
        mesh = _load_ply(path)
    else:
        mesh = _load_stl(path)
    if mesh.triangle_count == 0:
        raise MeshFormatError("mesh contains no triangles", path=path)
    return mesh


def save_mesh(mesh: TriangleMesh, path, format: str = "auto") -> None:
    """Write a mesh; load(save(m)) preserves connectivity exactly.

    OBJ and PLY round-trip coordinates at full float64 precision; STL is
    limited to float32 by its format definition.
    """
    path = Path(path)
    fmt = _detect_format(path, format)
    try:
        if fmt == "obj":
            _save_obj(mesh, path)
        elif fmt == "ply":
            _save_ply(mesh, path)
        else:
            _save_stl(mesh, path)
    except OSError as exc:
        raise MeshFormatError(f"cannot write file: {exc}", path=path) from exc


# ---------------------------------------------------------------- OBJ

def _fan(indices):
    return [(indices[0], indices[i], indices[i + 1]) for i in range(1, len(indices) - 1)]


def _load_obj(path: Path) -> TriangleMesh:
    verts = []
    faces = []
    with open(path, "r", errors="replace") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise MeshFormatError("vertex needs 3 coordinates", path, lineno)
                try:
                    verts.append([float(x) for x in parts[1:4]])
                except ValueError:
                    raise MeshFormatError("bad vertex coordinate", path, lineno)
            elif tag == "f":
                if len(parts) < 4:
                    raise MeshFormatError("face needs at least 3 indices", path, lineno)
                idx = []
                for token in parts[1:]:
                    # "i", "i/t", "i/t/n", "i//n" — only the vertex index matters
                    head = token.split("/")[0]
                    try:
                        value = int(head)
                    except ValueError:
                        raise MeshFormatError(f"bad face index {token!r}", path, lineno)
                    if value == 0:
                        raise MeshFormatError("OBJ indices are 1-based", path, lineno)
                    idx.append(value - 1 if value > 0 else len(verts) + value)
                for a, b, c in _fan(idx):
                    if not (0 <= a < len(verts) and 0 <= b < len(verts) and 0 <= c < len(verts)):
                        raise MeshFormatError("face index out of range", path, lineno)
                    faces.append((a, b, c))
            # other records (vn, vt, o, g, usemtl, ...) are ignored
    return TriangleMesh(np.array(verts, dtype=np.float64).reshape(-1, 3), faces)


def _save_obj(mesh: TriangleMesh, path: Path) -> None:
    with open(path, "w", newline="\n") as fh:
        for x, y, z in mesh.vertices:
            fh.write(f"v {float(x)!r} {float(y)!r} {float(z)!r}\n")
        for a, b, c in mesh.triangles:
            fh.write(f"f {a + 1} {b + 1} {c + 1}\n")


# ---------------------------------------------------------------- PLY

_PLY_SCALARS = {
    "char": "b", "int8": "b",
    "uchar": "B", "uint8": "B",
    "short": "h", "int16": "h",
    "ushort": "H", "uint16": "H",
    "int": "i", "int32": "i",
    "uint": "I", "uint32": "I",
    "float": "f", "float32": "f",
    "double": "d", "float64": "d",
}


def _load_ply(path: Path) -> TriangleMesh:
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"ply":
            raise MeshFormatError("missing 'ply' magic", path, 1)
        fmt = None
        elements = []  # (name, count, [(prop_kind, ...), ...])
        lineno = 1
        while True:
            raw = fh.readline()
            lineno += 1
            if not raw:
                raise MeshFormatError("unterminated header", path, lineno)
            parts = raw.decode("ascii", errors="replace").split()
            if not parts:
                continue
            if parts[0] == "comment":
                continue
            if parts[0] == "format":
                fmt = parts[1]
                if fmt not in ("ascii", "binary_little_endian"):
                    raise MeshFormatError(f"unsupported PLY format {fmt!r}", path, lineno)
            elif parts[0] == "element":
                elements.append([parts[1], int(parts[2]), []])
            elif parts[0] == "property":
                if not elements:
                    raise MeshFormatError("property before element", path, lineno)
                if parts[1] == "list":
                    elements[-1][2].append(("list", parts[2], parts[3], parts[4]))
                else:
                    elements[-1][2].append(("scalar", parts[1], parts[2]))
            elif parts[0] == "end_header":
                break
        if fmt is None:
            raise MeshFormatError("missing format line", path, lineno)
        verts = None
        faces = []
        for name, count, props in elements:
            if fmt == "ascii":
                rows = []
                for _ in range(count):
                    raw = fh.readline()
                    lineno += 1
                    if not raw:
                        raise MeshFormatError("truncated element data", path, lineno)
                    rows.append(raw.split())
                parsed = _parse_ply_ascii(rows, props, path, lineno)
            else:
                parsed = _parse_ply_binary(fh, count, props, path)
            if name == "vertex":
                names = [p[-1] for p in props]
                try:
                    ix, iy, iz = names.index("x"), names.index("y"), names.index("z")
                except ValueError:
                    raise MeshFormatError("vertex element lacks x/y/z", path)
                verts = np.array(
                    [[row[ix], row[iy], row[iz]] for row in parsed], dtype=np.float64
                ).reshape(-1, 3)
            elif name == "face":
                for row in parsed:
                    for value in row:
                        if isinstance(value, list):
                            faces.extend(_fan(value))
        if verts is None:
            raise MeshFormatError("no vertex element", path)
        for tri in faces:
            if max(tri) >= len(verts) or min(tri) < 0:
                raise MeshFormatError("face index out of range", path)
        return TriangleMesh(verts, faces)


def _parse_ply_ascii(rows, props, path, lineno):
    out = []
    for row in rows:
        values = []
        pos = 0
        for prop in props:
            try:
                if prop[0] == "list":
                    n = int(float(row[pos])); pos += 1
                    values.append([int(float(x)) for x in row[pos:pos + n]])
                    pos += n
                else:
                    values.append(float(row[pos])); pos += 1
            except (ValueError, IndexError):
                raise MeshFormatError("malformed PLY data row", path, lineno)
        out.append(values)
    return out


def _parse_ply_binary(fh, count, props, path):
    out = []
    for _ in range(count):
        values = []
        for prop in props:
            if prop[0] == "list":
                cfmt = _PLY_SCALARS[prop[1]]
                ifmt = _PLY_SCALARS[prop[2]]
                (n,) = struct.unpack("<" + cfmt, _must_read(fh, struct.calcsize(cfmt), path))
                data = _must_read(fh, n * struct.calcsize(ifmt), path)
                values.append(list(struct.unpack("<" + ifmt * n, data)))
            else:
                sfmt = _PLY_SCALARS[prop[1]]
                (v,) = struct.unpack("<" + sfmt, _must_read(fh, struct.calcsize(sfmt), path))
                values.append(v)
        out.append(values)
    return out


def _must_read(fh, n, path):
    data = fh.read(n)
    if len(data) != n:
        raise MeshFormatError("truncated binary PLY data", path=path)
    return data


def _save_ply(mesh: TriangleMesh, path: Path) -> None:
    header = (
        "ply\n"
        "format binary_little_endian 1.0\n"
        f"element vertex {mesh.vertex_count}\n"
        "property double x\nproperty double y\nproperty double z\n"
        f"element face {mesh.triangle_count}\n"
        "property list uchar int32 vertex_indices\n"
        "end_header\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(mesh.vertices, dtype="<f8").tobytes())
        face_dtype = np.dtype([("count", "u1"), ("idx", "<i4", (3,))])
        rows = np.empty(mesh.triangle_count, dtype=face_dtype)
        rows["count"] = 3
        rows["idx"] = mesh.triangles
        fh.write(rows.tobytes())


# ---------------------------------------------------------------- STL

def _load_stl(path: Path) -> TriangleMesh:
    size = os.path.getsize(path)
    with open(path, "rb") as fh:
        head = fh.read(5)
    if head == b"solid":
        # might still be a binary file with a "solid" header; check size math
        try:
            return _load_stl_ascii(path)
        except MeshFormatError:
            pass
    with open(path, "rb") as fh:
        header = fh.read(80)
        if len(header) != 80:
            raise MeshFormatError("binary STL shorter than its header", path=path)
        raw = fh.read(4)
        if len(raw) != 4:
            raise MeshFormatError("binary STL missing facet count", path=path)
        (count,) = struct.unpack("<I", raw)
        if size != 84 + 50 * count:
            raise MeshFormatError(
                f"binary STL size mismatch: {count} facets declared", path=path
            )
        body = fh.read(50 * count)
    facets = np.frombuffer(body, dtype=np.uint8).reshape(count, 50)
    coords = facets[:, :48].copy().view("<f4").reshape(count, 4, 3)[:, 1:, :]
    verts = coords.reshape(-1, 3).astype(np.float64)
    tris = np.arange(3 * count, dtype=np.int64).reshape(count, 3)
    return TriangleMesh(verts, tris)


def _load_stl_ascii(path: Path) -> TriangleMesh:
    verts = []
    with open(path, "r", errors="replace") as fh:
        for lineno, raw in enumerate(fh, start=1):
            parts = raw.split()
            if not parts:
                continue
            if parts[0] == "vertex":
                if len(parts) != 4:
                    raise MeshFormatError("vertex needs 3 coordinates", path, lineno)
                try:
                    verts.append([float(x) for x in parts[1:4]])
                except ValueError:
                    raise MeshFormatError("bad vertex coordinate", path, lineno)
            elif parts[0] not in (
                "solid", "facet", "outer", "endloop", "endfacet", "endsolid", "normal",
            ):
                raise MeshFormatError(f"unexpected STL token {parts[0]!r}", path, lineno)
    if len(verts) % 3 != 0:
        raise MeshFormatError("ASCII STL vertex count not a multiple of 3", path=path)
    tris = np.arange(len(verts), dtype=np.int64).reshape(-1, 3)
    return TriangleMesh(np.array(verts, dtype=np.float64).reshape(-1, 3), tris)


def _save_stl(mesh: TriangleMesh, path: Path) -> None:
    count = mesh.triangle_count
    normals = mesh.face_normals()
    v = mesh.vertices
    t = mesh.triangles
    facets = np.zeros((count, 50), dtype=np.uint8)
    block = np.zeros((count, 4, 3), dtype="<f4")
    block[:, 0] = normals
    block[:, 1] = v[t[:, 0]]
    block[:, 2] = v[t[:, 1]]
    block[:, 3] = v[t[:, 2]]
    facets[:, :48] = np.ascontiguousarray(block.reshape(count, 12)).view(np.uint8)
    with open(path, "wb") as fh:
        fh.write(b"binary stl".ljust(80, b"\0"))
        fh.write(struct.pack("<I", count))
        fh.write(facets.tobytes())
