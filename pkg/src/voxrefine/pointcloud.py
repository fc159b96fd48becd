"""Integer-voxel point clouds and PLY serialization.

A cloud is a duplicate-free set of non-negative integer voxel coordinates
plus the bit depth of the grid it lives on.  Points are stored as an (N, 3)
int64 array in lexicographic (x, y, z) order so that equality, hashing and
file output are deterministic.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError, ParseError, SchemaError

DEPTH_COMMENT = "voxel_depth"

# scalar PLY property types we can read (name -> numpy little-endian dtype)
_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "<i2", "int16": "<i2",
    "ushort": "<u2", "uint16": "<u2",
    "int": "<i4", "int32": "<i4",
    "uint": "<u4", "uint32": "<u4",
    "float": "<f4", "float32": "<f4",
    "double": "<f8", "float64": "<f8",
}


class PointCloud:
    """Canonical voxelized point cloud: sorted, unique, bounds-checked."""

    __slots__ = ("points", "depth")

    def __init__(self, points, depth: int):
        pts = np.asarray(points, dtype=np.int64)
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise DomainError(f"points must be an (N, 3) array, got shape {pts.shape}")
        if depth < 1:
            raise DomainError(f"depth must be a positive integer, got {depth}")
        if pts.shape[0] > 0:
            if pts.min() < 0:
                raise DomainError("negative voxel coordinate")
            if pts.max() >= (1 << depth):
                raise DomainError(
                    f"coordinate {int(pts.max())} out of range for depth {depth}"
                )
            pts = np.unique(pts, axis=0)  # sorts lexicographically by (x, y, z)
        pts.setflags(write=False)
        self.points = pts
        self.depth = int(depth)

    def __len__(self) -> int:
        return self.points.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, PointCloud):
            return NotImplemented
        return self.depth == other.depth and np.array_equal(self.points, other.points)

    def __hash__(self) -> int:
        return hash((self.depth, self.points.tobytes()))

    def __repr__(self) -> str:
        return f"PointCloud({len(self)} points, depth={self.depth})"


def min_depth(points) -> int:
    """Smallest bit depth that fits every coordinate (1 for an empty cloud)."""
    pts = np.asarray(points, dtype=np.int64)
    if pts.size == 0:
        return 1
    return max(1, int(pts.max()).bit_length())


def _round_half_away(values: np.ndarray) -> np.ndarray:
    # np.round ties to even; PLY floats are normalized half-away-from-zero
    return np.where(values >= 0, np.floor(values + 0.5), np.ceil(values - 0.5))


def read_ply(data: bytes, depth: int | None = None) -> PointCloud:
    """Parse an ASCII or binary-little-endian PLY vertex list into a cloud.

    Float coordinates are rounded half-away-from-zero.  Depth resolution
    order: explicit ``depth`` argument, then a ``voxel_depth`` header
    comment, then the minimal depth that fits the data.
    """
    end_marker = b"end_header\n"
    end = data.find(end_marker)
    if end < 0:
        raise ParseError("missing end_header (byte offset 0)")
    header = data[:end]
    body = data[end + len(end_marker):]

    try:
        lines = header.decode("ascii").split("\n")
    except UnicodeDecodeError as exc:
        raise ParseError(f"non-ASCII header (byte offset {exc.start})") from None

    offset = 0
    fmt = None
    comment_depth = None
    elements: list[tuple[str, int, list[tuple[str, str]]]] = []
    for line in lines:
        tokens = line.split()
        if offset == 0:
            if tokens != ["ply"]:
                raise ParseError("not a PLY file (byte offset 0)")
        elif not tokens or tokens[0] == "obj_info":
            pass
        elif tokens[0] == "comment":
            rest = line.split(None, 1)[1] if len(tokens) > 1 else ""
            if rest.startswith(DEPTH_COMMENT + "="):
                try:
                    comment_depth = int(rest.split("=", 1)[1])
                except ValueError:
                    raise ParseError(
                        f"bad {DEPTH_COMMENT} comment (byte offset {offset})"
                    ) from None
        elif tokens[0] == "format":
            if tokens[1:] == ["ascii", "1.0"]:
                fmt = "ascii"
            elif tokens[1:] == ["binary_little_endian", "1.0"]:
                fmt = "binary"
            else:
                raise ParseError(f"unsupported format line (byte offset {offset})")
        elif tokens[0] == "element":
            if len(tokens) != 3:
                raise ParseError(f"malformed element line (byte offset {offset})")
            try:
                count = int(tokens[2])
            except ValueError:
                raise ParseError(
                    f"bad element count {tokens[2]!r} (byte offset {offset})"
                ) from None
            elements.append((tokens[1], count, []))
        elif tokens[0] == "property":
            if not elements:
                raise ParseError(f"property before element (byte offset {offset})")
            if tokens[1] == "list":
                elements[-1][2].append(("list", tokens[-1]))
            elif len(tokens) == 3:
                elements[-1][2].append((tokens[1], tokens[2]))
            else:
                raise ParseError(f"malformed property line (byte offset {offset})")
        else:
            raise ParseError(
                f"unrecognized header line {tokens[0]!r} (byte offset {offset})"
            )
        offset += len(line) + 1

    if fmt is None:
        raise ParseError(f"missing format line (byte offset {offset})")
    if not elements or elements[0][0] != "vertex":
        raise SchemaError("PLY has no leading vertex element")
    _, count, props = elements[0]
    names = [name for _, name in props]
    for axis in ("x", "y", "z"):
        if axis not in names:
            raise SchemaError(f"vertex element missing property {axis!r}")
    if any(ptype == "list" for ptype, _ in props):
        raise SchemaError("list properties in vertex element are unsupported")
    for ptype, name in props:
        if ptype not in _PLY_TYPES:
            raise SchemaError(f"unsupported property type {ptype!r} for {name!r}")

    if fmt == "ascii":
        tokens = body.split()
        ncols = len(props)
        if len(tokens) < count * ncols:
            raise ParseError(
                f"expected {count * ncols} vertex values, found {len(tokens)} "
                f"(byte offset {end + len(end_marker)})"
            )
        try:
            table = np.array(tokens[: count * ncols], dtype=np.float64)
        except ValueError:
            raise ParseError(
                f"non-numeric vertex data (byte offset {end + len(end_marker)})"
            ) from None
        table = table.reshape(count, ncols)
        coords = table[:, [names.index("x"), names.index("y"), names.index("z")]]
    else:
        dtype = np.dtype([(name, _PLY_TYPES[ptype]) for ptype, name in props])
        need = count * dtype.itemsize
        if len(body) < need:
            raise ParseError(
                f"vertex data truncated: need {need} bytes, have {len(body)} "
                f"(byte offset {end + len(end_marker)})"
            )
        rows = np.frombuffer(body, dtype=dtype, count=count)
        coords = np.stack(
            [rows["x"], rows["y"], rows["z"]], axis=1
        ).astype(np.float64)

    rounded = _round_half_away(coords)
    if rounded.size and rounded.min() < 0:
        raise DomainError("negative coordinate after rounding")
    pts = rounded.astype(np.int64)

    if depth is None:
        depth = comment_depth if comment_depth is not None else min_depth(pts)
    return PointCloud(pts, depth)


def write_ply(pc: PointCloud, format: str = "ascii") -> bytes:
    """Serialize a cloud; vertices go out in canonical order as 32-bit floats."""
    if format not in ("ascii", "binary"):
        raise DomainError(f"unknown PLY format {format!r}")
    fmt_line = "ascii 1.0" if format == "ascii" else "binary_little_endian 1.0"
    header = (
        "ply\n"
        f"format {fmt_line}\n"
        f"comment {DEPTH_COMMENT}={pc.depth}\n"
        f"element vertex {len(pc)}\n"
        "property float x\n"
        "property float y\n"
        "property float z\n"
        "end_header\n"
    ).encode("ascii")
    if format == "ascii":
        body = "".join(f"{x} {y} {z}\n" for x, y, z in pc.points).encode("ascii")
    else:
        body = pc.points.astype("<f4").tobytes()
    return header + body


def read_ply_file(path) -> PointCloud:
    with open(path, "rb") as fh:
        return read_ply(fh.read())


def write_ply_file(path, pc: PointCloud, format: str = "ascii") -> None:
    with open(path, "wb") as fh:
        fh.write(write_ply(pc, format))
