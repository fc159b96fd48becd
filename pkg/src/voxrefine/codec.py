"""Octree geometry codec simulator and the adaptive-threshold side channel.

Stands in for a reference octree coder: quantization to a lower coded depth
models the lossy path, a breadth-first occupancy-byte octree plus a
general-purpose lossless compressor gives honest (internally comparable)
bit counts, and per-cube ground-truth point counts travel in a compact
varint side channel.
"""

from __future__ import annotations

import lzma
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DecodeError, DomainError, ParseError
from .pointcloud import PointCloud

OCTREE_MAGIC = b"VOCT"
SIDE_MAGIC = b"VCNT"


@dataclass(frozen=True)
class RatePoint:
    """One rate measurement: total geometry bits and bits per ground-truth point."""

    bits: int
    bpp: float
    target_depth: int


@dataclass(frozen=True)
class SideChannel:
    """Per-cube ground-truth point counts plus their compressed payload."""

    counts: tuple[int, ...]
    payload: bytes
    bits: int


# ---------------------------------------------------------------------------
# quantization

def quantize_decode(pc: PointCloud, target_depth: int, center: bool = False) -> PointCloud:
    """Simulate coding at a lower depth: floor-divide, merge, rescale.

    Output coordinates are multiples of 2^(d - d') at the original depth d
    (the low corner of each merged cell); ``center=True`` instead lands on
    the cell midpoint.
    """
    if target_depth < 1 or target_depth > pc.depth:
        raise DomainError(
            f"target depth {target_depth} outside [1, {pc.depth}]"
        )
    shift = pc.depth - target_depth
    down = np.unique(pc.points >> shift, axis=0)
    up = down << shift
    if center:
        up = up + (1 << shift) // 2
    return PointCloud(up, pc.depth)


def downscale(pc: PointCloud, target_depth: int) -> PointCloud:
    """The coded-domain cloud at depth d' (no rescale back)."""
    if target_depth < 1 or target_depth > pc.depth:
        raise DomainError(
            f"target depth {target_depth} outside [1, {pc.depth}]"
        )
    shift = pc.depth - target_depth
    return PointCloud(pc.points >> shift, target_depth)


# ---------------------------------------------------------------------------
# lossless byte compressor (pluggable LZMA-class backend)

def compress_lossless(data: bytes) -> bytes:
    return lzma.compress(data, format=lzma.FORMAT_ALONE, preset=6)


def decompress_lossless(data: bytes) -> bytes:
    try:
        return lzma.decompress(data, format=lzma.FORMAT_ALONE)
    except (lzma.LZMAError, EOFError) as exc:
        raise ParseError(f"corrupt compressed stream: {exc}") from None


# ---------------------------------------------------------------------------
# breadth-first occupancy-byte octree

def _morton(points: np.ndarray, depth: int) -> np.ndarray:
    """Interleave coordinate bits x-major, so code & 7 == 4dx + 2dy + dz."""
    code = np.zeros(points.shape[0], dtype=np.uint64)
    x = points[:, 0].astype(np.uint64)
    y = points[:, 1].astype(np.uint64)
    z = points[:, 2].astype(np.uint64)
    for bit in range(depth):
        code |= ((x >> np.uint64(bit)) & np.uint64(1)) << np.uint64(3 * bit + 2)
        code |= ((y >> np.uint64(bit)) & np.uint64(1)) << np.uint64(3 * bit + 1)
        code |= ((z >> np.uint64(bit)) & np.uint64(1)) << np.uint64(3 * bit)
    return code


def _unmorton(codes: np.ndarray, depth: int) -> np.ndarray:
    pts = np.zeros((codes.shape[0], 3), dtype=np.int64)
    for bit in range(depth):
        pts[:, 0] |= ((codes >> np.uint64(3 * bit + 2)) & np.uint64(1)).astype(np.int64) << bit
        pts[:, 1] |= ((codes >> np.uint64(3 * bit + 1)) & np.uint64(1)).astype(np.int64) << bit
        pts[:, 2] |= ((codes >> np.uint64(3 * bit)) & np.uint64(1)).astype(np.int64) << bit
    return pts


def octree_occupancy_bytes(pc: PointCloud) -> bytes:
    """Raw occupancy stream: one byte per internal node, breadth-first.

    Child bit order within a byte is MSB-first by child index
    4*dx + 2*dy + dz, so a lone (0, 0, 0) path emits 0b10000000 per level.
    """
    if len(pc) == 0:
        return b""
    d = pc.depth
    codes = _morton(pc.points, d)
    out = bytearray()
    for level in range(1, d + 1):
        cells = np.unique(codes >> np.uint64(3 * (d - level)))
        parents = cells >> np.uint64(3)
        child = (cells & np.uint64(7)).astype(np.int64)
        uniq_parents, inverse = np.unique(parents, return_inverse=True)
        occ = np.zeros(len(uniq_parents), dtype=np.uint8)
        np.bitwise_or.at(occ, inverse, (0x80 >> child).astype(np.uint8))
        out += occ.tobytes()
    return bytes(out)


def _points_from_occupancy(raw: bytes, depth: int) -> np.ndarray:
    nodes = np.zeros(1, dtype=np.uint64)  # root
    pos = 0
    for _level in range(1, depth + 1):
        n = len(nodes)
        if pos + n > len(raw):
            raise DecodeError(
                f"occupancy stream truncated at node {pos} (need {pos + n} bytes)"
            )
        occ = np.frombuffer(raw, np.uint8, count=n, offset=pos)
        pos += n
        if np.any(occ == 0):
            bad = pos - n + int(np.argmax(occ == 0))
            raise DecodeError(f"internal node without children at node {bad}")
        # expand each set bit into a child code, preserving BFS order
        bits = np.unpackbits(occ.reshape(-1, 1), axis=1)  # MSB first
        parent_rep, child = np.nonzero(bits)
        nodes = (nodes[parent_rep] << np.uint64(3)) | child.astype(np.uint64)
    if pos != len(raw):
        raise DecodeError(f"{len(raw) - pos} trailing bytes after node {pos}")
    return _unmorton(nodes, depth)


def octree_encode(pc: PointCloud) -> bytes:
    """Container: magic, u8 depth, u64 raw occupancy length, compressed payload."""
    if pc.depth > 255:
        raise DomainError(f"depth {pc.depth} exceeds the u8 header field")
    raw = octree_occupancy_bytes(pc)
    return (
        OCTREE_MAGIC
        + struct.pack("<BQ", pc.depth, len(raw))
        + compress_lossless(raw)
    )


def octree_decode(data: bytes) -> PointCloud:
    if len(data) < 13 or data[:4] != OCTREE_MAGIC:
        raise ParseError("not an octree stream (bad magic)")
    depth, raw_len = struct.unpack_from("<BQ", data, 4)
    raw = decompress_lossless(data[13:])
    if len(raw) != raw_len:
        raise DecodeError(
            f"occupancy length mismatch: header says {raw_len}, got {len(raw)}"
        )
    if raw_len == 0:
        return PointCloud(np.empty((0, 3), np.int64), depth)
    return PointCloud(_points_from_occupancy(raw, depth), depth)


# ---------------------------------------------------------------------------
# varint side channel

def encode_uvarint(value: int) -> bytes:
    if value < 0:
        raise DomainError(f"cannot varint-encode negative value {value}")
    out = bytearray()
    while value > 0x7F:
        out.append((value & 0x7F) | 0x80)
        value >>= 7
    out.append(value)
    return bytes(out)


def decode_uvarint(data: bytes, offset: int = 0) -> tuple[int, int]:
    result = 0
    shift = 0
    pos = offset
    while True:
        if pos >= len(data):
            raise DecodeError(f"incomplete varint at byte {offset}")
        byte = data[pos]
        pos += 1
        result |= (byte & 0x7F) << shift
        shift += 7
        if not byte & 0x80:
            return result, pos - offset
        if shift > 63:
            raise DecodeError(f"varint too large at byte {offset}")


def encode_side_channel(counts) -> SideChannel:
    """Pack per-cube point counts: magic, u32 cube count, compressed varints."""
    counts = tuple(int(c) for c in counts)
    raw = b"".join(encode_uvarint(c) for c in counts)
    payload = SIDE_MAGIC + struct.pack("<I", len(counts)) + compress_lossless(raw)
    return SideChannel(counts=counts, payload=payload, bits=8 * len(payload))


def decode_side_channel(payload: bytes) -> list[int]:
    if len(payload) < 8 or payload[:4] != SIDE_MAGIC:
        raise ParseError("not a side-channel stream (bad magic)")
    (n,) = struct.unpack_from("<I", payload, 4)
    raw = decompress_lossless(payload[8:])
    counts = []
    pos = 0
    for _ in range(n):
        value, used = decode_uvarint(raw, pos)
        counts.append(value)
        pos += used
    if pos != len(raw):
        raise DecodeError(f"{len(raw) - pos} trailing bytes in side channel")
    return counts


# ---------------------------------------------------------------------------
# rate measurement

def rate_point(
    pc_gt: PointCloud, target_depth: int, center: bool = False
) -> tuple[PointCloud, RatePoint]:
    """Code at d', returning the distorted cloud and its measured rate.

    Bits are the compressed octree cost of the depth-d' cloud; bpp is
    normalized by the ground-truth point count.
    """
    if len(pc_gt) == 0:
        raise DomainError("cannot rate an empty cloud")
    decoded = quantize_decode(pc_gt, target_depth, center=center)
    stream = octree_encode(downscale(pc_gt, target_depth))
    bits = 8 * len(stream)
    return decoded, RatePoint(bits=bits, bpp=bits / len(pc_gt), target_depth=target_depth)
