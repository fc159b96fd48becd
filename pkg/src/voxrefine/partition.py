"""Splitting a cloud into fixed-size binary occupancy cubes and back.

A point (x, y, z) lands in the cube with global index
(x // l, y // w, z // h) at relative coordinate (x % l, y % w, z % h);
recombination places every occupied voxel back at index * size + relative.
Boundary cubes keep the full (l, w, h) shape with implicit zero padding.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DecodeError, DomainError, InputError
from .pointcloud import PointCloud

DEFAULT_CUBE_SIZE = (64, 64, 64)


class CubeIndex(NamedTuple):
    i: int
    j: int
    k: int


@dataclass
class OccupancyCube:
    """Binary l*w*h grid; ``voxels[x, y, z]`` is 1 iff that cell is occupied."""

    index: CubeIndex
    size: tuple[int, int, int]
    voxels: np.ndarray  # uint8 grid of 0/1, shape == size

    def __post_init__(self):
        self.index = CubeIndex(*self.index)
        self.size = tuple(int(s) for s in self.size)
        vox = np.asarray(self.voxels, dtype=np.uint8)
        if vox.shape != self.size:
            raise DomainError(f"voxel grid shape {vox.shape} != size {self.size}")
        if vox.size and vox.max() > 1:
            raise DomainError("voxel grid values must be 0 or 1")
        self.voxels = vox

    @property
    def occupied_count(self) -> int:
        return int(self.voxels.sum())

    def occupied_coords(self) -> np.ndarray:
        """Relative (x, y, z) coordinates of occupied voxels, lexicographic."""
        return np.argwhere(self.voxels)

    def __eq__(self, other) -> bool:
        if not isinstance(other, OccupancyCube):
            return NotImplemented
        return (
            self.index == other.index
            and self.size == other.size
            and np.array_equal(self.voxels, other.voxels)
        )


def empty_cube(index, size) -> OccupancyCube:
    return OccupancyCube(CubeIndex(*index), tuple(size), np.zeros(size, np.uint8))


def partition(pc: PointCloud, size=DEFAULT_CUBE_SIZE) -> list[OccupancyCube]:
    """Split a cloud into non-empty cubes, ordered lexicographically by index."""
    size = tuple(int(s) for s in size)
    if any(s < 1 for s in size):
        raise DomainError(f"cube size must be >= 1 per axis, got {size}")
    if len(pc) == 0:
        return []
    size_arr = np.array(size, dtype=np.int64)
    cube_idx = pc.points // size_arr
    rel = pc.points - cube_idx * size_arr
    uniq, inverse = np.unique(cube_idx, axis=0, return_inverse=True)
    order = np.argsort(inverse, kind="stable")
    bounds = np.searchsorted(inverse[order], np.arange(len(uniq) + 1))
    cubes = []
    for c in range(len(uniq)):
        sel = order[bounds[c]:bounds[c + 1]]
        grid = np.zeros(size, dtype=np.uint8)
        r = rel[sel]
        grid[r[:, 0], r[:, 1], r[:, 2]] = 1
        cubes.append(OccupancyCube(CubeIndex(*uniq[c]), size, grid))
    return cubes


def combine(cubes: list[OccupancyCube], depth: int) -> PointCloud:
    """Reassemble cubes into a cloud of absolute coordinates index*size + rel."""
    if not cubes:
        return PointCloud(np.empty((0, 3), np.int64), depth)
    size = cubes[0].size
    seen = set()
    for cube in cubes:
        if cube.size != size:
            raise InputError(f"mixed cube sizes: {cube.size} vs {size}")
        if cube.index in seen:
            raise InputError(f"duplicate cube index {tuple(cube.index)}")
        seen.add(cube.index)
    size_arr = np.array(size, dtype=np.int64)
    chunks = []
    for cube in cubes:
        rel = cube.occupied_coords()
        if rel.shape[0]:
            chunks.append(np.array(cube.index, np.int64) * size_arr + rel)
    if not chunks:
        return PointCloud(np.empty((0, 3), np.int64), depth)
    pts = np.concatenate(chunks, axis=0)
    if pts.max() >= (1 << depth):
        raise DomainError(
            f"combined coordinate {int(pts.max())} exceeds depth {depth}"
        )
    return PointCloud(pts, depth)


def dump_cubes(cubes: list[OccupancyCube]) -> bytes:
    """Flat debug dump: per cube a 6-u32 header then the bit-packed grid.

    Header fields are (i, j, k, l, w, h) little-endian; voxel bits are packed
    x-fastest (x varies quickest), MSB first within each byte.
    """
    out = bytearray()
    for cube in cubes:
        out += struct.pack("<6I", *cube.index, *cube.size)
        out += np.packbits(cube.voxels.ravel(order="F")).tobytes()
    return bytes(out)


def load_cubes(data: bytes) -> list[OccupancyCube]:
    cubes = []
    pos = 0
    while pos < len(data):
        if pos + 24 > len(data):
            raise DecodeError(f"truncated cube header at byte {pos}")
        i, j, k, l, w, h = struct.unpack_from("<6I", data, pos)
        pos += 24
        nbits = l * w * h
        nbytes = (nbits + 7) // 8
        if pos + nbytes > len(data):
            raise DecodeError(f"truncated voxel grid at byte {pos}")
        bits = np.unpackbits(
            np.frombuffer(data, np.uint8, count=nbytes, offset=pos), count=nbits
        )
        pos += nbytes
        grid = bits.reshape((l, w, h), order="F").astype(np.uint8)
        cubes.append(OccupancyCube(CubeIndex(i, j, k), (l, w, h), grid))
    return cubes
