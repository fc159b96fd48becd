"""Tests for cube partitioning and recombination of voxel clouds."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from voxrefine.errors import DecodeError, DomainError, InputError
from voxrefine.partition import (
    CubeIndex,
    OccupancyCube,
    combine,
    dump_cubes,
    empty_cube,
    load_cubes,
    partition,
)
from voxrefine.pointcloud import PointCloud


def cube_with(index, size, rel_coords):
    cube = empty_cube(CubeIndex(*index), size)
    for x, y, z in rel_coords:
        cube.voxels[x, y, z] = 1
    return cube


class TestPartition:
    def test_single_point_lands_in_floor_div_cube(self):
        # (70,3,5) with 64-cubes: cube (70//64, 0, 0) = (1,0,0), rel (70%64,3,5)
        pc = PointCloud([(70, 3, 5)], depth=7)
        cubes = partition(pc, (64, 64, 64))
        assert len(cubes) == 1
        assert cubes[0].index == CubeIndex(1, 0, 0)
        assert cubes[0].voxels[6, 3, 5] == 1
        assert cubes[0].occupied_count == 1

    def test_empty_cloud_gives_no_cubes(self):
        assert partition(PointCloud([], depth=6), (64, 64, 64)) == []

    def test_boundary_points_split_into_two_cubes(self):
        pc = PointCloud([(0, 0, 0), (63, 63, 63), (64, 0, 0)], depth=7)
        cubes = partition(pc, (64, 64, 64))
        assert [c.index for c in cubes] == [CubeIndex(0, 0, 0), CubeIndex(1, 0, 0)]
        assert cubes[0].occupied_count == 2
        assert cubes[1].occupied_count == 1

    def test_cube_order_is_lexicographic(self):
        pc = PointCloud([(0, 0, 40), (40, 0, 0), (0, 40, 0), (0, 0, 0)], depth=6)
        cubes = partition(pc, (32, 32, 32))
        assert [tuple(c.index) for c in cubes] == [
            (0, 0, 0),
            (0, 0, 1),
            (0, 1, 0),
            (1, 0, 0),
        ]

    def test_anisotropic_cube_size(self):
        pc = PointCloud([(5, 9, 1)], depth=4)
        cubes = partition(pc, (4, 8, 2))
        assert cubes[0].index == CubeIndex(1, 1, 0)
        assert cubes[0].voxels[1, 1, 1] == 1

    def test_occupancy_conserved(self):
        rng = np.random.default_rng(3)
        pts = rng.integers(0, 256, size=(500, 3))
        pc = PointCloud(pts, depth=8)
        cubes = partition(pc, (64, 64, 64))
        assert sum(c.occupied_count for c in cubes) == len(pc)

    def test_invalid_size_rejected(self):
        pc = PointCloud([(0, 0, 0)], depth=1)
        with pytest.raises(DomainError):
            partition(pc, (0, 64, 64))


class TestCombine:
    def test_single_cube_restores_absolute_coordinates(self):
        cube = cube_with((1, 0, 0), (64, 64, 64), [(6, 3, 5)])
        pc = combine([cube], depth=7)
        assert pc.points.tolist() == [[70, 3, 5]]

    def test_empty_list_gives_empty_cloud(self):
        pc = combine([], depth=5)
        assert len(pc) == 0 and pc.depth == 5

    def test_duplicate_index_is_input_error(self):
        a = cube_with((0, 0, 0), (8, 8, 8), [(0, 0, 0)])
        b = cube_with((0, 0, 0), (8, 8, 8), [(1, 1, 1)])
        with pytest.raises(InputError):
            combine([a, b], depth=4)

    def test_mixed_sizes_is_input_error(self):
        a = cube_with((0, 0, 0), (8, 8, 8), [(0, 0, 0)])
        b = cube_with((1, 0, 0), (4, 4, 4), [(1, 1, 1)])
        with pytest.raises(InputError):
            combine([a, b], depth=4)

    def test_overflow_beyond_depth_is_domain_error(self):
        cube = cube_with((3, 0, 0), (8, 8, 8), [(7, 0, 0)])  # abs x = 31
        combine([cube], depth=5)
        with pytest.raises(DomainError):
            combine([cube], depth=4)


class TestRoundTrip:
    @pytest.mark.parametrize("size", [(16, 16, 16), (32, 32, 32), (64, 64, 64)])
    def test_partition_then_combine_is_identity(self, size):
        rng = np.random.default_rng(11)
        pts = rng.integers(0, 512, size=(800, 3))
        pc = PointCloud(pts, depth=9)
        assert combine(partition(pc, size), pc.depth) == pc

    @given(
        st.lists(
            st.tuples(*[st.integers(min_value=0, max_value=127)] * 3),
            max_size=50,
        ),
        st.sampled_from([(8, 8, 8), (16, 16, 16), (4, 8, 16)]),
    )
    @settings(max_examples=50, deadline=None)
    def test_round_trip_property(self, pts, size):
        pc = PointCloud(pts, depth=7)
        assert combine(partition(pc, size), pc.depth) == pc

    def test_cubes_cover_disjoint_regions(self):
        rng = np.random.default_rng(7)
        pts = rng.integers(0, 128, size=(300, 3))
        pc = PointCloud(pts, depth=7)
        cubes = partition(pc, (32, 32, 32))
        seen = set()
        for c in cubes:
            lo = np.array(c.index) * np.array(c.size)
            for rel in c.occupied_coords():
                seen.add(tuple(lo + rel))
        assert seen == set(map(tuple, pc.points.tolist()))


class TestCubeSerialization:
    def test_dump_load_round_trip(self):
        rng = np.random.default_rng(5)
        pts = rng.integers(0, 64, size=(120, 3))
        cubes = partition(PointCloud(pts, depth=6), (16, 16, 16))
        again = load_cubes(dump_cubes(cubes))
        assert len(again) == len(cubes)
        for a, b in zip(cubes, again):
            assert a.index == b.index and a.size == b.size
            assert np.array_equal(a.voxels, b.voxels)

    def test_empty_list_round_trips(self):
        assert load_cubes(dump_cubes([])) == []

    def test_truncated_payload_rejected(self):
        data = dump_cubes([cube_with((0, 0, 0), (8, 8, 8), [(1, 2, 3)])])
        with pytest.raises(DecodeError):
            load_cubes(data[:-3])
