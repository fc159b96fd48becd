"""Tests for the integer-voxel point cloud type and PLY serialization."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from voxrefine.errors import DomainError, ParseError, SchemaError
from voxrefine.pointcloud import (
    PointCloud,
    min_depth,
    read_ply,
    write_ply,
)


def ascii_ply(rows, extra_header=(), count=None):
    """Build a minimal ASCII PLY byte string from coordinate rows."""
    n = len(rows) if count is None else count
    header = [
        "ply",
        "format ascii 1.0",
        *extra_header,
        f"element vertex {n}",
        "property float x",
        "property float y",
        "property float z",
        "end_header",
    ]
    body = [" ".join(str(v) for v in r) for r in rows]
    return ("\n".join(header + body) + "\n").encode("ascii")


class TestPointCloudType:
    def test_sorts_and_dedupes(self):
        pc = PointCloud([(5, 5, 5), (0, 1, 2), (5, 5, 5), (0, 0, 9)], depth=4)
        assert pc.points.tolist() == [[0, 0, 9], [0, 1, 2], [5, 5, 5]]
        assert len(pc) == 3

    def test_points_are_read_only(self):
        pc = PointCloud([(1, 2, 3)], depth=2)
        with pytest.raises(ValueError):
            pc.points[0, 0] = 7

    def test_negative_coordinate_rejected(self):
        with pytest.raises(DomainError):
            PointCloud([(0, -1, 0)], depth=4)

    def test_coordinate_must_fit_depth(self):
        PointCloud([(15, 0, 0)], depth=4)
        with pytest.raises(DomainError):
            PointCloud([(16, 0, 0)], depth=4)

    def test_depth_must_be_positive(self):
        with pytest.raises(DomainError):
            PointCloud([], depth=0)

    def test_equality_includes_depth(self):
        a = PointCloud([(1, 2, 3)], depth=4)
        b = PointCloud([(1, 2, 3)], depth=4)
        c = PointCloud([(1, 2, 3)], depth=5)
        assert a == b and hash(a) == hash(b)
        assert a != c

    def test_empty_cloud(self):
        pc = PointCloud([], depth=3)
        assert len(pc) == 0
        assert pc.points.shape == (0, 3)


class TestMinDepth:
    def test_empty_defaults_to_one(self):
        assert min_depth([]) == 1

    def test_single_origin_point(self):
        assert min_depth([(0, 0, 0)]) == 1

    @pytest.mark.parametrize(
        "coord,depth", [(1, 1), (2, 2), (3, 2), (511, 9), (512, 10), (1023, 10)]
    )
    def test_power_of_two_boundaries(self, coord, depth):
        assert min_depth([(coord, 0, 0)]) == depth


class TestReadPly:
    def test_minimal_ascii(self):
        pc = read_ply(ascii_ply([(0, 0, 0), (1, 2, 3)]))
        assert pc.points.tolist() == [[0, 0, 0], [1, 2, 3]]
        assert pc.depth == 2  # max coordinate 3 needs two bits

    def test_duplicate_vertices_collapse(self):
        pc = read_ply(ascii_ply([(5, 5, 5), (5, 5, 5)]))
        assert pc.points.tolist() == [[5, 5, 5]]

    def test_float_rounding_half_away_from_zero(self):
        # 2.6 -> 3, 0.4 -> 0, 1.5 -> 2 (ties round away from zero, not to even)
        pc = read_ply(ascii_ply([(2.6, 0.4, 1.5)]))
        assert pc.points.tolist() == [[3, 0, 2]]

    def test_tie_rounding_is_not_bankers(self):
        pc = read_ply(ascii_ply([(0.5, 2.5, 4.5)]))
        assert pc.points.tolist() == [[1, 3, 5]]

    def test_negative_after_rounding_is_domain_error(self):
        with pytest.raises(DomainError):
            read_ply(ascii_ply([(-0.6, 0, 0)]))

    def test_small_negative_rounds_to_zero(self):
        pc = read_ply(ascii_ply([(-0.4, 0, 0)]))
        assert pc.points.tolist() == [[0, 0, 0]]

    def test_depth_comment_wins_over_inference(self):
        data = ascii_ply([(1, 0, 0)], extra_header=["comment voxel_depth=10"])
        assert read_ply(data).depth == 10

    def test_caller_depth_wins_over_comment(self):
        data = ascii_ply([(1, 0, 0)], extra_header=["comment voxel_depth=10"])
        assert read_ply(data, depth=12).depth == 12

    def test_unordered_input_is_canonicalized(self):
        pc = read_ply(ascii_ply([(9, 9, 9), (0, 0, 1), (0, 0, 0)]))
        assert pc.points.tolist() == [[0, 0, 0], [0, 0, 1], [9, 9, 9]]

    def test_extra_vertex_properties_are_ignored(self):
        header = [
            "ply",
            "format ascii 1.0",
            "element vertex 1",
            "property float x",
            "property float y",
            "property float z",
            "property uchar red",
            "end_header",
            "1 2 3 255",
        ]
        pc = read_ply(("\n".join(header) + "\n").encode())
        assert pc.points.tolist() == [[1, 2, 3]]

    def test_bad_magic_is_parse_error(self):
        with pytest.raises(ParseError):
            read_ply(b"obj\nnot a ply\n")

    def test_missing_coordinate_property_is_schema_error(self):
        header = [
            "ply",
            "format ascii 1.0",
            "element vertex 1",
            "property float x",
            "property float y",
            "end_header",
            "1 2",
        ]
        with pytest.raises(SchemaError):
            read_ply(("\n".join(header) + "\n").encode())

    def test_truncated_body_is_parse_error(self):
        data = ascii_ply([(0, 0, 0)], count=2)
        with pytest.raises(ParseError):
            read_ply(data)

    def test_parse_error_carries_byte_offset(self):
        err = None
        try:
            read_ply(b"ply\nformat ascii 2.0\nend_header\n")
        except ParseError as e:
            err = e
        assert err is not None
        assert "offset" in str(err)


class TestWritePly:
    def test_empty_cloud_round_trips(self):
        pc = PointCloud([], depth=4)
        for fmt in ("ascii", "binary"):
            again = read_ply(write_ply(pc, fmt))
            assert again == pc

    def test_depth_comment_survives(self):
        pc = PointCloud([(1023, 0, 0)], depth=10)
        data = write_ply(pc, "ascii")
        assert b"comment voxel_depth=10" in data
        assert read_ply(data).depth == 10

    def test_binary_is_little_endian_format(self):
        pc = PointCloud([(1, 2, 3)], depth=2)
        assert b"format binary_little_endian 1.0" in write_ply(pc, "binary")

    def test_vertices_in_lexicographic_order(self):
        pc = PointCloud([(2, 0, 0), (0, 3, 1), (0, 0, 5)], depth=3)
        text = write_ply(pc, "ascii").decode()
        body = text.split("end_header\n")[1].strip().splitlines()
        assert body == ["0 0 5", "0 3 1", "2 0 0"]

    def test_unknown_format_rejected(self):
        pc = PointCloud([(0, 0, 0)], depth=1)
        with pytest.raises(DomainError):
            write_ply(pc, "utf16")


coords = st.integers(min_value=0, max_value=255)
point_lists = st.lists(st.tuples(coords, coords, coords), max_size=60)


class TestRoundTripProperties:
    @given(point_lists)
    @settings(max_examples=60, deadline=None)
    def test_ascii_round_trip(self, pts):
        pc = PointCloud(pts, depth=8)
        assert read_ply(write_ply(pc, "ascii")) == pc

    @given(point_lists)
    @settings(max_examples=60, deadline=None)
    def test_binary_round_trip(self, pts):
        pc = PointCloud(pts, depth=8)
        assert read_ply(write_ply(pc, "binary")) == pc

    @given(point_lists.filter(lambda p: len(p) > 0))
    @settings(max_examples=40, deadline=None)
    def test_inferred_depth_is_minimal(self, pts):
        data = ascii_ply(pts)
        pc = read_ply(data)
        top = int(pc.points.max())
        assert top < (1 << pc.depth)
        assert pc.depth == 1 or top >= (1 << (pc.depth - 1))
