"""Tests for the octree rate simulator, lossless backend, and side channel."""

import lzma
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from voxrefine.codec import (
    OCTREE_MAGIC,
    SIDE_MAGIC,
    compress_lossless,
    decode_side_channel,
    decode_uvarint,
    decompress_lossless,
    downscale,
    encode_side_channel,
    encode_uvarint,
    octree_decode,
    octree_encode,
    octree_occupancy_bytes,
    quantize_decode,
    rate_point,
)
from voxrefine.errors import DecodeError, DomainError, ParseError
from voxrefine.pointcloud import PointCloud


def ref_occupancy_bytes(points, depth):
    """Reference octree byte stream via an explicit breadth-first queue.

    Children are visited in index order 4*dx + 2*dy + dz and flagged with
    bit 0x80 >> index; the production code vectorizes this with sorted
    interleaved codes, so an explicit queue is an independent route.
    """
    out = []
    level_cells = [(0, 0, 0)]
    pts = set(map(tuple, points))
    for level in range(1, depth + 1):
        shift = depth - level
        cells = {(x >> shift, y >> shift, z >> shift) for (x, y, z) in pts}
        nxt = []
        for px, py, pz in level_cells:
            byte = 0
            for ci in range(8):
                dx, dy, dz = (ci >> 2) & 1, (ci >> 1) & 1, ci & 1
                child = (2 * px + dx, 2 * py + dy, 2 * pz + dz)
                if child in cells:
                    byte |= 0x80 >> ci
                    nxt.append(child)
            out.append(byte)
        level_cells = nxt
    return bytes(out)


class TestQuantizeDecode:
    def test_halving_floors_then_doubles(self):
        pc = PointCloud([(511, 2, 7)], depth=10)
        out = quantize_decode(pc, 9)
        assert out.points.tolist() == [[510, 2, 6]]
        assert out.depth == 10

    def test_same_depth_is_identity(self):
        pc = PointCloud([(3, 1, 4), (1, 5, 2)], depth=3)
        assert quantize_decode(pc, 3) == pc

    def test_neighbors_merge(self):
        pc = PointCloud([(4, 4, 4), (5, 5, 5)], depth=3)
        out = quantize_decode(pc, 2)
        assert out.points.tolist() == [[4, 4, 4]]

    def test_center_flag_shifts_by_half_step(self):
        pc = PointCloud([(4, 4, 4), (5, 5, 5)], depth=3)
        out = quantize_decode(pc, 2, center=True)
        assert out.points.tolist() == [[5, 5, 5]]

    def test_target_deeper_than_source_rejected(self):
        with pytest.raises(DomainError):
            quantize_decode(PointCloud([(0, 0, 0)], depth=3), 4)

    def test_outputs_are_multiples_of_step(self):
        rng = np.random.default_rng(0)
        pc = PointCloud(rng.integers(0, 256, (300, 3)), depth=8)
        for d in (5, 6, 7):
            out = quantize_decode(pc, d)
            step = 1 << (8 - d)
            assert np.all(out.points % step == 0)
            assert len(out) <= len(pc)

    def test_downscale_keeps_low_depth_coordinates(self):
        pc = PointCloud([(511, 2, 7)], depth=10)
        low = downscale(pc, 9)
        assert low.points.tolist() == [[255, 1, 3]]
        assert low.depth == 9


class TestOccupancyBytes:
    def test_single_origin_point_depth3(self):
        pc = PointCloud([(0, 0, 0)], depth=3)
        assert octree_occupancy_bytes(pc) == bytes([0x80, 0x80, 0x80])

    def test_full_depth1_cube(self):
        pts = [(x, y, z) for x in (0, 1) for y in (0, 1) for z in (0, 1)]
        pc = PointCloud(pts, depth=1)
        assert octree_occupancy_bytes(pc) == bytes([0xFF])

    def test_corner_point_sets_lowest_bit(self):
        pc = PointCloud([(1, 1, 1)], depth=1)
        assert octree_occupancy_bytes(pc) == bytes([0x01])

    def test_child_bit_order_x_major(self):
        # (1,0,0) -> child index 4, bit 0x80 >> 4 = 0x08
        assert octree_occupancy_bytes(PointCloud([(1, 0, 0)], depth=1)) == b"\x08"
        # (0,1,0) -> index 2 -> 0x20; (0,0,1) -> index 1 -> 0x40
        assert octree_occupancy_bytes(PointCloud([(0, 1, 0)], depth=1)) == b"\x20"
        assert octree_occupancy_bytes(PointCloud([(0, 0, 1)], depth=1)) == b"\x40"

    @given(
        st.lists(
            st.tuples(*[st.integers(min_value=0, max_value=31)] * 3),
            min_size=1,
            max_size=40,
        )
    )
    @settings(max_examples=60, deadline=None)
    def test_matches_breadth_first_reference(self, pts):
        pc = PointCloud(pts, depth=5)
        assert octree_occupancy_bytes(pc) == ref_occupancy_bytes(pc.points, 5)

    def test_byte_count_equals_internal_node_count(self):
        rng = np.random.default_rng(1)
        pc = PointCloud(rng.integers(0, 64, (200, 3)), depth=6)
        stream = octree_occupancy_bytes(pc)
        expected = 0
        for level in range(pc.depth):
            shift = pc.depth - level
            expected += len(np.unique(pc.points >> shift, axis=0))
        assert len(stream) == expected


class TestOctreeStream:
    def test_round_trip_random(self):
        rng = np.random.default_rng(2)
        pc = PointCloud(rng.integers(0, 1024, (500, 3)), depth=10)
        assert octree_decode(octree_encode(pc)) == pc

    def test_round_trip_empty(self):
        pc = PointCloud([], depth=4)
        assert octree_decode(octree_encode(pc)) == pc

    def test_header_layout(self):
        pc = PointCloud([(0, 0, 0)], depth=3)
        data = octree_encode(pc)
        assert data[:4] == OCTREE_MAGIC
        depth, raw_len = struct.unpack_from("<BQ", data, 4)
        assert depth == 3 and raw_len == 3
        assert decompress_lossless(data[13:]) == bytes([0x80, 0x80, 0x80])

    def test_bad_magic_is_parse_error(self):
        with pytest.raises(ParseError):
            octree_decode(b"NOPE" + b"\x00" * 16)

    def test_truncated_stream_is_decode_error(self):
        data = octree_encode(PointCloud([(5, 1, 2)], depth=4))
        with pytest.raises((DecodeError, ParseError)):
            octree_decode(data[:-2])

    def test_corrupt_payload_names_node_position(self):
        pc = PointCloud([(0, 0, 0)], depth=3)
        raw = bytes([0x80, 0x80])  # one byte short of the declared depth
        body = compress_lossless(raw)
        data = OCTREE_MAGIC + struct.pack("<BQ", 3, len(raw)) + body
        with pytest.raises(DecodeError) as info:
            octree_decode(data)
        assert "node" in str(info.value)

    @given(
        st.lists(
            st.tuples(*[st.integers(min_value=0, max_value=255)] * 3),
            max_size=50,
        )
    )
    @settings(max_examples=50, deadline=None)
    def test_round_trip_property(self, pts):
        pc = PointCloud(pts, depth=8)
        assert octree_decode(octree_encode(pc)) == pc


class TestLossless:
    def test_empty_round_trip(self):
        assert decompress_lossless(compress_lossless(b"")) == b""

    def test_zeros_compress_small(self):
        out = compress_lossless(b"\x00" * 10000)
        assert len(out) < 200

    def test_random_round_trip(self):
        blob = np.random.default_rng(3).integers(0, 256, 1024).astype(np.uint8)
        assert decompress_lossless(compress_lossless(blob.tobytes())) == blob.tobytes()

    def test_corrupt_stream_rejected(self):
        with pytest.raises(ParseError):
            decompress_lossless(b"definitely not a compressed stream")


class TestVarints:
    @pytest.mark.parametrize(
        "value,encoded",
        [
            (0, b"\x00"),
            (1, b"\x01"),
            (127, b"\x7f"),
            (128, b"\x80\x01"),
            (300, b"\xac\x02"),
            (16384, b"\x80\x80\x01"),
        ],
    )
    def test_known_encodings(self, value, encoded):
        assert encode_uvarint(value) == encoded
        assert decode_uvarint(encoded, 0) == (value, len(encoded))

    @given(st.integers(min_value=0, max_value=2**63 - 1))
    @settings(max_examples=100, deadline=None)
    def test_round_trip(self, v):
        data = encode_uvarint(v)
        assert decode_uvarint(data, 0) == (v, len(data))

    def test_unterminated_varint_rejected(self):
        with pytest.raises(DecodeError):
            decode_uvarint(b"\x80\x80", 0)

    def test_overlong_varint_rejected(self):
        with pytest.raises(DecodeError):
            decode_uvarint(b"\xff" * 11, 0)


class TestSideChannel:
    def test_single_zero_round_trips(self):
        sc = encode_side_channel([0])
        assert decode_side_channel(sc.payload) == [0]
        assert sc.counts == (0,)

    def test_mixed_counts_round_trip(self):
        sc = encode_side_channel([4096, 1, 300])
        assert decode_side_channel(sc.payload) == [4096, 1, 300]
        assert sc.bits == 8 * len(sc.payload)

    def test_payload_layout(self):
        sc = encode_side_channel([7])
        assert sc.payload[:4] == SIDE_MAGIC
        (count,) = struct.unpack_from("<I", sc.payload, 4)
        assert count == 1

    def test_negative_count_rejected(self):
        with pytest.raises(DomainError):
            encode_side_channel([3, -1])

    @given(st.lists(st.integers(min_value=0, max_value=70000), max_size=200))
    @settings(max_examples=40, deadline=None)
    def test_round_trip_property(self, counts):
        sc = encode_side_channel(counts)
        assert decode_side_channel(sc.payload) == list(counts)


class TestRatePoint:
    def test_identity_depth_is_lossless(self):
        rng = np.random.default_rng(4)
        pc = PointCloud(rng.integers(0, 128, (200, 3)), depth=7)
        decoded, rp = rate_point(pc, 7)
        assert decoded == pc
        assert rp.target_depth == 7
        assert rp.bits == 8 * len(octree_encode(pc))
        assert rp.bpp == rp.bits / len(pc)

    def test_bits_monotone_in_depth(self):
        rng = np.random.default_rng(5)
        pc = PointCloud(rng.integers(0, 256, (2000, 3)), depth=8)
        bits = [rate_point(pc, d)[1].bits for d in range(3, 9)]
        assert all(a <= b for a, b in zip(bits, bits[1:]))

    def test_empty_cloud_rejected(self):
        with pytest.raises(DomainError):
            rate_point(PointCloud([], depth=4), 3)
