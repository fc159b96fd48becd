"""Deterministic synthetic voxel surfaces for training and evaluation.

All shapes are thin shells (sphere, torus, box wireframe, rough terrain
crust), so coarse quantization merges neighbors the way it does on dense
surface scans. Randomness comes from a counter-style integer hash of the
voxel coordinates and the seed, so a spec generates the same cloud
everywhere, with no generator state to carry.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .codec import quantize_decode
from .errors import InputError, ParseError
from .partition import DEFAULT_CUBE_SIZE, empty_cube, partition
from .pointcloud import PointCloud

SHAPES = ("sphere", "torus", "box-frame", "fractal-noise-surface")


@dataclass(frozen=True)
class SynthSpec:
    shape: str
    depth: int
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise InputError(f"unknown shape {self.shape!r}; choose from {SHAPES}")
        if not 1 <= self.depth <= 16:
            raise InputError(f"depth {self.depth} outside the supported range 1..16")


# ---------------------------------------------------------------------------
# hash noise

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix(h: np.ndarray) -> np.ndarray:
    h = (h ^ (h >> np.uint64(30))) * _M1
    h = (h ^ (h >> np.uint64(27))) * _M2
    return h ^ (h >> np.uint64(31))


def _hash_unit(x, y, z, seed: int) -> np.ndarray:
    """Deterministic pseudo-random values in [-1, 1) per integer lattice site."""
    mask = (1 << 64) - 1
    seed_word = np.uint64((int(seed) * 0xD6E8FEB86659FD93 + 1) & mask)
    h = (
        np.asarray(x, dtype=np.uint64) * np.uint64(0x9E3779B97F4A7C15)
        ^ np.asarray(y, dtype=np.uint64) * np.uint64(0xC2B2AE3D27D4EB4F)
        ^ np.asarray(z, dtype=np.uint64) * np.uint64(0x165667B19E3779F9)
        ^ seed_word
    )
    return (_mix(h) >> np.uint64(11)).astype(np.float64) / float(1 << 53) * 2.0 - 1.0


# ---------------------------------------------------------------------------
# shapes

def _param(params: dict, key: str, default=None):
    if key in params:
        return params[key]
    if default is None:
        raise InputError(f"missing required parameter {key!r}")
    return default


def _center(params: dict, depth: int) -> np.ndarray:
    mid = float(1 << (depth - 1))
    c = _param(params, "center", (mid, mid, mid))
    c = np.atleast_1d(np.asarray(c, dtype=np.float64))
    if c.shape == (1,):
        c = np.repeat(c, 3)
    if c.shape != (3,):
        raise InputError(f"center must have 3 components, got {c}")
    return c


def _shell_sphere(spec: SynthSpec) -> np.ndarray:
    p = spec.params
    radius = float(_param(p, "radius"))
    if radius <= 0:
        raise InputError(f"radius must be positive, got {radius}")
    thickness = float(p.get("thickness", 1.0))
    jitter = float(p.get("jitter", 0.5))
    c = _center(p, spec.depth)
    limit = 1 << spec.depth
    margin = thickness / 2 + jitter + 1
    x_lo = max(0, int(np.floor(c[0] - radius - margin)))
    x_hi = min(limit - 1, int(np.ceil(c[0] + radius + margin)))
    yy_lo = max(0, int(np.floor(c[1] - radius - margin)))
    yy_hi = min(limit - 1, int(np.ceil(c[1] + radius + margin)))
    zz_lo = max(0, int(np.floor(c[2] - radius - margin)))
    zz_hi = min(limit - 1, int(np.ceil(c[2] + radius + margin)))
    ys = np.arange(yy_lo, yy_hi + 1, dtype=np.int64)
    zs = np.arange(zz_lo, zz_hi + 1, dtype=np.int64)
    gy, gz = np.meshgrid(ys, zs, indexing="ij")
    chunks = []
    for x in range(x_lo, x_hi + 1):
        dist = np.sqrt((x - c[0]) ** 2 + (gy - c[1]) ** 2 + (gz - c[2]) ** 2)
        r_eff = radius + jitter * _hash_unit(x, gy, gz, spec.seed)
        mask = np.abs(dist - r_eff) <= thickness / 2
        if mask.any():
            sel_y = gy[mask]
            sel_z = gz[mask]
            pts = np.stack([np.full_like(sel_y, x), sel_y, sel_z], axis=1)
            chunks.append(pts)
    return np.concatenate(chunks, axis=0) if chunks else np.empty((0, 3), np.int64)


def _shell_torus(spec: SynthSpec) -> np.ndarray:
    p = spec.params
    major = float(_param(p, "major"))
    minor = float(_param(p, "minor"))
    if major <= 0 or minor <= 0:
        raise InputError(f"torus radii must be positive, got {major}, {minor}")
    thickness = float(p.get("thickness", 1.0))
    jitter = float(p.get("jitter", 0.5))
    c = _center(p, spec.depth)
    limit = 1 << spec.depth
    reach = major + minor + thickness / 2 + jitter + 1
    x_lo = max(0, int(np.floor(c[0] - reach)))
    x_hi = min(limit - 1, int(np.ceil(c[0] + reach)))
    ys = np.arange(max(0, int(np.floor(c[1] - reach))),
                   min(limit - 1, int(np.ceil(c[1] + reach))) + 1, dtype=np.int64)
    zreach = minor + thickness / 2 + jitter + 1
    zs = np.arange(max(0, int(np.floor(c[2] - zreach))),
                   min(limit - 1, int(np.ceil(c[2] + zreach))) + 1, dtype=np.int64)
    gy, gz = np.meshgrid(ys, zs, indexing="ij")
    chunks = []
    for x in range(x_lo, x_hi + 1):
        ring = np.sqrt((x - c[0]) ** 2 + (gy - c[1]) ** 2) - major
        dist = np.sqrt(ring**2 + (gz - c[2]) ** 2)
        r_eff = minor + jitter * _hash_unit(x, gy, gz, spec.seed)
        mask = np.abs(dist - r_eff) <= thickness / 2
        if mask.any():
            sel_y = gy[mask]
            sel_z = gz[mask]
            chunks.append(np.stack([np.full_like(sel_y, x), sel_y, sel_z], axis=1))
    return np.concatenate(chunks, axis=0) if chunks else np.empty((0, 3), np.int64)


def _box_frame(spec: SynthSpec) -> np.ndarray:
    """Wireframe cube edges: exactly 12*side - 16 voxels for side >= 2."""
    p = spec.params
    side = int(_param(p, "side"))
    if side < 2:
        raise InputError(f"box-frame side must be >= 2, got {side}")
    limit = 1 << spec.depth
    default_o = (limit - side) // 2
    origin = p.get("origin", (default_o, default_o, default_o))
    origin = np.atleast_1d(np.asarray(origin, dtype=np.int64))
    if origin.shape == (1,):
        origin = np.repeat(origin, 3)
    if np.any(origin < 0) or np.any(origin + side > limit):
        raise InputError(
            f"box-frame at origin {tuple(origin)} side {side} leaves depth-{spec.depth} bounds"
        )
    t = np.arange(side, dtype=np.int64)
    zero = np.zeros(side, dtype=np.int64)
    last = np.full(side, side - 1, dtype=np.int64)
    edges = []
    for a, b in ((zero, zero), (zero, last), (last, zero), (last, last)):
        edges.append(np.stack([t, a, b], axis=1))
        edges.append(np.stack([a, t, b], axis=1))
        edges.append(np.stack([a, b, t], axis=1))
    return np.concatenate(edges, axis=0) + origin


def _fractal_surface(spec: SynthSpec) -> np.ndarray:
    """Rough heightfield z = base + layered value noise, filled t voxels deep."""
    p = spec.params
    amplitude = float(_param(p, "amplitude"))
    if amplitude <= 0:
        raise InputError(f"amplitude must be positive, got {amplitude}")
    octaves = int(p.get("octaves", 3))
    if octaves < 1:
        raise InputError(f"octaves must be >= 1, got {octaves}")
    thickness = int(p.get("thickness", 2))
    if thickness < 1:
        raise InputError(f"thickness must be >= 1, got {thickness}")
    limit = 1 << spec.depth
    base = float(p.get("base", limit // 2))
    cell = int(p.get("cell", max(2, limit // 8)))
    if cell < 2:
        raise InputError(f"cell must be >= 2, got {cell}")

    xs = np.arange(limit, dtype=np.int64)
    gx, gy = np.meshgrid(xs, xs, indexing="ij")
    height = np.full(gx.shape, base, dtype=np.float64)
    amp = amplitude
    c = cell
    for o in range(octaves):
        ix, fx = gx // c, (gx % c) / c
        iy, fy = gy // c, (gy % c) / c
        n00 = _hash_unit(ix, iy, o, spec.seed)
        n10 = _hash_unit(ix + 1, iy, o, spec.seed)
        n01 = _hash_unit(ix, iy + 1, o, spec.seed)
        n11 = _hash_unit(ix + 1, iy + 1, o, spec.seed)
        top = n00 * (1 - fx) + n10 * fx
        bot = n01 * (1 - fx) + n11 * fx
        height += amp * (top * (1 - fy) + bot * fy)
        amp /= 2.0
        c = max(2, c // 2)
    height = np.clip(np.round(height), thickness - 1, limit - 1).astype(np.int64)
    cols = height - (thickness - 1)
    pts = np.empty((gx.size * thickness, 3), dtype=np.int64)
    flat_x = np.repeat(gx.reshape(-1), thickness)
    flat_y = np.repeat(gy.reshape(-1), thickness)
    flat_z = (
        np.repeat(cols.reshape(-1), thickness)
        + np.tile(np.arange(thickness, dtype=np.int64), gx.size)
    )
    pts[:, 0] = flat_x
    pts[:, 1] = flat_y
    pts[:, 2] = flat_z
    return pts


_GENERATORS = {
    "sphere": _shell_sphere,
    "torus": _shell_torus,
    "box-frame": _box_frame,
    "fractal-noise-surface": _fractal_surface,
}


def generate(spec: SynthSpec) -> PointCloud:
    """Build the cloud a spec describes; identical spec+seed, identical cloud."""
    pts = _GENERATORS[spec.shape](spec)
    if pts.shape[0] == 0:
        raise InputError(
            f"{spec.shape} with params {spec.params} generated an empty cloud"
        )
    return PointCloud(pts, spec.depth)


# ---------------------------------------------------------------------------
# training pairs

def cloud_pairs(pc: PointCloud, coded_depths, cube_size=DEFAULT_CUBE_SIZE):
    """(decoded, ground-truth) cube pairs for one cloud over several rates.

    Pairs follow the decoded cloud's non-empty cube list; a decoded cube
    with no ground-truth twin gets an all-zero target.
    """
    coded_depths = list(coded_depths)
    if not coded_depths:
        raise InputError("no coded depths given")
    for d in coded_depths:
        if not 1 <= d <= pc.depth:
            raise InputError(f"coded depth {d} outside [1, {pc.depth}]")
    gt_cubes = {c.index: c for c in partition(pc, cube_size)}
    pairs = []
    for d in coded_depths:
        dec = quantize_decode(pc, d)
        for cube in partition(dec, cube_size):
            gt = gt_cubes.get(cube.index)
            if gt is None:
                gt = empty_cube(cube.index, cube_size)
            pairs.append((cube, gt))
    return pairs


def make_training_set(specs, gt_depth: int, coded_depths,
                      cube_size=DEFAULT_CUBE_SIZE):
    """Cube pairs pooled over shapes and rates.

    Every shape is generated at gt_depth, coded at each depth in
    coded_depths, and both clouds are cut into aligned cube pairs.
    """
    pairs = []
    for spec in specs:
        pc = generate(dataclasses.replace(spec, depth=gt_depth))
        pairs.extend(cloud_pairs(pc, coded_depths, cube_size))
    if not pairs:
        raise InputError("no training pairs were produced")
    return pairs


# ---------------------------------------------------------------------------
# spec files

def _parse_value(text: str):
    if "," in text:
        return tuple(float(v) for v in text.split(","))
    return float(text)


def parse_spec_line(line: str) -> SynthSpec:
    """One generator per line: `shape depth=8 key=value ...`."""
    fields = line.split()
    shape = fields[0]
    if shape not in SHAPES:
        raise ParseError(f"unknown shape {shape!r}; choose from {SHAPES}")
    params = {}
    depth = None
    seed = 0
    for tok in fields[1:]:
        key, sep, value = tok.partition("=")
        if not sep:
            raise ParseError(f"expected key=value, got {tok!r}")
        try:
            if key == "depth":
                depth = int(value)
            elif key == "seed":
                seed = int(value)
            else:
                params[key] = _parse_value(value)
        except ValueError:
            raise ParseError(f"bad value for {key!r}: {value!r}") from None
    if depth is None:
        raise ParseError(f"line {line!r} is missing depth=")
    try:
        return SynthSpec(shape=shape, depth=depth, params=params, seed=seed)
    except InputError as exc:
        raise ParseError(str(exc)) from None


def parse_spec_file(text: str) -> list[SynthSpec]:
    specs = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            specs.append(parse_spec_line(line))
        except ParseError as exc:
            raise ParseError(f"spec line {lineno}: {exc}") from None
    if not specs:
        raise ParseError("spec file defines no generators")
    return specs
