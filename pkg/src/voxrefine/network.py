"""Coarse-to-fine occupancy prediction network and the refinement pipeline.

The model maps a binary occupancy cube from the decompressed cloud to a
same-shaped grid of occupancy probabilities. Encoder: stride-2 conv
blocks. Decoder: stride-2 transposed convs with skip concatenation. Each
decoder scale emits a 1-channel pre-activation map; the running sum is
nearest-neighbor upsampled and added to the next scale's map, and one
final sigmoid produces probabilities. Scale maps are summed before the
sigmoid so the result stays a single well-formed probability.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .codec import SideChannel
from .errors import DecodeError, DomainError, InputError, ShapeError
from .partition import DEFAULT_CUBE_SIZE, OccupancyCube, combine, partition
from .pointcloud import PointCloud

DEFAULT_SIGMA = 0.98
MIN_FEATURE_DIM = 2


def worker_count(n_items: int) -> int:
    """Worker cap: VOXREFINE_THREADS if set, else the CPU count."""
    env = os.environ.get("VOXREFINE_THREADS", "").strip()
    if env:
        try:
            cap = int(env)
        except ValueError:
            raise DomainError(f"VOXREFINE_THREADS must be an integer, got {env!r}")
        if cap < 1:
            raise DomainError(f"VOXREFINE_THREADS must be >= 1, got {cap}")
    else:
        cap = os.cpu_count() or 1
    return max(1, min(cap, n_items))


@dataclass(frozen=True)
class UNetConfig:
    """Architecture hyperparameters.

    cube_size must be divisible by 2**levels; when the cube is too small
    for the requested depth the effective level count shrinks so the
    bottleneck feature map keeps a spatial extent of at least 2.
    """

    cube_size: tuple[int, int, int] = DEFAULT_CUBE_SIZE
    levels: int = 4
    base_channels: int = 16
    kernel: int = 3
    multiscale: bool = True
    seed: int = 0

    def __post_init__(self):
        size = tuple(int(s) for s in self.cube_size)
        object.__setattr__(self, "cube_size", size)
        if len(size) != 3 or any(s < 4 for s in size):
            raise DomainError(f"cube size must be three dims >= 4, got {size}")
        if self.levels < 1:
            raise DomainError(f"levels must be >= 1, got {self.levels}")
        if any(s % (1 << self.levels) for s in size):
            raise DomainError(
                f"cube size {size} not divisible by 2^levels = {1 << self.levels}"
            )
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise DomainError(f"kernel must be odd and positive, got {self.kernel}")
        if self.base_channels < 1:
            raise DomainError(f"base_channels must be >= 1, got {self.base_channels}")

    @property
    def effective_levels(self) -> int:
        """Downscaling steps actually used: bottleneck stays >= 2 voxels wide."""
        smallest = min(self.cube_size)
        levels = self.levels
        while levels > 1 and smallest >> levels < MIN_FEATURE_DIM:
            levels -= 1
        return levels

    def to_dict(self) -> dict:
        return {
            "cube_size": ",".join(str(s) for s in self.cube_size),
            "levels": str(self.levels),
            "base_channels": str(self.base_channels),
            "kernel": str(self.kernel),
            "multiscale": str(int(self.multiscale)),
            "seed": str(self.seed),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "UNetConfig":
        try:
            return cls(
                cube_size=tuple(int(v) for v in d["cube_size"].split(",")),
                levels=int(d["levels"]),
                base_channels=int(d["base_channels"]),
                kernel=int(d["kernel"]),
                multiscale=bool(int(d["multiscale"])),
                seed=int(d["seed"]),
            )
        except (KeyError, ValueError) as exc:
            raise DecodeError(f"bad architecture config: {exc}") from None


DESK_CONFIG = UNetConfig(cube_size=(32, 32, 32), base_channels=8)


@dataclass(frozen=True)
class ProbabilityCube:
    """Per-voxel occupancy probabilities for one cube, all strictly in (0,1)."""

    index: tuple
    size: tuple[int, int, int]
    probs: np.ndarray

    def __post_init__(self):
        if self.probs.shape != tuple(self.size):
            raise ShapeError(f"probs shape {self.probs.shape} != size {self.size}")
        if not np.all((self.probs > 0.0) & (self.probs < 1.0)):
            raise DomainError("probabilities must lie strictly inside (0,1)")


def _layer_plan(config: UNetConfig) -> list[tuple[str, tuple, int]]:
    """Canonical (name, shape, fan_in) list; fixes parameter order and init."""
    k = config.kernel
    levels = config.effective_levels
    enc_out = [config.base_channels << i for i in range(levels)]
    plan = []
    in_ch = 1
    for i, out_ch in enumerate(enc_out):
        plan.append((f"enc{i}.weight", (out_ch, in_ch, k, k, k), in_ch * k**3))
        plan.append((f"enc{i}.bias", (out_ch,), 0))
        in_ch = out_ch
    ch = enc_out[-1]
    for u in range(levels):
        up_ch = enc_out[levels - 2 - u] if u < levels - 1 else enc_out[0]
        skip_ch = enc_out[levels - 2 - u] if u < levels - 1 else 1
        plan.append((f"dec{u}.weight", (ch, up_ch, 2, 2, 2), ch * 8))
        plan.append((f"dec{u}.bias", (up_ch,), 0))
        plan.append(
            (f"proj{u}.weight", (up_ch, up_ch + skip_ch, 1, 1, 1), up_ch + skip_ch)
        )
        plan.append((f"proj{u}.bias", (up_ch,), 0))
        if config.multiscale or u == levels - 1:
            plan.append((f"head{u}.weight", (1, up_ch, 1, 1, 1), up_ch))
            plan.append((f"head{u}.bias", (1,), 0))
        ch = up_ch
    return plan


class ModelWeights:
    """Named parameter set tied to the architecture config that shaped it."""

    def __init__(self, config: UNetConfig, params: dict[str, T.Parameter]):
        expected = {name: shape for name, shape, _ in _layer_plan(config)}
        if set(params) != set(expected):
            missing = sorted(set(expected) - set(params))
            extra = sorted(set(params) - set(expected))
            raise ShapeError(
                f"parameter names do not match config (missing {missing}, extra {extra})"
            )
        for name, shape in expected.items():
            if params[name].shape != shape:
                raise ShapeError(
                    f"parameter {name} has shape {params[name].shape}, expected {shape}"
                )
        self.config = config
        self.params = {name: params[name] for name, _, _ in _layer_plan(config)}

    def parameters(self) -> list[T.Parameter]:
        return list(self.params.values())

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.params.values())


def init_weights(config: UNetConfig) -> ModelWeights:
    """He-uniform fan-in weights, zero biases, from a seeded generator."""
    rng = np.random.default_rng(config.seed)
    params = {}
    for name, shape, fan_in in _layer_plan(config):
        if name.endswith(".bias"):
            data = np.zeros(shape)
        else:
            bound = np.sqrt(6.0 / fan_in)
            data = rng.uniform(-bound, bound, size=shape)
        params[name] = T.Parameter(data, name=name)
    return ModelWeights(config, params)


def _net_forward(cfg: UNetConfig, p: dict, x: T.Tensor) -> T.Tensor:
    """Probability tensor (1,l,w,h) from an occupancy tensor of the same shape."""
    levels = cfg.effective_levels
    pad = cfg.kernel // 2
    feats = []
    h = x
    for i in range(levels):
        h = T.relu(T.conv3d(h, p[f"enc{i}.weight"], p[f"enc{i}.bias"],
                            stride=2, padding=pad))
        feats.append(h)
    skips = [x] + feats[:-1]
    h = feats[-1]
    running = None
    for u in range(levels):
        h = T.relu(T.conv3d_transpose(h, p[f"dec{u}.weight"], p[f"dec{u}.bias"],
                                      stride=2))
        h = T.concat([h, skips[levels - 1 - u]], axis=0)
        h = T.relu(T.conv3d(h, p[f"proj{u}.weight"], p[f"proj{u}.bias"]))
        if cfg.multiscale or u == levels - 1:
            scale_map = T.conv3d(h, p[f"head{u}.weight"], p[f"head{u}.bias"])
            if running is None:
                running = scale_map
            else:
                running = T.add(scale_map, T.nearest_upsample(running, 2))
    return T.sigmoid(running)


def _cube_tensor(cube: OccupancyCube) -> T.Tensor:
    return T.Tensor(cube.voxels[None].astype(np.float64))


def forward(weights: ModelWeights, cube: OccupancyCube) -> ProbabilityCube:
    """Predict per-voxel occupancy probabilities for one decoded cube."""
    cfg = weights.config
    if tuple(cube.size) != cfg.cube_size:
        raise ShapeError(f"cube size {cube.size} != model cube size {cfg.cube_size}")
    consts = {name: T.Tensor(p.data) for name, p in weights.params.items()}
    q = _net_forward(cfg, consts, _cube_tensor(cube))
    return ProbabilityCube(index=cube.index, size=cfg.cube_size, probs=q.data[0])


def train(
    pairs: Sequence[tuple[OccupancyCube, OccupancyCube]],
    config: UNetConfig,
    epochs: int,
    lr: float = 0.001,
    batch: int = 64,
    weights: ModelWeights | None = None,
    log=None,
) -> tuple[ModelWeights, list[float]]:
    """Minimize mean binary cross entropy over (decoded, ground-truth) cubes.

    The shuffle schedule is fixed by config.seed, so runs are repeatable.
    Gradients accumulate per batch with a mean seed; one Adam step per
    batch. Returns the weights and the per-epoch mean loss history.
    """
    if not pairs:
        raise InputError("training set is empty")
    if epochs < 1:
        raise DomainError(f"epochs must be >= 1, got {epochs}")
    if batch < 1:
        raise DomainError(f"batch size must be >= 1, got {batch}")
    for cin, cgt in pairs:
        if cin.index != cgt.index:
            raise InputError(
                f"pair misaligned: decoded cube {cin.index} vs ground truth {cgt.index}"
            )
        if tuple(cin.size) != config.cube_size or tuple(cgt.size) != config.cube_size:
            raise InputError(
                f"cube sizes {cin.size}/{cgt.size} do not match config {config.cube_size}"
            )
    if weights is None:
        weights = init_weights(config)
    params = weights.parameters()
    param_map = weights.params
    inputs = [_cube_tensor(cin) for cin, _ in pairs]
    targets = [T.Tensor(cgt.voxels[None].astype(np.float64)) for _, cgt in pairs]
    rng = np.random.default_rng(config.seed)
    history = []
    n = len(pairs)
    for epoch in range(epochs):
        order = rng.permutation(n)
        losses = np.empty(n)
        pos = 0
        for start in range(0, n, batch):
            chunk = order[start:start + batch]
            for i in chunk:
                q = _net_forward(config, param_map, inputs[i])
                loss = T.bce_loss(q, targets[i])
                loss.backward(seed=1.0 / len(chunk))
                losses[pos] = loss.item()
                pos += 1
            T.adam_step(params, lr=lr)
        history.append(float(losses.mean()))
        if log is not None:
            log(epoch, history[-1])
    return weights, history


# ---------------------------------------------------------------------------
# determination strategies

def apply_fixed_threshold(q: ProbabilityCube, sigma: float = DEFAULT_SIGMA) -> OccupancyCube:
    """Occupy voxels whose probability strictly exceeds sigma."""
    if not 0.0 < sigma < 1.0:
        raise DomainError(f"sigma must be in (0,1), got {sigma}")
    vox = (q.probs > sigma).astype(np.uint8)
    return OccupancyCube(index=q.index, size=tuple(q.size), voxels=vox)


def apply_adaptive_threshold(q: ProbabilityCube, k: int) -> OccupancyCube:
    """Occupy exactly the k most probable voxels.

    Ties go to the lexicographically smallest (x,y,z), which is flat index
    order for the row-major grid.
    """
    total = q.probs.size
    if k < 0 or k > total:
        raise InputError(f"k = {k} outside [0, {total}]")
    vox = np.zeros(total, dtype=np.uint8)
    if k:
        order = np.argsort(-q.probs.reshape(-1), kind="stable")
        vox[order[:k]] = 1
    return OccupancyCube(index=q.index, size=tuple(q.size),
                         voxels=vox.reshape(q.probs.shape))


def nni_upsample(pc: PointCloud, levels: int) -> PointCloud:
    """Baseline: expand every coded voxel to all 2^(3n) children of its cell."""
    if levels < 0:
        raise DomainError(f"levels must be >= 0, got {levels}")
    if levels == 0 or len(pc) == 0:
        return pc
    step = 1 << levels
    if np.any(pc.points % step):
        raise InputError(f"coordinates are not multiples of {step}")
    side = np.arange(step, dtype=np.int64)
    offsets = np.stack(np.meshgrid(side, side, side, indexing="ij"), axis=-1)
    offsets = offsets.reshape(-1, 3)
    expanded = (pc.points[:, None, :] + offsets[None, :, :]).reshape(-1, 3)
    return PointCloud(expanded, pc.depth)


# ---------------------------------------------------------------------------
# end-to-end refinement

@dataclass(frozen=True)
class FixedThreshold:
    sigma: float = DEFAULT_SIGMA


@dataclass(frozen=True)
class AdaptiveThreshold:
    counts: tuple[int, ...]

    @classmethod
    def from_side_channel(cls, side: SideChannel) -> "AdaptiveThreshold":
        return cls(counts=tuple(side.counts))


def side_channel_counts(pc_gt: PointCloud, pc_dec: PointCloud,
                        cube_size=None) -> list[int]:
    """Ground-truth point count per non-empty decoded cube, in cube-list order."""
    if cube_size is None:
        cube_size = DEFAULT_CUBE_SIZE
    size = np.asarray(cube_size, dtype=np.int64)
    dec_indices = sorted({tuple(ix) for ix in (pc_dec.points // size)})
    gt_idx, gt_counts = np.unique(pc_gt.points // size, axis=0, return_counts=True)
    lookup = {tuple(ix): int(c) for ix, c in zip(gt_idx, gt_counts)}
    return [lookup.get(ix, 0) for ix in dec_indices]


def refine(pc_dec: PointCloud, weights: ModelWeights, strategy) -> PointCloud:
    """Partition, predict, threshold, and reassemble the refined cloud."""
    cfg = weights.config
    cubes = partition(pc_dec, cfg.cube_size)
    if isinstance(strategy, AdaptiveThreshold):
        counts = strategy.counts
        if len(counts) != len(cubes):
            raise InputError(
                f"side channel has {len(counts)} counts for {len(cubes)} cubes"
            )
        for k in counts:
            if k > int(np.prod(cfg.cube_size)):
                raise InputError(f"count {k} exceeds cube capacity")
    elif not isinstance(strategy, FixedThreshold):
        raise DomainError(f"unknown determination strategy {strategy!r}")

    consts = {name: T.Tensor(p.data) for name, p in weights.params.items()}

    def run(i: int) -> OccupancyCube:
        q_t = _net_forward(cfg, consts, _cube_tensor(cubes[i]))
        q = ProbabilityCube(index=cubes[i].index, size=cfg.cube_size,
                            probs=q_t.data[0])
        if isinstance(strategy, FixedThreshold):
            return apply_fixed_threshold(q, strategy.sigma)
        return apply_adaptive_threshold(q, counts[i])

    workers = worker_count(len(cubes))
    if workers > 1 and len(cubes) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            refined = list(pool.map(run, range(len(cubes))))
    else:
        refined = [run(i) for i in range(len(cubes))]
    refined = [c for c in refined if c.occupied_count]
    return combine(refined, pc_dec.depth)


# ---------------------------------------------------------------------------
# checkpoints

def save_weights(weights: ModelWeights) -> bytes:
    return T.write_checkpoint(weights.config.to_dict(), weights.parameters())


def load_weights(data: bytes) -> ModelWeights:
    config_dict, arrays = T.read_checkpoint(data)
    config = UNetConfig.from_dict(config_dict)
    plan = _layer_plan(config)
    expected = {name for name, _, _ in plan}
    if set(arrays) != expected:
        missing = sorted(expected - set(arrays))
        extra = sorted(set(arrays) - expected)
        raise DecodeError(
            f"checkpoint parameters do not match config (missing {missing}, extra {extra})"
        )
    params = {}
    for name, shape, _ in plan:
        if arrays[name].shape != shape:
            raise DecodeError(
                f"checkpoint parameter {name} has shape {arrays[name].shape}, "
                f"expected {shape}"
            )
        params[name] = T.Parameter(arrays[name], name=name)
    return ModelWeights(config, params)


def save_weights_file(path, weights: ModelWeights) -> None:
    with open(path, "wb") as fh:
        fh.write(save_weights(weights))


def load_weights_file(path) -> ModelWeights:
    with open(path, "rb") as fh:
        return load_weights(fh.read())
