"""Geometry refinement for decompressed voxelized point clouds.

Pipeline: partition the decoded cloud into fixed-size occupancy cubes,
predict per-voxel occupancy probabilities with a coarse-to-fine 3D conv
network, binarize with a fixed or adaptive (top-k) threshold, and
recombine. A built-in octree codec simulator, D1/PSNR metrics, BD-PSNR,
and synthetic surface generators make the whole loop self-contained.
"""

from .codec import (RatePoint, SideChannel, compress_lossless,
                    decode_side_channel, decompress_lossless, downscale,
                    encode_side_channel, octree_decode, octree_encode,
                    quantize_decode, rate_point)
from .errors import (DecodeError, DomainError, InputError, ParseError,
                     SchemaError, ShapeError, VoxRefineError)
from .metrics import (BDReport, D1Result, RDCurve, bd_psnr, bd_report, d1_mse,
                      d1_psnr, per_point_errors)
from .network import (AdaptiveThreshold, DESK_CONFIG, FixedThreshold,
                      ModelWeights, ProbabilityCube, UNetConfig,
                      apply_adaptive_threshold, apply_fixed_threshold, forward,
                      init_weights, load_weights, load_weights_file,
                      nni_upsample, refine, save_weights, save_weights_file,
                      side_channel_counts, train)
from .partition import (CubeIndex, DEFAULT_CUBE_SIZE, OccupancyCube, combine,
                        dump_cubes, empty_cube, load_cubes, partition)
from .pointcloud import (PointCloud, min_depth, read_ply, read_ply_file,
                         write_ply, write_ply_file)
from .synth import (SynthSpec, cloud_pairs, generate, make_training_set,
                    parse_spec_file, parse_spec_line)
from .tensor import Parameter, Tensor, adam_step, bce_loss, conv3d, \
    conv3d_transpose, grad_check, nearest_upsample, relu, sigmoid

__version__ = "0.1.0"

__all__ = [
    "AdaptiveThreshold", "BDReport", "CubeIndex", "D1Result", "DESK_CONFIG",
    "DEFAULT_CUBE_SIZE", "DecodeError", "DomainError", "FixedThreshold",
    "InputError", "ModelWeights", "OccupancyCube", "ParseError", "Parameter",
    "PointCloud", "ProbabilityCube", "RDCurve", "RatePoint", "SchemaError",
    "ShapeError", "SideChannel", "SynthSpec", "Tensor", "UNetConfig",
    "VoxRefineError", "adam_step", "apply_adaptive_threshold",
    "apply_fixed_threshold", "bce_loss", "bd_psnr", "bd_report",
    "cloud_pairs", "combine", "compress_lossless", "conv3d",
    "conv3d_transpose", "d1_mse", "d1_psnr", "decode_side_channel",
    "decompress_lossless", "downscale", "dump_cubes", "empty_cube",
    "encode_side_channel", "forward", "generate", "grad_check",
    "init_weights", "load_cubes", "load_weights", "load_weights_file",
    "make_training_set", "min_depth", "nearest_upsample", "nni_upsample",
    "octree_decode", "octree_encode", "parse_spec_file", "parse_spec_line",
    "partition", "per_point_errors", "quantize_decode", "rate_point",
    "read_ply", "read_ply_file", "refine", "relu", "save_weights",
    "save_weights_file", "side_channel_counts", "sigmoid", "train",
    "write_ply", "write_ply_file",
]
