"""Collaborative multi-camera person detection by sharing early convolutional feature digests."""

from .evalkit import PRF, MatchResult, evaluate, iou, match_detections, prf_metrics, relative_gain
from .fuse import GridSpec, Homography, fuse_digest, fuse_digests, warp_bilinear
from .netsim import NodeConfig, SimScenario, TimingProfile, feasible_pair, feasibility_sweep, run_simulation
from .scene import cross_view_homography, generate_world, render_view
from .summarize import C_A, C_L, Digest, build_digest, decode_digest, encode_digest
from .tensorcore import DetectionBox, build_toy_net, conv2d, detect_blobs, forward_with_taps
from .trace import FusionParams, FusionPlan, build_fusion_plan

__version__ = "0.1.0"
