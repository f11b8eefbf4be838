"""Tracks, triangulation, rig-aware initialization and bundle adjustment."""

from .bundle import bundle_adjust, huber, prune, reprojection_errors
from .metrics import compute_metrics
from .model import BundleReport, Reconstruction, SfmConfig, Track
from .tracks import build_tracks
from .triangulation import triangulate, triangulate_observations
from .initialize import PairGeometry, extrinsics_from_pairs, initialize
