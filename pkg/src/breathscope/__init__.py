"""Breathing-rate estimation from a stereo camera watching the chest.

Frames are rectified, matched into disparity maps, reprojected into point
clouds, aligned to a reference with ICP, and reduced to a depth-change
signal whose spectrum and peaks give the breath count.
"""

from .calib import PinholeIntrinsics, RectificationMaps, StereoRig, compute_rectification, load_calibration
from .cloud import NeighborIndex, PointCloud, RoiBox
from .errors import BreathscopeError
from .frameio import FrameSequence, StereoFrame, load_frame_sequence
from .icp import IcpParams, IcpResult, RigidTransform, icp_align
from .pipeline import AnalysisResult, PipelineConfig, analyze, write_outputs
from .respsignal import BreathReport, RespSeries
from .stereo import DisparityMap, MatchParams, compute_disparity, filter_disparity

__all__ = [
    "AnalysisResult", "BreathReport", "BreathscopeError", "DisparityMap", "FrameSequence", "IcpParams",
    "IcpResult", "MatchParams", "NeighborIndex", "PinholeIntrinsics", "PipelineConfig", "PointCloud",
    "RectificationMaps", "RespSeries", "RigidTransform", "RoiBox", "StereoFrame", "StereoRig", "analyze",
    "compute_disparity", "compute_rectification", "filter_disparity", "icp_align", "load_calibration",
    "load_frame_sequence", "write_outputs",
]
