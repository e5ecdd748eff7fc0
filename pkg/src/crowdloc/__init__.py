"""Crowd localisation in camera space from one wide-angle image."""
from .geometry import CameraIntrinsics, GroundPlane, project, reverse_project_to_ground
from .calib import CalibConfig, PersonAxis, estimate_camera_ground
from .tiling import CropBox, TilingConfig, plan_crops
from .skeleton import Skeleton2D
from .detect import DetectorCapability, deduplicate
from .upright import build_upright_frame, upright_to_camera
from .synth import SceneSpec, generate_scene
from .pipeline import PipelineConfig, reconstruct_all, run_iterative_cropping

__version__ = "0.1.0"
