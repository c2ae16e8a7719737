"""Sketch-guided 3D Gaussian splatting on the CPU.

A differentiable tile rasterizer with an analytic backward pass, orbit
cameras, guidance-image losses (colour, score distillation, contour
features) and a multi-view Adam fitting loop.
"""
from .backward import GradientSet, finite_diff_check, render_backward
from .camera import (
    CameraExtrinsics,
    CameraIntrinsics,
    Circle,
    OrbitPose,
    orbit_to_extrinsics,
    pose_schedule,
    pose_weight,
    project_point,
    projection_jacobian,
)
from .config import ParamGroupConfig, RunConfig, TrainConfig, load_config, save_config
from .errors import (
    BehindCameraError,
    FitError,
    FormatError,
    InvalidParameterError,
    LengthError,
    MissingEntryError,
    PreconditionError,
    ProtocolError,
    SplatError,
)
from .gaussians import GaussianScene, covariance_from, prune, random_scene, sh_eval
from .guidance import (
    GuidanceSet,
    distribution_transfer,
    distribution_transfer_backward,
    load_guidance,
    save_guidance,
    synthetic_guidance,
)
from .images import read_image, write_image
from .losses import (
    CommandNoiseProvider,
    GuidanceTargetProvider,
    MockNoiseProvider,
    SobelPyramidEncoder,
    color_loss,
    edge_sketch,
    sds_grad,
    sketch_loss,
)
from .metrics import psnr, ssim
from .optim import AdamState, adam_step, init_from_pointcloud, init_sphere
from .render import RenderConfig, render, render_reference
from .scene_io import load_scene, save_scene
from .train import fit, read_metrics_log

__version__ = "0.1.0"
