"""Prior-map LIDAR localization fused with GNSS and IMU."""

from .config import PipelineConfig, dump_config, load_config
from .dynamic_icp import RegistrationConfig, RegistrationResult, register, relocalize
from .errors import LocalizationError
from .fusion import FusionConfig, OdomSample, Source, detect_registration_failure, fuse, interpolate_pose
from .geometry import Pose
from .map_store import GlobalMap, PointCloud, load_map, read_cloud, write_cloud
from .pipeline import Mode, Pipeline

__all__ = [
    "PipelineConfig",
    "dump_config",
    "load_config",
    "RegistrationConfig",
    "RegistrationResult",
    "register",
    "relocalize",
    "LocalizationError",
    "FusionConfig",
    "OdomSample",
    "Source",
    "detect_registration_failure",
    "fuse",
    "interpolate_pose",
    "Pose",
    "GlobalMap",
    "PointCloud",
    "load_map",
    "read_cloud",
    "write_cloud",
    "Mode",
    "Pipeline",
]
