"""Photo-realistic robot camera simulation from spherical panorama grids."""

from .cache import (
    CacheConfig,
    CacheStats,
    PanoCache,
    PanoDecodeError,
    PrefetchPlan,
    max_speed,
    predict_cells,
    simulate_trajectory,
)
from .dataset import (
    DatasetError,
    DatasetManifest,
    EquirectPanorama,
    GridIndex,
    PanoRecord,
    angular_resolution,
    decimate,
    load_manifest,
    load_panorama,
    save_manifest,
    synth_pano,
    validate,
)
from .geometry import (
    CameraIntrinsics,
    Direction3,
    Orientation,
    SphereAngles,
    TexCoord,
    angles_to_dir,
    angles_to_tex,
    bilinear_sample,
    dir_to_angles,
    pixel_ray,
    ray_sphere_exit,
    rotate,
)
from .renderer import (
    CameraPose,
    Frame,
    RenderRequest,
    composite_over,
    image_mae,
    image_psnr,
    render,
    select_panorama,
    sphere_offset,
)

__version__ = "0.1.0"
