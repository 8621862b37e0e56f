"""Multimodal 3D volume registration with certified invertible warps."""

from .config import RunConfig, dump_config, dumps_config, load_config, loads_config
from .errors import (
    CertificateError,
    ConfigError,
    CorruptHeaderError,
    DegenerateImageError,
    DimensionalityError,
    GridMismatchError,
    GtEmptyError,
    NiftiError,
    NonConvergentError,
    PhantomSpecError,
    UnsupportedDatatypeError,
    VoxRegError,
)
from .fusion import FusedVolume, fuse
from .metrics import (
    ClassMetrics,
    Hd95Config,
    MetricsReport,
    agnostic_dsc,
    agnostic_iou,
    dsc_per_class,
    evaluate,
    hd95,
    hd95_directed,
    iou_per_class,
)
from .nifti import read_field, read_fused, read_labels, read_nifti, read_volume, write_nifti
from .phantom import (
    IdentityWarp,
    Phantom,
    PhantomSpec,
    RigidWarp,
    ShiftWarp,
    SinusoidWarp,
    Structure,
    make_phantom,
    preset,
    truth_field,
)
from .registration import (
    RegistrationResult,
    StageConfig,
    SynState,
    TraceRecord,
    apply_transform,
    finalize_syn,
    register_parametric,
    register_pipeline,
    syn_iteration,
)
from .similarity import SimilarityConfig, cc_fields, cc_force, cc_score, local_mean
from .transforms import (
    AffineParams,
    DiffeomorphicMap,
    DisplacementField,
    InversionConfig,
    RigidParams,
    TranslationParams,
    apply_point,
    compose_fields,
    euler_step,
    invert_field,
    params_to_field,
    resample_field,
    smooth_field,
    warp_volume,
)
from .volume import (
    GridMeta,
    LabelMap,
    Volume,
    build_pyramid,
    gaussian_smooth,
    resample_to_grid,
    sample_nearest,
    sample_trilinear,
    spatial_gradient,
)

__version__ = "0.1.0"

__all__ = [
    "AffineParams",
    "CertificateError",
    "ClassMetrics",
    "ConfigError",
    "CorruptHeaderError",
    "DegenerateImageError",
    "DiffeomorphicMap",
    "DimensionalityError",
    "DisplacementField",
    "FusedVolume",
    "GridMeta",
    "GridMismatchError",
    "GtEmptyError",
    "Hd95Config",
    "IdentityWarp",
    "InversionConfig",
    "LabelMap",
    "MetricsReport",
    "NiftiError",
    "NonConvergentError",
    "Phantom",
    "PhantomSpec",
    "PhantomSpecError",
    "RegistrationResult",
    "RigidParams",
    "RigidWarp",
    "RunConfig",
    "ShiftWarp",
    "SimilarityConfig",
    "SinusoidWarp",
    "StageConfig",
    "Structure",
    "SynState",
    "TraceRecord",
    "TranslationParams",
    "UnsupportedDatatypeError",
    "Volume",
    "VoxRegError",
    "agnostic_dsc",
    "agnostic_iou",
    "apply_point",
    "apply_transform",
    "build_pyramid",
    "cc_fields",
    "cc_force",
    "cc_score",
    "compose_fields",
    "dsc_per_class",
    "dump_config",
    "dumps_config",
    "euler_step",
    "evaluate",
    "finalize_syn",
    "fuse",
    "gaussian_smooth",
    "hd95",
    "hd95_directed",
    "invert_field",
    "iou_per_class",
    "load_config",
    "loads_config",
    "local_mean",
    "make_phantom",
    "params_to_field",
    "preset",
    "read_field",
    "read_fused",
    "read_labels",
    "read_nifti",
    "read_volume",
    "register_parametric",
    "register_pipeline",
    "resample_field",
    "resample_to_grid",
    "sample_nearest",
    "sample_trilinear",
    "smooth_field",
    "spatial_gradient",
    "syn_iteration",
    "truth_field",
    "warp_volume",
    "write_nifti",
]
