"""Stain-aware augmentation and patch curation for pathology image corpora.

The package covers the data side of self-supervised pretraining on H&E
slides: per-image color statistics in HSV/LAB/HED, corpus-level stain models
(per-variable Gaussians and a full-covariance mixture), Reinhard-style stain
augmentation, a seeded augmentation pipeline, and multi-magnification patch
curation with foreground masking and quality filters. A `pathaug` console
command wires the pieces into a reproducible workflow.
"""

from .augment import (
    STRONG_JITTER,
    WEAK_JITTER,
    AugmentPipeline,
    AugmentStep,
    adjust_brightness,
    adjust_contrast,
    adjust_hue,
    adjust_saturation,
    apply_pipeline,
    choose_space,
    color_jitter,
    grayscale,
    hed_light,
    hed_shift,
    horizontal_flip,
    load_pipeline,
    pipeline_from_dict,
    pipeline_to_dict,
    preset_pipeline,
    randstainna,
    reinhard_normalize,
    save_pipeline,
    solarize,
    vertical_flip,
)
from .colorspace import (
    ColorSpace,
    FloatPlanes,
    StainMatrix,
    default_stain_matrix,
    from_space,
    hed_to_rgb,
    hsv_to_rgb,
    lab_to_rgb,
    rgb_to_hed,
    rgb_to_hsv,
    rgb_to_lab,
    to_space,
)
from .curate import (
    LevelSummary,
    Mask,
    PatchManifest,
    PatchRecord,
    SlideLevel,
    assemble_tiles,
    curate_corpus,
    foreground_mask,
    mask_from_image,
    mean_saturation,
    mean_sq_laplacian,
    otsu_threshold,
    select_patches,
    write_manifest,
)
from .errors import (
    ConfigError,
    DecodeError,
    DegenerateComponent,
    DuplicateLevel,
    EmptyCorpus,
    InsufficientData,
    IoError,
    ModelMissingSpace,
    OutOfBounds,
    PathaugError,
    SchemaError,
    ShapeError,
    SpaceMismatch,
    TooSmall,
    WrongSpace,
)
from .raster import RasterImage, crop, load_png, quantize, save_png
from .rng import derive_rng
from .stainstats import (
    ChannelStats,
    GmmStainModel,
    SpaceModels,
    StainModelFile,
    UnimodalStainModel,
    fit_gmm,
    fit_unimodal,
    image_stats,
    load_model,
    sample_target_stats,
    save_model,
)

__version__ = "0.1.0"
