from .episodes import EpisodeStep, RawEpisode, MARKER_ORDER
from .export import export_diffusion, export_vla
from .generate import CollectionPlan, PlanMismatchError, generate_demos
from .imaging import (
    DIFFUSION_CROP_SIZE,
    DIFFUSION_INPUT_SIZE,
    VLA_CAM1_SIZE,
    VLA_CAM2_SIZE,
    VLA_OUTPUT_SIZE,
    WrongInputSizeError,
    augment_diffusion_image,
    crop,
    preprocess_vla_images,
    resize_bilinear,
)
from .segment import (
    DIFFUSION_SIGMA_TAIL,
    MissingMarkersError,
    SegmentTooShortError,
    TrainingSample,
    segment_for_diffusion,
    segment_for_vla,
)
from .validate import ValidationReport, Violation, validate_dataset

__all__ = [
    "EpisodeStep",
    "RawEpisode",
    "MARKER_ORDER",
    "export_diffusion",
    "export_vla",
    "CollectionPlan",
    "PlanMismatchError",
    "generate_demos",
    "DIFFUSION_CROP_SIZE",
    "DIFFUSION_INPUT_SIZE",
    "VLA_CAM1_SIZE",
    "VLA_CAM2_SIZE",
    "VLA_OUTPUT_SIZE",
    "WrongInputSizeError",
    "augment_diffusion_image",
    "crop",
    "preprocess_vla_images",
    "resize_bilinear",
    "DIFFUSION_SIGMA_TAIL",
    "MissingMarkersError",
    "SegmentTooShortError",
    "TrainingSample",
    "segment_for_diffusion",
    "segment_for_vla",
    "ValidationReport",
    "Violation",
    "validate_dataset",
]
