"""Haze synthesis toolkit.

Turns clean driving images plus depth maps into physically plausible hazy
counterparts (transmission from depth, convex blend toward a global
airlight), as an offline dataset builder, an online per-sample augmentation
service, and a detection-metrics evaluator.
"""

__version__ = "0.1.0"

from .core import (
    BASELINE_T_RANGE,
    T_FLOOR,
    HazeParams,
    compose_haze,
    constant_transmission_haze,
    depth_to_transmission,
    invert_haze,
    quantize,
    random_transmission_baseline,
)
from .dataset import (
    AppliedParams,
    Manifest,
    MixPolicy,
    SampleRecord,
    discover_samples,
    run_batch,
    synthesize_one,
)
from .depth_io import (
    DepthSource,
    NormalizationPolicy,
    disparity_to_depth,
    invert_disparity,
    load_depth,
    normalize_depth,
    read_depth,
    read_pfm,
    read_png16,
    read_rawf32,
    write_pfm,
    write_rawf32,
)
from .errors import (
    AnnotationParseError,
    DatasetError,
    DegenerateDepthError,
    DepthFormatError,
    HazeforgeError,
    ParameterError,
    ProtocolError,
    RasterError,
)
from .evaluation import (
    DetectionBox,
    EvalReport,
    TruthBox,
    average_precision,
    evaluate,
    evaluate_boxes,
    iou,
    load_detections,
    load_truths,
    match_detections,
    render_table,
)
from .image_io import clean_png_bytes, encode_png, load_image, to_working, write_png
from .sampling import SamplerConfig, derive_image_seed, sample_params, unit_uniform
from .stream import HazeStreamServer, StreamClient, StreamResponse, StreamSettings, serve

__all__ = [
    "__version__",
    # core
    "HazeParams", "depth_to_transmission", "compose_haze", "invert_haze",
    "quantize", "constant_transmission_haze", "random_transmission_baseline",
    "T_FLOOR", "BASELINE_T_RANGE",
    # depth io
    "DepthSource", "NormalizationPolicy", "read_depth", "read_pfm", "read_png16",
    "read_rawf32", "write_pfm", "write_rawf32", "normalize_depth",
    "invert_disparity", "disparity_to_depth", "load_depth",
    # sampling
    "SamplerConfig", "sample_params", "derive_image_seed", "unit_uniform",
    # dataset
    "SampleRecord", "AppliedParams", "MixPolicy", "Manifest",
    "discover_samples", "synthesize_one", "run_batch",
    # stream
    "HazeStreamServer", "StreamClient", "StreamResponse", "StreamSettings", "serve",
    # evaluation
    "TruthBox", "DetectionBox", "EvalReport", "iou", "match_detections",
    "average_precision", "evaluate", "evaluate_boxes", "load_truths",
    "load_detections", "render_table",
    # image io
    "load_image", "to_working", "encode_png", "write_png", "clean_png_bytes",
    # errors
    "HazeforgeError", "ParameterError", "RasterError", "DepthFormatError",
    "DegenerateDepthError", "DatasetError", "AnnotationParseError", "ProtocolError",
]
