"""Robustness testing for image classifiers via counterexample search.

Core flow: load a dataset manifest, connect a classifier endpoint
(builtin, subprocess, or HTTP), define perturbation properties over
parameter domains, then search each sample for a misclassifying
parameter point and aggregate the per-sample verdicts into scores,
sweeps, and failure galleries.
"""

from .classifier import ClassifierEndpoint, Prediction, fit_centroid, open_connection
from .dataset import (
    DatasetManifest,
    LabeledSample,
    generate_synthetic,
    import_gtsrb,
    load_manifest,
    write_manifest,
)
from .errors import (
    ConfigError,
    DatasetError,
    DecodeError,
    DomainError,
    HarnessError,
    ProtocolError,
    ReportError,
    TransportError,
)
from .evaluator import (
    PropertyResult,
    PropertySpec,
    SampleVerdict,
    SearchBudget,
    combination_delta,
    compose_specs,
    evaluate_property,
    evaluate_sample,
)
from .imaging import RandomStream, decode_image, encode_png, encode_ppm, load_image
from .reporting import (
    FailureGroup,
    SweepCurve,
    delta_matrix,
    emit_report,
    failure_report,
    sweep,
)
from .transforms import KINDS, TransformSpec, default_spec, override_domain

__version__ = "0.1.0"

__all__ = [
    "ClassifierEndpoint",
    "Prediction",
    "fit_centroid",
    "open_connection",
    "DatasetManifest",
    "LabeledSample",
    "generate_synthetic",
    "import_gtsrb",
    "load_manifest",
    "write_manifest",
    "HarnessError",
    "ConfigError",
    "DatasetError",
    "DecodeError",
    "DomainError",
    "ProtocolError",
    "ReportError",
    "TransportError",
    "PropertyResult",
    "PropertySpec",
    "SampleVerdict",
    "SearchBudget",
    "combination_delta",
    "compose_specs",
    "evaluate_property",
    "evaluate_sample",
    "RandomStream",
    "decode_image",
    "encode_png",
    "encode_ppm",
    "load_image",
    "FailureGroup",
    "SweepCurve",
    "delta_matrix",
    "emit_report",
    "failure_report",
    "sweep",
    "KINDS",
    "TransformSpec",
    "default_spec",
    "override_domain",
    "__version__",
]
