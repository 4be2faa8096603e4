"""Domain adaptation for paired color+depth images via rotation self-supervision.

Train a two-stream classifier on a labeled source domain and an unlabeled
target domain, with a relative-rotation pretext task (plus entropy
minimization) shrinking the domain gap; compare against discrepancy-,
adversarial-, and norm-based baselines; inspect the result with saliency maps
and 2-D feature embeddings.
"""

from .data import (DatasetManifest, ManifestRecord, PairedSample, SOURCE,
                   TARGET, colorize_depth, extract_crops, fill_missing_depth,
                   load_dataset, load_manifest, save_manifest)
from .errors import ConfigError, DataError, NumericalError, RotadaptError
from .losses import (LossReport, afn_adapt, combine, entropy_loss, grl_adapt,
                     grl_lambda, main_loss, mmd_loss, pretext_loss,
                     reverse_gradient)
from .models import BackboneSpec, ModelBundle, build_bundle
from .rotation import (RotationBatch, make_absolute_rotation_batch,
                       make_rotation_batch, relative_label, rot90)
from .toyshift import DomainAppearance, ToyShiftSpec, generate_toy_shift
from .training import (EvalResult, RunMetrics, TrainConfig, checkpoint_load,
                       checkpoint_save, evaluate, evaluate_pretext, train)
from .analysis import (Embedding2D, SaliencyMap, binarize_saliency,
                       embed_features_2d, emit_report, guided_backprop,
                       input_gradient)

__version__ = "0.1.0"

__all__ = [
    "SOURCE", "TARGET",
    "PairedSample", "ManifestRecord", "DatasetManifest",
    "load_manifest", "save_manifest", "load_dataset",
    "colorize_depth", "fill_missing_depth", "extract_crops",
    "RotadaptError", "ConfigError", "DataError", "NumericalError",
    "rot90", "relative_label", "RotationBatch",
    "make_rotation_batch", "make_absolute_rotation_batch",
    "BackboneSpec", "ModelBundle", "build_bundle",
    "main_loss", "pretext_loss", "entropy_loss", "mmd_loss",
    "grl_lambda", "grl_adapt", "afn_adapt", "reverse_gradient",
    "combine", "LossReport",
    "DomainAppearance", "ToyShiftSpec", "generate_toy_shift",
    "TrainConfig", "RunMetrics", "EvalResult",
    "train", "evaluate", "evaluate_pretext",
    "checkpoint_save", "checkpoint_load",
    "SaliencyMap", "guided_backprop", "input_gradient", "binarize_saliency",
    "Embedding2D", "embed_features_2d", "emit_report",
]
