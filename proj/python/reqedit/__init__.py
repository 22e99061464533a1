"""Editing trained MLPs for requirement compliance.

Thin re-export of the compiled extension: datasets and model populations,
editor training and application, classical baselines, and the dominance
filter used for requirement/preservation fronts.
"""

try:
    from . import _reqedit as _ext  # installed layout: extension inside the package
except ImportError:
    import _reqedit as _ext  # build-tree layout: extension on sys.path

Dataset = _ext.Dataset
Editor = _ext.Editor
Model = _ext.Model
NumericalError = _ext.NumericalError
ThresholdRule = _ext.ThresholdRule
ValidationError = _ext.ValidationError
Zoo = _ext.Zoo
build_zoo = _ext.build_zoo
compose = _ext.compose
edit = _ext.edit
fs_mask = _ext.fs_mask
fs_retrain = _ext.fs_retrain
jsd_rows = _ext.jsd_rows
load_editor = _ext.load_editor
load_model = _ext.load_model
load_zoo = _ext.load_zoo
pareto_filter = _ext.pareto_filter
pfi_rank = _ext.pfi_rank
positive_scores = _ext.positive_scores
preservation_loss = _ext.preservation_loss
prune_baseline = _ext.prune_baseline
synth_dataset = _ext.synth_dataset
threshold_opt_eval = _ext.threshold_opt_eval
threshold_opt_fit = _ext.threshold_opt_fit
train_editor = _ext.train_editor

__version__ = getattr(_ext, "__version__", "0.0.0")

__all__ = [
    "Dataset",
    "Editor",
    "Model",
    "NumericalError",
    "ThresholdRule",
    "ValidationError",
    "Zoo",
    "build_zoo",
    "compose",
    "edit",
    "fs_mask",
    "fs_retrain",
    "jsd_rows",
    "load_editor",
    "load_model",
    "load_zoo",
    "pareto_filter",
    "pfi_rank",
    "positive_scores",
    "preservation_loss",
    "prune_baseline",
    "synth_dataset",
    "threshold_opt_eval",
    "threshold_opt_fit",
    "train_editor",
]
