"""Concatenated dual-backbone image classifier with a full multiclass evaluation suite."""

from .backbone import BackboneSpec, FeatureExtractor, build_backbone, extract_embeddings, set_frozen
from .data import (DataSplit, ImageSample, LabeledDataset, generate_synthetic_dataset, ingest_dataset,
                   preprocess, stratified_split)
from .fusion import ConcatenatedModel, PredictionBatch, build_concatenated_model, forward, fuse, predict
from .metrics import (ClassMetrics, ConfusionMatrix, MetricsReport, OvrCounts, RocCurve, build_report,
                      class_metrics, confusion_matrix, macro_average, multiclass_roc, ovr_counts, roc_curve)
from .training import (TrainingConfig, TrainingHistory, evaluate_loss_accuracy, load_checkpoint,
                       save_checkpoint, train)

__version__ = "0.1.0"
