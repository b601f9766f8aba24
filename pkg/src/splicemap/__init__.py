"""Video splicing localization: residual co-occurrence features, autoencoder
anomaly scoring, heat maps, and pixel-level ROC evaluation."""

from .detector import (DetectionMask, HeatMap, aggregate_heatmap, score_patches,
                       threshold_map)
from .errors import (DegenerateGroundTruth, InconsistentDimensions,
                     InvalidParameter, NotFound, PatchTooSmall,
                     RegionOutOfBounds, ShapeError, SplicemapError,
                     UnsupportedFormat)
from .evaluation import RocCurve, auc, pixel_rates, roc_curve, roc_from_scores
from .features import (FeatureField, PatchGrid, SymmetryMerge,
                       compute_residual, cooccurrence_histogram,
                       extract_patch_features, extract_sequence_features,
                       load_feature_field, normalize_feature,
                       quantize_truncate, save_feature_field)
from .frames import (Frame, FrameSequence, GroundTruthMask, load_frame,
                     load_frame_sequence, load_mask, read_pgm, to_luma,
                     write_pgm)
from .neural import (Adam, AdamConfig, DenseAutoencoder, LstmAutoencoder,
                     TrainConfig, build_training_sequences, gradcheck,
                     load_checkpoint, reconstruction_loss, save_checkpoint,
                     train_dense, train_recurrent)
from .synth import (SourceModel, SpliceTrajectory, generate_forged,
                    generate_pristine, write_synthetic_dataset)

__version__ = "0.1.0"
