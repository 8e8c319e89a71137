"""Few-shot image classification with learned class proxies and a learned
3D-convolutional distance metric, trained and evaluated episodically."""

from .backbones import BACKBONE_NAMES, BackboneConfig, build_backbone, count_parameters, embed
from .config import RunConfig, build_run_config, load_run_config, parse_config_text, resolved_text
from .data import (AugmentationPolicy, ArraySource, ImageFolderSource, SampleSource,
                   load_manifest, preprocess, write_manifest)
from .episodes import (ClassIndex, Episode, SplitManifest, TaskSpec, ValidatedSplit,
                       sample_episode, validate_split)
from .errors import (CheckpointMismatchError, ConfigError, DivergenceError, ProxyNetError,
                     GroupingError, InsufficientClassesError, InsufficientSamplesError,
                     InsufficientTasksError, OverlapError, ParseError, ShapeError,
                     ShapeMismatchError, UnknownBackboneError, ZeroVectorError)
from .evaluation import (EvalReport, ParamAudit, confidence_interval, evaluate,
                         format_accuracy, param_audit)
from .model import ModelConfig, ProxyNetModel, build_model, load_checkpoint, save_checkpoint
from .proxy import (LearnedProxy, MeanProxy, SumProxy, WeightNet, build_proxy, class_sum,
                    compute_proxies, group_support)
from .relation import (CosineHead, EuclideanHead, FCRelationHead, Relation3DHead,
                       RelationScorer3D, SqueezeExcite3D, build_metric, classify,
                       episode_loss, stack_pair, stack_pairs)
from .synthetic import SyntheticDataset, SyntheticSpec, generate_synthetic, materialize
from .training import EpochRecord, PlateauScheduler, TrainConfig, TrainResult, train

__version__ = "0.1.0"
