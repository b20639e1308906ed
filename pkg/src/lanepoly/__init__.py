"""Polynomial lane estimation: curves, data, model, training, metrics."""

from .errors import (ConfigError, DegenerateFit, DivergedLoss, EmptyLane,
                     LanePolyError, NoEgoLane, ParseError, ShapeMismatch,
                     TooManyLanes)
from .geometry import Polynomial, eval_poly, fit_least_squares, transform_points
from .data import (ImageAnnotation, PointAnnotation, SyntheticSpec,
                   TrainingTarget, augment, build_target, generate_synthetic,
                   parse_annotations, serialize_annotations)
from .model import (HeadLayout, LanePrediction, LaneRegressionModel,
                    ModelOutput, decode, encode, load_checkpoint,
                    save_checkpoint)
from .training import LossWeights, TrainConfig, point_loss, total_loss, train
from .metrics import (MatchResult, MetricReport, lane_accuracy, lpd,
                      match_and_score, upper_bound)
from .estimator import LaneCurveRegressor

__version__ = "0.1.0"
