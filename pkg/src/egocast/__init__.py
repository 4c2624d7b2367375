"""Egocentric two-stage pose pipeline: current-frame estimation from headset
proprioception plus a visual feature, multi-second pose forecasting, and the
MPJPE / horizon-curve / AUC evaluation protocol, on a small numpy autodiff core.
"""
from egocast.estimator import CurrentFrameModel, EstimatorConfig, train_current_module
from egocast.forecaster import (
    ForecastConfig,
    ForecastModel,
    ForecastOutput,
    LossWeights,
    end_to_end_infer,
    forecast,
    forecast_loss,
    train_forecaster,
)
from egocast.metrics import HorizonCurve, auc, evaluate, horizon_curve, mpjpe, oracle_align, per_joint_error
from egocast.pose import SKELETON_17, SKELETON_21, PoseSequence, SkeletonSpec
from egocast.tensor import Tensor

__version__ = "0.1.0"
