"""Knowledge-distillation loss for landmark coordinate regression."""
from . import kd_loss as kd_loss  # the submodule; the function lives at kd_loss.kd_loss
from .kd_loss import LossConfig, Region, aloss_batch, aloss_scalar, kd_loss_grad, loss_main
from .metrics import EvalReport, auc, ced_curve, failure_rate, nme, per_image_error
from .pipeline import (
    Dataset,
    ExperimentConfig,
    SyntheticSpec,
    evaluate,
    generate_synthetic,
    prepare_soft_labels,
    run_ablation,
    train_student,
    train_teacher,
)
from .regressor import AdamState, MlpSpec, Regressor
from .shape_model import BoundingBox, ShapeModel, fit_shape_model, soften

__version__ = "0.1.0"
