"""Two-phase teacher/student training on landmark regression datasets.

Phase one trains a Tough teacher on hard landmarks and a Tolerant teacher on
shape-model-softened landmarks, both with L2. Phase two trains a smaller
student with KD-Loss against ground truth and the cached teacher outputs.
"""
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import kd_loss as kd
from .metrics import EvalReport, default_norm_pair, evaluate_errors, per_image_errors
from .regressor import AdamState, MlpSpec, Regressor
from .shape_model import fit_shape_model, soften

logger = logging.getLogger(__name__)

SPLITS = ("train", "test")
VARIANTS = ("L2", "L1", "SmoothL1", "KD-Tou", "KD-Tol", "KD-full")
_REFERENCE = {"L2": "l2", "L1": "l1", "SmoothL1": "smooth_l1"}

# independent random streams derived from one master seed
_STREAM_TEACHER = 1
_STREAM_STUDENT = 2
_STREAM_ORDER = 3
_STREAM_AUGMENT = 4


class TrainingDivergedError(FloatingPointError):
    def __init__(self, epoch, loss):
        super().__init__(f"non-finite training loss {loss} at epoch {epoch}")
        self.epoch = epoch


def stream_rng(seed, stream, *extra):
    return np.random.default_rng([int(seed), stream, *extra])


@dataclass
class Dataset:
    """Inputs, hard landmarks and optional soft landmarks with split tags."""

    inputs: np.ndarray
    hard: np.ndarray
    split: np.ndarray
    soft: np.ndarray | None = None
    tags: list | None = None

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=float)
        self.hard = np.asarray(self.hard, dtype=float)
        self.split = np.asarray(self.split, dtype=str)
        n = len(self.inputs)
        if self.inputs.ndim != 2:
            raise ValueError(f"inputs must be (N, input_dim), got {self.inputs.shape}")
        if self.hard.ndim != 3 or self.hard.shape[0] != n or self.hard.shape[2] != 2:
            raise ValueError(f"hard landmarks must be (N, k, 2), got {self.hard.shape}")
        if self.split.shape != (n,):
            raise ValueError("one split tag per sample expected")
        bad = set(self.split.tolist()) - set(SPLITS)
        if bad:
            raise ValueError(f"unknown split tags {sorted(bad)}")
        if self.soft is not None:
            self.soft = np.asarray(self.soft, dtype=float)
            if self.soft.shape != self.hard.shape:
                raise ValueError("soft landmarks must match hard landmarks")
        if self.tags is not None and len(self.tags) != n:
            raise ValueError("one tag list per sample expected")

    def __len__(self):
        return len(self.inputs)

    @property
    def num_points(self):
        return self.hard.shape[1]

    @property
    def input_dim(self):
        return self.inputs.shape[1]

    def indices(self, split):
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}")
        return np.flatnonzero(self.split == split)

    def select(self, idx):
        idx = np.asarray(idx, dtype=int)
        return Dataset(
            inputs=self.inputs[idx],
            hard=self.hard[idx],
            split=self.split[idx],
            soft=None if self.soft is None else self.soft[idx],
            tags=None if self.tags is None else [self.tags[i] for i in idx],
        )

    def subset(self, split, tag=None):
        """Samples of one split, optionally restricted to those carrying ``tag``."""
        idx = self.indices(split)
        if tag is not None:
            if self.tags is None:
                raise ValueError("dataset carries no subset tags")
            idx = np.array([i for i in idx if tag in self.tags[i]], dtype=int)
        return self.select(idx)

    def labels(self, kind):
        if kind == "hard":
            return self.hard
        if kind == "soft":
            if self.soft is None:
                raise ValueError("dataset has no soft landmarks; run prepare_soft_labels first")
            return self.soft
        raise ValueError(f"unknown label kind {kind!r}")


@dataclass(frozen=True)
class SyntheticSpec:
    k: int = 29
    n_train: int = 2000
    n_test: int = 500
    latent_modes: int | None = None
    noise_sigma: float = 0.03
    occlusion_fraction: float = 0.15
    seed: int = 0
    leading_std: float = 0.15
    mode_decay: float = 0.9
    annotation_jitter: float = 0.01

    def __post_init__(self):
        if self.k < 2:
            raise ValueError(f"k must be >= 2, got {self.k}")
        if self.n_train < 1 or self.n_test < 1:
            raise ValueError("n_train and n_test must be >= 1")
        if not 1 <= self.modes <= 2 * self.k:
            raise ValueError(f"latent_modes must lie in [1, 2k], got {self.latent_modes}")
        if self.noise_sigma < 0 or self.annotation_jitter < 0:
            raise ValueError("noise_sigma and annotation_jitter must be non-negative")
        if not 0.0 <= self.occlusion_fraction < 1.0:
            raise ValueError("occlusion_fraction must lie in [0, 1)")

    @property
    def modes(self):
        return 2 * self.k if self.latent_modes is None else self.latent_modes


def template_shape(k):
    """An elliptical contour with the default normalizing pair pinned as eye corners."""
    angles = np.linspace(0.0, 2.0 * np.pi, k, endpoint=False)
    shape = np.stack([0.3 * np.cos(angles), 0.35 * np.sin(angles)], axis=1)
    left, right = default_norm_pair(k)
    shape[left] = (-0.22, -0.08)
    shape[right] = (0.22, -0.08)
    return shape


def generate_synthetic(spec):
    """Sample a seeded synthetic landmark regression dataset.

    Shapes are a template plus a random orthonormal mode basis with
    geometrically decaying standard deviations, plus isotropic per-coordinate
    annotation jitter. Inputs are the flattened shapes with Gaussian noise and
    a random fraction of coordinates zeroed.
    """
    rng = np.random.default_rng(spec.seed)
    k = spec.k
    n = spec.n_train + spec.n_test
    modes, _ = np.linalg.qr(rng.standard_normal((2 * k, spec.modes)))
    stds = spec.leading_std * spec.mode_decay ** np.arange(spec.modes)
    coeffs = rng.standard_normal((n, spec.modes)) * stds
    flat = template_shape(k).ravel() + coeffs @ modes.T
    flat += rng.standard_normal(flat.shape) * spec.annotation_jitter
    flat = np.clip(flat, -0.5, 0.5)

    noise = rng.standard_normal(flat.shape) * spec.noise_sigma
    occluded = rng.random(flat.shape) < spec.occlusion_fraction
    inputs = np.where(occluded, 0.0, flat + noise)
    split = np.array(["train"] * spec.n_train + ["test"] * spec.n_test)
    return Dataset(inputs=inputs, hard=flat.reshape(n, k, 2), split=split)


def prepare_soft_labels(dataset, m_tilde=0.9):
    """Fit the shape model on the train split and soften every sample.

    Returns ``(dataset_with_soft_labels, shape_model)``.
    """
    train = dataset.indices("train")
    if train.size == 0:
        raise ValueError("train split is empty")
    model = fit_shape_model(dataset.hard[train])
    soft = np.empty_like(dataset.hard)
    soft[train] = soften(model, dataset.hard[train], m_tilde)
    test = dataset.indices("test")
    if test.size:
        soft[test] = soften(model, dataset.hard[test], m_tilde)
    return replace(dataset, soft=soft), model


@dataclass(frozen=True)
class AugmentConfig:
    enabled: bool = False
    rotation_max_degrees: float = 45.0
    flip_probability: float = 0.5
    flip_permutation: tuple | None = None


def _rotate_flip(points, angle, flip, permutation):
    c, s = math.cos(angle), math.sin(angle)
    rot = np.array([[c, -s], [s, c]])
    out = points @ rot.T
    if flip:
        out = out[..., permutation, :] * np.array([-1.0, 1.0])
    return np.clip(out, -0.5, 0.5)


def augment_sample(inputs, shapes, config, rng=None, angle=None, flip=None):
    """Rotate about the origin and optionally mirror one sample.

    ``inputs`` must be landmark-derived (``2k`` features, interleaved x/y);
    ``shapes`` is a ``(k, 2)`` array or a list of them (targets and cached
    teacher outputs), all transformed identically. Explicit ``angle``
    (radians) and ``flip`` override the random draws.
    """
    single = isinstance(shapes, np.ndarray)
    shapes = [shapes] if single else list(shapes)
    k = shapes[0].shape[0]
    if angle is None:
        limit = math.radians(config.rotation_max_degrees)
        angle = rng.uniform(-limit, limit)
    if flip is None:
        flip = rng.random() < config.flip_probability
    permutation = config.flip_permutation
    if flip and permutation is None:
        raise ValueError("flipping requires a flip_permutation for this landmark scheme")
    inputs = np.asarray(inputs, dtype=float)
    if inputs.size != 2 * k:
        raise ValueError("augmentation needs landmark-derived inputs of size 2k")
    new_inputs = _rotate_flip(inputs.reshape(k, 2), angle, flip, permutation).ravel()
    new_shapes = [_rotate_flip(np.asarray(s, float), angle, flip, permutation) for s in shapes]
    return new_inputs, (new_shapes[0] if single else new_shapes)


def _augment_batch(inputs, shape_sets, config, rng):
    n = len(inputs)
    limit = math.radians(config.rotation_max_degrees)
    angles = rng.uniform(-limit, limit, size=n)
    flips = rng.random(n) < config.flip_probability
    out_inputs = np.empty_like(inputs)
    out_sets = [np.empty_like(s) for s in shape_sets]
    for i in range(n):
        x, shapes = augment_sample(
            inputs[i], [s[i] for s in shape_sets], config, angle=angles[i], flip=bool(flips[i])
        )
        out_inputs[i] = x
        for dst, src in zip(out_sets, shapes):
            dst[i] = src
    return out_inputs, out_sets


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    teacher_epochs: int = 300
    student_epochs: int = 300
    teacher_batch: int = 40
    student_batch: int = 70
    m_tilde: float = 0.9
    loss: kd.LossConfig = field(default_factory=kd.LossConfig)
    teacher_hidden: tuple = (144, 144)
    student_hidden: tuple = (64,)
    activation: str = "relu"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    decay: float = 1e-6
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    norm_pair: tuple | None = None
    teacher_forward_on_augmented: bool = False

    def __post_init__(self):
        if min(self.teacher_epochs, self.student_epochs) < 1:
            raise ValueError("epochs must be >= 1")
        if min(self.teacher_batch, self.student_batch) < 1:
            raise ValueError("batch sizes must be >= 1")
        if not 0.0 <= self.m_tilde <= 1.0:
            raise ValueError(f"m_tilde must lie in [0, 1], got {self.m_tilde}")

    def teacher_spec(self, input_dim, output_dim):
        return MlpSpec(input_dim, self.teacher_hidden, output_dim, self.activation,
                       seed=int(stream_rng(self.seed, _STREAM_TEACHER).integers(2**31)))

    def student_spec(self, input_dim, output_dim):
        return MlpSpec(input_dim, self.student_hidden, output_dim, self.activation,
                       seed=int(stream_rng(self.seed, _STREAM_STUDENT).integers(2**31)))

    def adam(self):
        return AdamState(self.learning_rate, self.beta1, self.beta2, self.decay)

    def resolved_norm_pair(self, k):
        return default_norm_pair(k) if self.norm_pair is None else tuple(self.norm_pair)

    def to_dict(self):
        data = asdict(self)
        data["teacher_hidden"] = list(self.teacher_hidden)
        data["student_hidden"] = list(self.student_hidden)
        aug = data["augment"]
        if aug["flip_permutation"] is not None:
            aug["flip_permutation"] = list(aug["flip_permutation"])
        if self.norm_pair is not None:
            data["norm_pair"] = [p if np.ndim(p) == 0 else list(p) for p in self.norm_pair]
        return data

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        unknown = set(data) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        if "loss" in data:
            data["loss"] = kd.LossConfig(**data["loss"])
        if "augment" in data:
            aug = dict(data["augment"])
            if aug.get("flip_permutation") is not None:
                aug["flip_permutation"] = tuple(aug["flip_permutation"])
            data["augment"] = AugmentConfig(**aug)
        for key in ("teacher_hidden", "student_hidden"):
            if key in data:
                data[key] = tuple(data[key])
        if data.get("norm_pair") is not None:
            data["norm_pair"] = tuple(p if np.ndim(p) == 0 else tuple(p) for p in data["norm_pair"])
        return cls(**data)


def _fit(model, inputs, targets, objective, epochs, batch_size, adam, order_rng,
         augment=None, augment_rng=None, refresh=None):
    """Minibatch training loop shared by both phases.

    ``targets`` is a list of ``(N, k, 2)`` arrays; ``objective(pred, *targets)``
    returns ``(loss, d_loss/d_pred)`` for a batch of predicted shapes.
    ``refresh(x, targets)``, if given, replaces the targets after augmentation.
    """
    n = len(inputs)
    history = []
    for epoch in range(1, epochs + 1):
        order = order_rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            x = inputs[idx]
            ys = [t[idx] for t in targets]
            if augment is not None and augment.enabled:
                x, ys = _augment_batch(x, ys, augment, augment_rng)
                if refresh is not None:
                    ys = refresh(x, ys)
            out, cache = model.forward(x)
            pred = out.reshape(ys[0].shape)
            loss, grad = objective(pred, *ys)
            if not math.isfinite(loss):
                raise TrainingDivergedError(epoch, loss)
            total += loss * len(idx)
            model.step(model.backward(cache, grad.reshape(out.shape)), adam)
        history.append(total / n)
        logger.debug("epoch %d loss %.6g", epoch, history[-1])
    return history


def _l2_objective(pred, target):
    return kd.reference_loss("l2", target, pred)


def train_teacher(dataset, label_kind, config):
    """Train one teacher with L2 on the train split.

    ``label_kind`` is ``"hard"`` (Tough teacher) or ``"soft"`` (Tolerant
    teacher). Both kinds share the initialization and batch order for a
    given seed.
    """
    labels = dataset.labels(label_kind)
    train = dataset.indices("train")
    if train.size == 0:
        raise ValueError("train split is empty")
    inputs, targets = dataset.inputs[train], labels[train]
    spec = config.teacher_spec(dataset.input_dim, 2 * dataset.num_points)
    model = Regressor(spec)
    model.history = _fit(
        model, inputs, [targets], _l2_objective, config.teacher_epochs, config.teacher_batch,
        config.adam(), stream_rng(config.seed, _STREAM_ORDER, 0),
        config.augment, stream_rng(config.seed, _STREAM_AUGMENT, 0),
    )
    model.final_train_loss = _l2_objective(model.predict_shapes(inputs), targets)[0]
    logger.info("%s teacher final train L2 %.6g", label_kind, model.final_train_loss)
    return model


@dataclass(frozen=True)
class TeacherPredictions:
    accurate: np.ndarray
    smooth: np.ndarray

    def __post_init__(self):
        if self.accurate.shape != self.smooth.shape:
            raise ValueError("teacher predictions must align")
        self.accurate.setflags(write=False)
        self.smooth.setflags(write=False)


def predict_teachers(tough, tolerant, dataset):
    """Forward both frozen teachers once over every sample."""
    for model in (tough, tolerant):
        if model.spec.input_dim != dataset.input_dim or model.spec.output_dim != 2 * dataset.num_points:
            raise ValueError("teacher dimensions do not match the dataset")
    return TeacherPredictions(
        accurate=tough.predict_shapes(dataset.inputs).copy(),
        smooth=tolerant.predict_shapes(dataset.inputs).copy(),
    )


def student_objective(variant, loss_config):
    """``objective(pred, gt, te_tough, te_tolerant) -> (loss, grad)`` for a variant."""
    if variant in _REFERENCE:
        kind = _REFERENCE[variant]
        return lambda pred, gt, tou, tol: kd.reference_loss(kind, gt, pred)
    if variant == "KD-Tou":
        loss_config = replace(loss_config, use_tough=True, use_tolerant=False)
    elif variant == "KD-Tol":
        loss_config = replace(loss_config, use_tough=False, use_tolerant=True)
    elif variant != "KD-full":
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    return lambda pred, gt, tou, tol: kd.kd_loss_and_grad(gt, pred, tou, tol, loss_config)


def train_student(dataset, teacher_preds, config, variant="KD-full", teachers=None):
    """Train the student on the train split against ground truth and teachers.

    With augmentation on, the cached teacher shapes get the same rotation and
    flip as the sample. If ``config.teacher_forward_on_augmented`` is set,
    ``teachers=(tough, tolerant)`` are instead forwarded on every augmented
    batch.
    """
    refresh = None
    if config.teacher_forward_on_augmented and config.augment.enabled:
        if teachers is None:
            raise ValueError("teacher_forward_on_augmented needs the teacher models")
        tough, tolerant = teachers

        def refresh(x, ys):
            return [ys[0], tough.predict_shapes(x), tolerant.predict_shapes(x)]

    if teacher_preds.accurate.shape != dataset.hard.shape:
        raise ValueError("teacher predictions are not aligned with the dataset")
    train = dataset.indices("train")
    if train.size == 0:
        raise ValueError("train split is empty")
    targets = [dataset.hard[train], teacher_preds.accurate[train], teacher_preds.smooth[train]]
    spec = config.student_spec(dataset.input_dim, 2 * dataset.num_points)
    model = Regressor(spec)
    model.history = _fit(
        model, dataset.inputs[train], targets, student_objective(variant, config.loss),
        config.student_epochs, config.student_batch, config.adam(),
        stream_rng(config.seed, _STREAM_ORDER, 1),
        config.augment, stream_rng(config.seed, _STREAM_AUGMENT, 1), refresh,
    )
    return model


def evaluate(model, dataset, split="test", norm_pair=None, tag=None):
    """Evaluate a frozen model against hard landmarks of one split."""
    part = dataset.subset(split, tag)
    if len(part) == 0:
        raise ValueError(f"split {split!r} is empty")
    norm_pair = default_norm_pair(dataset.num_points) if norm_pair is None else norm_pair
    errors = per_image_errors(model.predict_shapes(part.inputs), part.hard, norm_pair)
    return evaluate_errors(errors)


def _ablation_seed(dataset, config, seed):
    cfg = replace(config, seed=seed)
    tough = train_teacher(dataset, "hard", cfg)
    tolerant = train_teacher(dataset, "soft", cfg)
    preds = predict_teachers(tough, tolerant, dataset)
    norm_pair = cfg.resolved_norm_pair(dataset.num_points)
    rows = []
    for variant in VARIANTS:
        student = train_student(dataset, preds, cfg, variant, (tough, tolerant))
        report = evaluate(student, dataset, "test", norm_pair)
        rows.append({
            "variant": variant,
            "seed": seed,
            "nme": report.nme_percent,
            "fr": report.fr_percent,
            "auc": report.auc,
        })
    teachers = {"seed": seed, "tough_train_l2": tough.final_train_loss,
                "tolerant_train_l2": tolerant.final_train_loss}
    return rows, teachers


@dataclass
class AblationReport:
    rows: list
    teachers: list

    def medians(self):
        out = {}
        for variant in VARIANTS:
            sel = [r for r in self.rows if r["variant"] == variant]
            out[variant] = {m: float(np.median([r[m] for r in sel])) for m in ("nme", "fr", "auc")}
        return out

    def to_dict(self):
        return {"rows": self.rows, "teachers": self.teachers, "medians": self.medians()}


def run_ablation(dataset, config, seeds=5, jobs=1):
    """Train every student variant for ``seeds`` consecutive seeds.

    Soft labels are prepared first if missing. Seeds run in a process pool
    when ``jobs > 1``; results are ordered by seed either way.
    """
    if dataset.soft is None:
        dataset, _ = prepare_soft_labels(dataset, config.m_tilde)
    seed_list = [config.seed + i for i in range(seeds)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_ablation_seed, [dataset] * seeds, [config] * seeds, seed_list))
    else:
        results = [_ablation_seed(dataset, config, s) for s in seed_list]
    rows = [r for res in results for r in res[0]]
    teachers = [res[1] for res in results]
    return AblationReport(rows=rows, teachers=teachers)


def run_experiment(dataset, config):
    """Full two-phase protocol for one seed.

    Returns a dict with the shape model, both teachers, the cached teacher
    predictions, the student and its test report.
    """
    if dataset.soft is None:
        dataset, shape_model = prepare_soft_labels(dataset, config.m_tilde)
    else:
        shape_model = None
    tough = train_teacher(dataset, "hard", config)
    tolerant = train_teacher(dataset, "soft", config)
    preds = predict_teachers(tough, tolerant, dataset)
    student = train_student(dataset, preds, config, teachers=(tough, tolerant))
    report = evaluate(student, dataset, "test", config.resolved_norm_pair(dataset.num_points))
    return {
        "dataset": dataset,
        "shape_model": shape_model,
        "tough": tough,
        "tolerant": tolerant,
        "teacher_preds": preds,
        "student": student,
        "report": report,
    }


__all__ = [
    "AblationReport", "AugmentConfig", "Dataset", "EvalReport", "ExperimentConfig",
    "SyntheticSpec", "TeacherPredictions", "TrainingDivergedError", "VARIANTS",
    "augment_sample", "evaluate", "generate_synthetic", "predict_teachers",
    "prepare_soft_labels", "run_ablation", "run_experiment", "train_student", "train_teacher",
]
