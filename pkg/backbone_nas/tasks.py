"""
Synthetic stand-ins for the classification (pretraining) and localization
(fine-tuning) tasks: dataset generators, task specifications, losses and
metrics.

Classification images show one of ``k`` oriented gratings (integer
wavevectors, random phase, colored per class) under additive noise.
Localization images show one bright axis-aligned rectangle on a textured
background; labels are ``(cx, cy, w, h)`` normalized to [0, 1].
"""

from dataclasses import dataclass, field

import numpy as np

from astropy import log

from . import tensor_ops as ops
from .utils import InvalidConfigurationError, ShapeError

__all__ = ['TaskSpec', 'DatasetSplit', 'TaskData', 'generate_classification_data',
           'generate_localization_data', 'box_iou', 'task_loss', 'score_outputs',
           'predict', 'task_metric', 'centered_prior_iou', 'build_task_data',
           'TASK_KINDS', 'ROLES']

TASK_KINDS = ('classification', 'localization')

ROLES = ('pretrain_train', 'finetune_train', 'search_validation', 'test',
         'bn_calibration')

# distinct frequency bins; a wavevector and its negative share a bin so
# only one of each pair is listed
_WAVEVECTORS = ((3, 0), (0, 3), (2, 2), (2, -2), (3, 1), (1, 3), (3, -1),
                (1, -3), (4, 0), (0, 4), (4, 2), (2, 4))

MAX_CLASSES = len(_WAVEVECTORS)

BOX_OUTPUTS = 4


@dataclass(frozen=True)
class TaskSpec:
    """
    What a task looks like to the network: input resolution, head and
    output size, and which loss and metric apply.

    Parameters
    ----------
    kind : {'classification', 'localization'}
    resolution : tuple of int
        (height, width) of the task images.
    num_classes : int
        Class count of a classification task.
    noise : float
        Standard deviation of the additive pixel noise.
    """

    kind: str
    resolution: tuple = (32, 32)
    num_classes: int = 4
    noise: float = 0.5

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise InvalidConfigurationError("Unknown task kind {0!r}; expected one "
                                            "of {1}".format(self.kind, TASK_KINDS))
        resolution = self.resolution
        if np.isscalar(resolution):
            resolution = (resolution, resolution)
        object.__setattr__(self, 'resolution', tuple(int(r) for r in resolution))
        if self.kind == 'classification':
            if not 2 <= self.num_classes <= MAX_CLASSES:
                raise InvalidConfigurationError("Classification needs between 2 and "
                                                "{0} classes, got {1}"
                                                .format(MAX_CLASSES, self.num_classes))
            if min(self.resolution) < 2 * max(max(abs(k) for k in v) for v in _WAVEVECTORS) + 1:
                raise InvalidConfigurationError("Classification resolution {0} is "
                                                "too small for the grating patterns"
                                                .format(self.resolution))
        elif min(self.resolution) < 16:
            raise InvalidConfigurationError("Localization needs a resolution of at "
                                            "least 16, got {0}".format(self.resolution))
        if self.noise < 0:
            raise InvalidConfigurationError("noise must be non-negative")

    @property
    def head(self):
        return self.kind

    @property
    def outputs(self):
        return self.num_classes if self.kind == 'classification' else BOX_OUTPUTS

    @property
    def loss(self):
        return 'softmax_cross_entropy' if self.kind == 'classification' else 'smooth_l1'

    @property
    def metric(self):
        return 'top1_accuracy' if self.kind == 'classification' else 'mean_iou'


@dataclass(frozen=True, eq=False)
class DatasetSplit:
    """
    An immutable set of items of one task.

    Parameters
    ----------
    role : str
        One of ``ROLES``.
    images : `~numpy.ndarray`
        float32 array of shape (count, 3, height, width).
    labels : `~numpy.ndarray`
        int64 class indices of shape (count,), or float32 boxes of shape
        (count, 4).
    ids : `~numpy.ndarray`
        Item identifiers, unique across the splits of one `TaskData`.
    seed : int or None
        Seed the items were generated from.
    """

    role: str
    images: np.ndarray
    labels: np.ndarray
    ids: np.ndarray
    seed: object = None

    def __post_init__(self):
        if self.role not in ROLES:
            raise InvalidConfigurationError("Unknown split role {0!r}".format(self.role))
        if not (len(self.images) == len(self.labels) == len(self.ids)):
            raise ShapeError("Split images {0}, labels {1} and ids {2} have different "
                             "lengths".format(self.images.shape, self.labels.shape,
                                              self.ids.shape))
        for array in (self.images, self.labels, self.ids):
            array.flags.writeable = False

    def __len__(self):
        return len(self.images)

    @property
    def resolution(self):
        return self.images.shape[2:]

    def subset(self, indices, role=None):
        indices = np.asarray(indices)
        return DatasetSplit(role or self.role, self.images[indices],
                            self.labels[indices], self.ids[indices], seed=self.seed)

    def batches(self, batch_size, labels=False):
        """
        Iterate over consecutive batches of images (or of
        ``(images, labels)`` pairs), in item order.
        """
        if batch_size <= 0:
            raise ValueError("batch_size must be positive")
        for start in range(0, len(self), batch_size):
            stop = start + batch_size
            if labels:
                yield self.images[start:stop], self.labels[start:stop]
            else:
                yield self.images[start:stop]

    def is_disjoint(self, other):
        return np.intersect1d(self.ids, other.ids).size == 0


def _class_colors(num_classes):
    phase = np.arange(num_classes)[:, None] / num_classes + np.arange(3)[None, :] / 3.
    return (0.6 + 0.4 * np.cos(2 * np.pi * phase)).astype(np.float32)


def _grating(resolution, wavevector, phase):
    h, w = resolution
    y = np.arange(h)[:, None] / h
    x = np.arange(w)[None, :] / w
    kx, ky = wavevector
    return np.cos(2 * np.pi * (kx * x + ky * y) + phase)


def generate_classification_data(num_classes, count, resolution=(32, 32), rng=None,
                                 noise=0.5, role='pretrain_train', id_offset=0):
    """
    Grating-texture classification items.

    Class ``c`` is a cosine grating with a fixed integer wavevector and a
    fixed color; each item draws a random phase, an amplitude in [0.8,
    1.2] and Gaussian pixel noise. The class patterns do not depend on the
    generator, so splits drawn from different seeds share them. Labels are
    balanced to within one item.
    """
    if not 2 <= num_classes <= MAX_CLASSES:
        raise InvalidConfigurationError("num_classes must be between 2 and {0}"
                                        .format(MAX_CLASSES))
    if np.isscalar(resolution):
        resolution = (resolution, resolution)
    seed = rng if isinstance(rng, (int, np.integer)) else None
    rng = np.random.default_rng(rng)

    labels = rng.permutation(np.arange(count) % num_classes).astype(np.int64)
    phases = rng.uniform(0, 2 * np.pi, size=count)
    amplitudes = rng.uniform(0.8, 1.2, size=count)
    colors = _class_colors(num_classes)

    images = np.empty((count, 3) + tuple(resolution), dtype=np.float32)
    for i in range(count):
        pattern = amplitudes[i] * _grating(resolution, _WAVEVECTORS[labels[i]], phases[i])
        images[i] = colors[labels[i]][:, None, None] * pattern
    if noise > 0:
        images += rng.normal(0, noise, size=images.shape).astype(np.float32)

    ids = id_offset + np.arange(count, dtype=np.int64)
    return DatasetSplit(role, images, labels, ids, seed=seed)


def generate_localization_data(count, resolution=(32, 32), rng=None, noise=0.2,
                               role='finetune_train', id_offset=0, min_size=4):
    """
    Single-rectangle localization items.

    Each image holds one bright axis-aligned rectangle at least
    ``min_size`` pixels wide and high, on a background made of a weak
    random grating plus Gaussian noise. The label is
    ``(cx, cy, w, h)`` normalized by the image size.
    """
    if np.isscalar(resolution):
        resolution = (resolution, resolution)
    h, w = (int(r) for r in resolution)
    if min(h, w) < 16:
        raise InvalidConfigurationError("Localization needs a resolution of at "
                                        "least 16, got {0}".format((h, w)))
    seed = rng if isinstance(rng, (int, np.integer)) else None
    rng = np.random.default_rng(rng)

    box_w = rng.integers(min_size, w // 2 + 1, size=count)
    box_h = rng.integers(min_size, h // 2 + 1, size=count)
    x0 = rng.integers(0, w - box_w + 1)
    y0 = rng.integers(0, h - box_h + 1)
    wavevectors = rng.integers(1, 5, size=(count, 2))
    phases = rng.uniform(0, 2 * np.pi, size=count)
    tints = rng.uniform(0.5, 1.0, size=(count, 3))

    images = np.empty((count, 3, h, w), dtype=np.float32)
    for i in range(count):
        background = 0.3 * _grating((h, w), wavevectors[i], phases[i])
        images[i] = tints[i][:, None, None] * background
        images[i, :, y0[i]:y0[i] + box_h[i], x0[i]:x0[i] + box_w[i]] += 1.5
    if noise > 0:
        images += rng.normal(0, noise, size=images.shape).astype(np.float32)

    labels = np.stack([(x0 + box_w / 2.) / w, (y0 + box_h / 2.) / h,
                       box_w / w, box_h / h], axis=1).astype(np.float32)
    ids = id_offset + np.arange(count, dtype=np.int64)
    return DatasetSplit(role, images, labels, ids, seed=seed)


def _corners(boxes, box_format):
    boxes = np.asarray(boxes, dtype=np.float64)
    if boxes.shape[-1] != 4:
        raise ShapeError("Boxes must have 4 coordinates, got shape {0}"
                         .format(boxes.shape))
    if box_format == 'center':
        cx, cy, bw, bh = np.moveaxis(boxes, -1, 0)
        return cx - bw / 2, cy - bh / 2, cx + bw / 2, cy + bh / 2
    elif box_format == 'corner':
        x0, y0, bw, bh = np.moveaxis(boxes, -1, 0)
        return x0, y0, x0 + bw, y0 + bh
    raise ValueError("box_format must be 'center' or 'corner', got {0!r}"
                     .format(box_format))


def box_iou(first, second, box_format='center'):
    """
    Intersection over union of axis-aligned boxes.

    Parameters
    ----------
    first, second : array-like
        Boxes of shape (..., 4), broadcast against each other.
    box_format : {'center', 'corner'}
        ``(cx, cy, w, h)`` or ``(xmin, ymin, w, h)``.
    """
    ax0, ay0, ax1, ay1 = _corners(first, box_format)
    bx0, by0, bx1, by1 = _corners(second, box_format)
    overlap_w = np.clip(np.minimum(ax1, bx1) - np.maximum(ax0, bx0), 0, None)
    overlap_h = np.clip(np.minimum(ay1, by1) - np.maximum(ay0, by0), 0, None)
    intersection = overlap_w * overlap_h
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - intersection
    with np.errstate(invalid='ignore', divide='ignore'):
        iou = np.where(union > 0, intersection / union, 0.)
    return iou if iou.ndim else float(iou)


def task_loss(head_output, labels, spec):
    """
    Loss of a batch of head outputs and its gradient.

    Returns
    -------
    loss : float
    grad : `~numpy.ndarray`
        Gradient with respect to ``head_output``.
    """
    if head_output.ndim != 2 or head_output.shape[1] != spec.outputs:
        raise ShapeError("{0} head output shape {1} does not match the expected "
                         "(batch, {2})".format(spec.kind, head_output.shape,
                                               spec.outputs))
    if spec.kind == 'classification':
        return ops.softmax_cross_entropy(head_output, labels)
    return ops.smooth_l1(head_output, labels)


def score_outputs(outputs, labels, spec):
    """
    Metric of a full set of head outputs: top-1 accuracy or mean IoU.
    """
    if len(outputs) == 0:
        raise ValueError("Cannot compute a metric over an empty split")
    if spec.kind == 'classification':
        return float(np.mean(np.argmax(outputs, axis=1) == np.asarray(labels)))
    return float(np.mean(box_iou(outputs, labels, box_format='center')))


def predict(network, images, batch_size=200):
    """
    Evaluation-mode outputs of ``network`` over ``images``, batch by batch.
    """
    outputs = [network.forward(images[start:start + batch_size], mode='eval')
               for start in range(0, len(images), batch_size)]
    return np.concatenate(outputs, axis=0)


def task_metric(network, split, spec, batch_size=None):
    """
    Top-1 accuracy (classification) or mean IoU (localization) of
    ``network`` on ``split``, in evaluation mode.
    """
    if len(split) == 0:
        raise ValueError("Cannot evaluate on an empty split")
    if batch_size is None:
        from . import conf
        batch_size = conf.evaluation_batch_size
    outputs = predict(network, split.images, batch_size=batch_size)
    return score_outputs(outputs, split.labels, spec)


def centered_prior_iou(split, steps=None):
    """
    Mean IoU of the best fixed box centered in the image, found by brute
    force over every (w, h) pixel size.

    Returns
    -------
    iou : float
    box : tuple
        The best ``(cx, cy, w, h)`` prior.
    """
    if len(split) == 0:
        raise ValueError("Cannot evaluate on an empty split")
    h, w = split.resolution
    best = (-1., None)
    for bw in range(1, w + 1):
        for bh in range(1, h + 1):
            box = (0.5, 0.5, bw / w, bh / h)
            iou = float(np.mean(box_iou(np.array(box)[None, :], split.labels)))
            if iou > best[0]:
                best = (iou, box)
    return best


@dataclass(frozen=True, eq=False)
class TaskData:
    """
    The splits of one task: training, search validation, test and the
    batch norm calibration subset of the training split.
    """

    spec: TaskSpec
    train: DatasetSplit
    validation: DatasetSplit
    test: DatasetSplit
    calibration: DatasetSplit = field(default=None)

    def __post_init__(self):
        if not self.train.is_disjoint(self.validation):
            raise InvalidConfigurationError("Training and search validation splits "
                                            "overlap")
        if self.calibration is not None and not np.isin(self.calibration.ids,
                                                        self.train.ids).all():
            raise InvalidConfigurationError("The calibration split must be a subset "
                                            "of the training split")


DEFAULT_SIZES = {'classification': (8000, 1000, 1000),
                 'localization': (6000, 1000, 1000)}


def build_task_data(spec, seed, sizes=None, calibration_size=500):
    """
    Generate every split of a task from one seed.

    Parameters
    ----------
    spec : `TaskSpec`
    seed : int
    sizes : tuple of int, optional
        (train, validation, test) item counts; defaults to 8000/1000/1000
        for classification and 6000/1000/1000 for localization.
    calibration_size : int
        Items drawn without replacement from the training split for batch
        norm recalibration.
    """
    train_size, val_size, test_size = sizes or DEFAULT_SIZES[spec.kind]
    children = np.random.SeedSequence(seed).spawn(4)
    offsets = np.cumsum([0, train_size, val_size])

    if spec.kind == 'classification':
        def generate(count, rng, role, offset):
            return generate_classification_data(spec.num_classes, count,
                                                spec.resolution, rng=rng,
                                                noise=spec.noise, role=role,
                                                id_offset=offset)
        train_role = 'pretrain_train'
    else:
        def generate(count, rng, role, offset):
            return generate_localization_data(count, spec.resolution, rng=rng,
                                              noise=spec.noise, role=role,
                                              id_offset=offset)
        train_role = 'finetune_train'

    train = generate(train_size, np.random.default_rng(children[0]), train_role, offsets[0])
    validation = generate(val_size, np.random.default_rng(children[1]),
                          'search_validation', offsets[1])
    test = generate(test_size, np.random.default_rng(children[2]), 'test', offsets[2])

    calibration_size = min(calibration_size, train_size)
    picks = np.sort(np.random.default_rng(children[3]).choice(train_size, calibration_size,
                                                              replace=False))
    calibration = train.subset(picks, role='bn_calibration')

    log.debug("Generated {0} task: {1} train, {2} validation, {3} test, {4} "
              "calibration items".format(spec.kind, train_size, val_size,
                                         test_size, calibration_size))

    return TaskData(spec, train, validation, test, calibration)
