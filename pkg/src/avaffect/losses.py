"""Training objective and evaluation metrics.

The composite objective is
    L = L_ccc + lambda_mse * L_mse + lambda_ce * L_ce
where L_ccc is (1 - CCC) averaged over the valence and arousal dimensions,
L_mse is a mean (so the lambdas are batch-size independent), and L_ce is a
minority-weighted cross entropy over the 24-class polar discretization of
the label square.

CCC uses population (1/N) normalization for covariance and variances, which
keeps the (mu_x - mu_y)^2 term in the denominator commensurate. Training
computes CCC per mini-batch over the flattened batch x time values;
evaluation computes it globally per split.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

N_RINGS = 3
N_SECTORS = 8
N_CLASSES = N_RINGS * N_SECTORS
_R_MAX = np.sqrt(2.0)
_RING_EDGES = (_R_MAX / 3.0, 2.0 * _R_MAX / 3.0)
_SECTOR_WIDTH = np.pi / 4.0


@dataclass(frozen=True)
class LossWeights:
    """Weights of the MSE and cross-entropy terms in the total loss."""

    lambda_mse: float
    lambda_ce: float

    def __post_init__(self):
        if self.lambda_mse < 0 or self.lambda_ce < 0:
            raise ValueError("loss weights must be nonnegative")


# -- concordance correlation -----------------------------------------------------


def ccc_with_flag(x: np.ndarray, y: np.ndarray) -> tuple[float, bool]:
    """Concordance correlation with a degenerate-input flag.

    Returns (2*cov / (var_x + var_y + (mu_x - mu_y)^2), degenerate) with
    population-normalized moments. When both series are constant with equal
    means the denominator vanishes; the value is defined as 0 and the flag
    is set.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise ValueError(f"ccc: series lengths differ ({x.size} vs {y.size})")
    if x.size < 2:
        raise ValueError("ccc: need at least 2 samples")
    mx, my = x.mean(), y.mean()
    dx, dy = x - mx, y - my
    vx, vy = (dx * dx).mean(), (dy * dy).mean()
    cov = (dx * dy).mean()
    denom = vx + vy + (mx - my) ** 2
    if denom == 0.0:
        return 0.0, True
    return float(2.0 * cov / denom), False


def ccc(x: np.ndarray, y: np.ndarray) -> float:
    return ccc_with_flag(x, y)[0]


def _ccc_tensor(pred: Tensor, target: Tensor) -> tuple[Tensor, bool]:
    """Differentiable CCC of two flat series; degenerate inputs give a
    constant 0 with the flag set."""
    n = pred.size
    if n != target.size:
        raise T.ShapeMismatch("ccc", pred.shape, target.shape)
    p = T.reshape(pred, (n,))
    t = T.reshape(target, (n,))
    mp = T.tmean(p)
    mt = T.tmean(t)
    dp = p - T.broadcast_to(T.reshape(mp, (1,)), (n,))
    dt = t - T.broadcast_to(T.reshape(mt, (1,)), (n,))
    cov = T.tmean(dp * dt)
    vp = T.tmean(dp * dp)
    vt = T.tmean(dt * dt)
    dmean = mp - mt
    denom = vp + vt + dmean * dmean
    if float(denom.data) == 0.0:
        return Tensor(np.zeros((), dtype=pred.dtype)), True
    return (2.0 * cov) / denom, False


def ccc_loss(pred: Tensor, target: Tensor) -> tuple[Tensor, bool]:
    """(1 - CCC) per affect dimension, averaged over the two dimensions.

    pred/target: (..., 2) with the last axis = (valence, arousal); all
    leading axes are flattened. Returns (loss, degenerate_flag).
    """
    if pred.shape != target.shape or pred.shape[-1] != 2:
        raise T.ShapeMismatch("ccc_loss", pred.shape, target.shape, detail="expect (..., 2)")
    n = pred.size // 2
    p = T.reshape(pred, (n, 2))
    t = T.reshape(target, (n, 2))
    losses = []
    degenerate = False
    for dim in range(2):
        c, flag = _ccc_tensor(T.narrow(p, 1, dim, 1), T.narrow(t, 1, dim, 1))
        degenerate = degenerate or flag
        losses.append(1.0 - c)
    return (losses[0] + losses[1]) * 0.5, degenerate


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean over all elements of (pred - target)^2."""
    if pred.shape != target.shape:
        raise T.ShapeMismatch("mse_loss", pred.shape, target.shape)
    diff = pred - target
    return T.tmean(diff * diff)


# -- polar discretization -----------------------------------------------------------


def discretize_va(valence, arousal):
    """Map (valence, arousal) in [-1, 1]^2 to one of 24 polar classes.

    Radius r in [0, sqrt(2)] is cut at sqrt(2)/3 and 2*sqrt(2)/3 into three
    rings (left-closed/right-open, outer ring closed at sqrt(2)); the angle
    atan2(arousal, valence) mapped to [0, 2*pi) is cut into eight sectors of
    width pi/4 starting on the positive-valence axis. The origin is sector 0.
    Class index = ring * 8 + sector. Accepts scalars or arrays.
    """
    v = np.asarray(valence, dtype=np.float64)
    a = np.asarray(arousal, dtype=np.float64)
    if np.any(np.abs(v) > 1.0) or np.any(np.abs(a) > 1.0):
        raise ValueError("valence/arousal must lie in [-1, 1]")
    r = np.sqrt(v * v + a * a)
    ring = np.digitize(r, _RING_EDGES)  # 0, 1 or 2; boundaries go to the outer ring
    theta = np.arctan2(a, v)
    theta = np.where(theta < 0.0, theta + 2.0 * np.pi, theta)
    sector = np.minimum(np.floor_divide(theta, _SECTOR_WIDTH).astype(np.int64), N_SECTORS - 1)
    sector = np.where(r == 0.0, 0, sector)
    index = ring * N_SECTORS + sector
    if index.ndim == 0:
        return int(index)
    return index.astype(np.int64)


def class_ring_sector(index: int) -> tuple[int, int]:
    """Inverse of the index packing: index = ring * 8 + sector."""
    if not 0 <= index < N_CLASSES:
        raise ValueError(f"class index out of range: {index}")
    return index // N_SECTORS, index % N_SECTORS


def class_weights(histogram: np.ndarray) -> np.ndarray:
    """Inverse-frequency weights, normalized to mean 1.

    w_c is proportional to total / count_c for present classes; absent
    classes receive the maximum weight among present ones. All 24 weights
    are strictly positive.
    """
    counts = np.asarray(histogram, dtype=np.float64)
    if counts.shape != (N_CLASSES,):
        raise ValueError(f"histogram must have {N_CLASSES} entries, got {counts.shape}")
    total = counts.sum()
    if total <= 0:
        raise ValueError("histogram is empty")
    present = counts > 0
    raw = np.empty(N_CLASSES, dtype=np.float64)
    raw[present] = total / counts[present]
    if not present.all():
        raw[~present] = raw[present].max() if present.any() else 1.0
    return raw / raw.mean()


def weighted_cross_entropy(logits: Tensor, classes: np.ndarray, weights: np.ndarray) -> Tensor:
    """Weighted mean of -log softmax(logits)[class].

    Normalized by the mean of the applied weights, so uniform weights
    reproduce plain cross-entropy and rescaling all weights is a no-op.
    """
    if logits.ndim != 2 or logits.shape[1] != N_CLASSES:
        raise T.ShapeMismatch("weighted_cross_entropy", logits.shape, detail=f"expect (N, {N_CLASSES})")
    if not np.isfinite(logits.data).all():
        raise T.NonFiniteError("weighted_cross_entropy: non-finite logits")
    classes = np.asarray(classes).reshape(-1)
    if classes.shape[0] != logits.shape[0]:
        raise T.ShapeMismatch("weighted_cross_entropy", logits.shape, classes.shape)
    if classes.min() < 0 or classes.max() >= N_CLASSES:
        raise ValueError("class indices out of range")
    applied = np.asarray(weights, dtype=np.float64)[classes]
    onehot = np.zeros(logits.shape, dtype=logits.dtype)
    onehot[np.arange(classes.shape[0]), classes] = 1.0
    scale = applied / applied.mean()
    log_p = T.log_softmax(logits)
    picked = T.tsum(log_p * Tensor(onehot), axis=1)
    return -T.tmean(picked * Tensor(scale.astype(logits.dtype.type)))


@dataclass
class LossParts:
    """Total objective plus its unweighted components for history records."""

    total: Tensor
    ccc: float
    mse: float
    ce: float
    degenerate: bool


def total_loss(pred: Tensor, target: Tensor, logits: Tensor, weights: LossWeights,
               cls_weights: np.ndarray | None = None) -> LossParts:
    """L_ccc + lambda_mse * L_mse + lambda_ce * L_ce.

    Target classes are derived from the ground-truth labels via the polar
    discretizer; cls_weights defaults to uniform.
    """
    l_ccc, degenerate = ccc_loss(pred, target)
    l_mse = mse_loss(pred, target)
    flat_t = target.data.reshape(-1, 2)
    classes = discretize_va(np.clip(flat_t[:, 0], -1.0, 1.0), np.clip(flat_t[:, 1], -1.0, 1.0))
    classes = np.atleast_1d(classes)
    if cls_weights is None:
        cls_weights = np.ones(N_CLASSES)
    flat_logits = T.reshape(logits, (logits.size // N_CLASSES, N_CLASSES))
    l_ce = weighted_cross_entropy(flat_logits, classes, cls_weights)
    total = l_ccc + float(weights.lambda_mse) * l_mse + float(weights.lambda_ce) * l_ce
    return LossParts(
        total=total,
        ccc=float(l_ccc.data),
        mse=float(l_mse.data),
        ce=float(l_ce.data),
        degenerate=degenerate,
    )


# -- split-level evaluation ------------------------------------------------------------


@dataclass(frozen=True)
class EvalResult:
    ccc_valence: float
    ccc_arousal: float
    average: float
    degenerate: bool = False

    def as_dict(self) -> dict:
        return {
            "ccc_valence": self.ccc_valence,
            "ccc_arousal": self.ccc_arousal,
            "average": self.average,
        }


def evaluate_predictions(predictions: np.ndarray, labels: np.ndarray) -> EvalResult:
    """Global CCC per affect dimension over concatenated frames, plus the
    average of the two (the model-selection metric)."""
    p = np.asarray(predictions, dtype=np.float64).reshape(-1, 2)
    l = np.asarray(labels, dtype=np.float64).reshape(-1, 2)
    if p.shape != l.shape:
        raise ValueError(f"prediction/label shapes differ: {p.shape} vs {l.shape}")
    if p.shape[0] == 0:
        raise ValueError("empty split: nothing to evaluate")
    cv, fv = ccc_with_flag(p[:, 0], l[:, 0])
    ca, fa = ccc_with_flag(p[:, 1], l[:, 1])
    return EvalResult(cv, ca, (cv + ca) / 2.0, degenerate=fv or fa)
