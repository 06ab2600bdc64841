"""Shift-factor estimation and the losses that train it.

The discriminator convention is fixed throughout: D(G(x)) is the
probability that x came from the training domain P, so the density
ratio q(x)/p(x) is recovered as (1 - D)/D.  The matching loss compares
a bias-corrected moving average of the weighted training feature mean
against the same average of the test feature mean; both averages store
raw accumulator state and apply the correction on read.
"""

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, constant
from .errors import GraphError, ShapeError

WEIGHT_CAP = 1e6
WEIGHT_SOURCES = ("scn", "kde", "kliep", "dfw", "oracle", "uniform")


@dataclass
class ShiftWeights:
    """Per-sample density-ratio estimates aligned with the training rows."""

    values: np.ndarray
    source: str
    converged: bool = True

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64).ravel()
        if arr.size == 0:
            raise ShapeError("weights must be non-empty")
        if not np.isfinite(arr).all():
            raise ValueError("weights must be finite")
        if (arr < 0.0).any():
            raise ValueError("weights must be nonnegative")
        if self.source not in WEIGHT_SOURCES:
            raise ValueError(f"source must be in {WEIGHT_SOURCES}, got {self.source!r}")
        self.values = arr

    def __len__(self):
        return self.values.size

    def normalized(self):
        """Same weights rescaled to mean 1 over the training set."""
        mean = self.values.mean()
        if mean <= 0.0:
            raise ValueError("cannot normalize weights with nonpositive mean")
        return ShiftWeights(self.values / mean, self.source, self.converged)


def uniform_weights(n):
    return ShiftWeights(np.ones(int(n)), "uniform")


def shift_factor(d_prob):
    """Density ratio from a training-domain probability: w = (1 - d)/d.

    Accepts a graph tensor (clamped upstream by the sigmoid, so the
    result is already bounded) or a plain array, which is clamped here
    and capped at 1e6.
    """
    if isinstance(d_prob, Tensor):
        return (1.0 - d_prob) / d_prob
    d = np.clip(np.asarray(d_prob, dtype=np.float64), 1e-6, 1.0 - 1e-6)
    return np.minimum((1.0 - d) / d, WEIGHT_CAP)


def discriminative_loss(d_p, d_q):
    """Average domain log-likelihood, half weight per domain.

    Maximized during training: high when P-samples score near 1 and
    Q-samples near 0.
    """
    if d_p.shape[1] != 1 or d_q.shape[1] != 1:
        raise ShapeError("discriminator outputs must be column vectors")
    return d_p.log().mean("all") * 0.5 + (1.0 - d_q).log().mean("all") * 0.5


class MovingMean:
    """Decayed average of batch mean vectors with startup-bias correction.

    The raw accumulator starts at zero, so early reads are shrunk toward
    zero; dividing by (1 - alpha^t) undoes that exactly.  Gradients flow
    only through the current batch's contribution; history is folded in
    as a constant.
    """

    def __init__(self, width, alpha):
        width = int(width)
        alpha = float(alpha)
        if width <= 0:
            raise ShapeError(f"width must be positive, got {width}")
        if not 0.0 <= alpha < 1.0:
            raise ValueError(f"alpha must be in [0, 1), got {alpha}")
        self.width = width
        self.alpha = alpha
        self.t = 0
        self.raw = np.zeros((1, width))

    def update(self, batch_mean):
        """Fold one batch mean in; return the bias-corrected average.

        The return value is graph-connected to ``batch_mean``, so losses
        built from it backpropagate into whatever produced the batch.
        """
        if not isinstance(batch_mean, Tensor):
            batch_mean = constant(np.asarray(batch_mean, dtype=np.float64).reshape(1, -1))
        if batch_mean.shape != (1, self.width):
            raise ShapeError(
                f"batch mean shape {batch_mean.shape} does not match (1, {self.width})")
        self.t += 1
        new_raw = constant(self.alpha * self.raw) + batch_mean * (1.0 - self.alpha)
        self.raw = new_raw.values.copy()
        corrected = new_raw * (1.0 / (1.0 - self.alpha ** self.t))
        return corrected


def update_moving_mean(mm, batch_mean):
    """Functional wrapper: mutate the accumulator, return (mm, corrected)."""
    corrected = mm.update(batch_mean)
    return mm, corrected


def weighted_feature_mean(w, feats):
    """(1/b) sum_i w_i * feats_i as a 1 x h graph tensor."""
    if w.shape != (feats.shape[0], 1):
        raise ShapeError(f"weights {w.shape} must be a column aligned with {feats.shape}")
    return (w.T @ feats) * (1.0 / feats.shape[0])


def fsmm_loss(mq_corrected, mp_corrected):
    """Euclidean distance between the two corrected mean vectors."""
    if mq_corrected.shape != mp_corrected.shape:
        raise ShapeError(
            f"mean widths differ: {mq_corrected.shape} vs {mp_corrected.shape}")
    return (mq_corrected - mp_corrected).l2norm()


def feature_discrepancy(w, feats_p, feats_q):
    """Distance between weighted-P and Q feature means, per feature dimension.

    Computed over full arrays with no moving average; this is the
    diagnostic number reported by the CLI's diagnose verb.
    """
    values = w.values if isinstance(w, ShiftWeights) else np.asarray(w, dtype=np.float64).ravel()
    feats_p = np.asarray(feats_p, dtype=np.float64)
    feats_q = np.asarray(feats_q, dtype=np.float64)
    if values.shape[0] != feats_p.shape[0]:
        raise ShapeError(
            f"{values.shape[0]} weights misaligned with {feats_p.shape[0]} rows")
    if feats_p.shape[1] != feats_q.shape[1]:
        raise ShapeError(
            f"feature widths differ: {feats_p.shape[1]} vs {feats_q.shape[1]}")
    mp = (values[:, None] * feats_p).mean(axis=0)
    mq = feats_q.mean(axis=0)
    return float(np.linalg.norm(mq - mp) / feats_p.shape[1])


def weighted_classification_loss(logits, targets, w):
    """Mean over the batch of w_i times the summed per-label cross-entropy.

    Weights must be constants: a plain array or a detached leaf tensor.
    Anything still attached to the graph (or trainable) is rejected so
    the classification step can never push gradient into the
    discriminator.
    """
    if isinstance(w, Tensor):
        if not w.is_leaf or w.requires_grad:
            raise GraphError("weights must be detached constants")
        w_col = w
    else:
        w_col = constant(np.asarray(w, dtype=np.float64).reshape(-1, 1))
    if not isinstance(targets, Tensor):
        targets = constant(np.asarray(targets, dtype=np.float64))
    if logits.shape != targets.shape:
        raise ShapeError(f"logits {logits.shape} vs targets {targets.shape}")
    if w_col.shape != (logits.shape[0], 1):
        raise ShapeError(
            f"weights {w_col.shape} must be a column aligned with batch {logits.shape[0]}")
    probs = logits.sigmoid()
    bce = -(targets * probs.log() + (1.0 - targets) * (1.0 - probs).log())
    per_sample = bce.sum("cols")
    return (per_sample * w_col).mean("all")
