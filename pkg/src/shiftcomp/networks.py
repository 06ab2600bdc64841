"""Configurable fully connected networks on the autodiff core.

Three roles share this machinery: a feature extractor whose layers are
all ReLU, a domain discriminator ending in a sigmoid probability, and a
multi-label classifier ending in raw logits.  The extractor's parameter
tensors are shared by reference wherever its features are consumed, so
gradients from every consumer accumulate on the same leaves.
"""

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, constant, parameter
from .errors import ShapeError

ACTIVATIONS = ("relu", "none")
HEADS = ("linear", "sigmoid")


@dataclass(frozen=True)
class MlpSpec:
    """Layer plan for one network.

    ``widths`` lists node counts from input to output, so a spec with a
    single width describes a zero-depth identity network.  Activations
    and dropout keep-probabilities are given per weight layer; dropout
    is applied after the activation, inverted so eval mode needs no
    rescaling.  ``standardize`` recenters each hidden layer's
    pre-activations to per-batch zero mean and unit variance using
    detached statistics.
    """

    widths: tuple = ()
    activations: tuple = ()
    keep_probs: tuple = ()
    head: str = "linear"
    standardize: bool = False

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        object.__setattr__(self, "widths", widths)
        object.__setattr__(self, "activations", tuple(self.activations))
        object.__setattr__(self, "keep_probs", tuple(float(k) for k in self.keep_probs))
        if len(widths) < 1:
            raise ValueError("spec needs at least the input width")
        if any(w <= 0 for w in widths):
            raise ValueError(f"widths must be positive, got {widths}")
        n_layers = len(widths) - 1
        if len(self.activations) != n_layers:
            raise ValueError(f"need {n_layers} activations, got {len(self.activations)}")
        if any(a not in ACTIVATIONS for a in self.activations):
            raise ValueError(f"activations must be in {ACTIVATIONS}")
        if len(self.keep_probs) != n_layers:
            raise ValueError(f"need {n_layers} keep probabilities, got {len(self.keep_probs)}")
        if any(not 0.0 < k <= 1.0 for k in self.keep_probs):
            raise ValueError(f"keep probabilities must be in (0, 1], got {self.keep_probs}")
        if self.head not in HEADS:
            raise ValueError(f"head must be in {HEADS}, got {self.head!r}")

    @property
    def n_layers(self):
        return len(self.widths) - 1

    @property
    def in_width(self):
        return self.widths[0]

    @property
    def out_width(self):
        return self.widths[-1]


class Network:
    """An MLP instance: spec plus trainable weight and bias tensors."""

    def __init__(self, spec, weights, biases):
        self.spec = spec
        self.weights = list(weights)
        self.biases = list(biases)
        self.mode = "train"
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            want_w = (spec.widths[i], spec.widths[i + 1])
            if w.shape != want_w or b.shape != (1, spec.widths[i + 1]):
                raise ShapeError(f"layer {i} parameter shapes inconsistent with spec")

    def params(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def set_mode(self, mode):
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        self.mode = mode

    def forward(self, x, rng=None):
        """Run the network on a batch.

        In train mode an rng is required whenever any layer drops units;
        eval mode is deterministic and never consumes randomness.
        """
        if not isinstance(x, Tensor):
            x = constant(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.spec.in_width:
            raise ShapeError(
                f"input width {x.shape[1]} does not match spec width {self.spec.in_width}")
        h = x
        last = self.spec.n_layers - 1
        for i in range(self.spec.n_layers):
            h = h @ self.weights[i] + self.biases[i]
            if self.spec.standardize and i < last:
                h = _standardize_batch(h)
            if self.spec.activations[i] == "relu":
                h = h.relu()
            keep = self.spec.keep_probs[i]
            if self.mode == "train" and keep < 1.0:
                if rng is None:
                    raise ValueError("train-mode forward with dropout requires an rng")
                mask = (rng.random(h.shape) < keep) / keep
                h = h * constant(mask)
        if self.spec.head == "sigmoid":
            h = h.sigmoid()
        return h


def _standardize_batch(h):
    """Center and scale columns using detached per-batch statistics."""
    mu = h.values.mean(axis=0, keepdims=True)
    sd = h.values.std(axis=0, keepdims=True) + 1e-8
    inv = np.broadcast_to(1.0 / sd, h.shape).copy()
    return (h - constant(mu)) * constant(inv)


def build_mlp(spec, rng):
    """Initialize a network: He-uniform weights, zero biases."""
    weights = []
    biases = []
    for i in range(spec.n_layers):
        fan_in = spec.widths[i]
        bound = np.sqrt(6.0 / fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, spec.widths[i + 1]))
        weights.append(parameter(w))
        biases.append(parameter(np.zeros((1, spec.widths[i + 1]))))
    return Network(spec, weights, biases)


def extract_features(g, x, rng=None):
    """Encode a batch with the shared feature extractor."""
    return g.forward(x, rng=rng)


def discriminate(d, feats, rng=None):
    """Probability that each feature row came from the training domain."""
    if d.spec.head != "sigmoid":
        raise ValueError("discriminator networks need a sigmoid head")
    if d.spec.out_width != 1:
        raise ShapeError(f"discriminator output width must be 1, got {d.spec.out_width}")
    return d.forward(feats, rng=rng)


def classify(c, feats, rng=None):
    """Raw per-label logits; probabilities are taken inside losses and metrics."""
    if c.spec.head != "linear":
        raise ValueError("classifier networks need a linear head")
    return c.forward(feats, rng=rng)


def feature_extractor_spec(in_width, hidden=(64, 128, 64), keep=1.0, standardize=False):
    """All-ReLU extractor; its last width is the shared feature dimension."""
    widths = (in_width,) + tuple(hidden)
    n = len(widths) - 1
    return MlpSpec(widths=widths, activations=("relu",) * n,
                   keep_probs=(keep,) * n, head="linear", standardize=standardize)


def discriminator_spec(in_width, hidden=(64, 32), keep=1.0, standardize=False):
    """ReLU hidden layers, an unactivated last layer, sigmoid head."""
    widths = (in_width,) + tuple(hidden) + (1,)
    n_hidden = len(hidden)
    return MlpSpec(widths=widths,
                   activations=("relu",) * n_hidden + ("none",),
                   keep_probs=(keep,) * n_hidden + (1.0,),
                   head="sigmoid", standardize=standardize)


def classifier_spec(in_width, n_labels, hidden=(64, 32), keep=1.0, standardize=False):
    """ReLU hidden layers, an unactivated logit layer."""
    widths = (in_width,) + tuple(hidden) + (n_labels,)
    n_hidden = len(hidden)
    return MlpSpec(widths=widths,
                   activations=("relu",) * n_hidden + ("none",),
                   keep_probs=(keep,) * n_hidden + (1.0,),
                   head="linear", standardize=standardize)
