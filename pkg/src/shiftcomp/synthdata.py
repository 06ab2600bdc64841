"""Synthetic covariate-shift benchmarks with exact density ratios.

Two generator families: a Gaussian location-shift fixture whose ratio
has a closed form, and a spatial citizen-science simulator where
training observations concentrate around hotspot centers while test and
validation sets are drawn uniformly over the grid.  Both attach a
DensityOracle holding closed-form log densities and the shared label
rule, so the true shift factor is available at every sample.

Spatial densities are piecewise constant: locations are drawn as a grid
cell (with exact cell probabilities) plus uniform within-cell jitter.
That keeps the true ratio a finite table of cell values instead of an
approximation.
"""

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit
from scipy.stats import multivariate_normal, norm

from .errors import ShapeError, SupportViolationError

DOMAINS = ("train", "test", "val", "unlabeled")


class LabelRule:
    """Shared stochastic labeling, identical across every domain.

    Without ``centers``: y_l ~ Bernoulli(sigmoid(x[cols] @ w_l + b_l)).
    With ``centers`` (same shape as weights): a quadratic response,
    logit_l = b_l + sum_k w_lk * (x_k - c_lk)^2, which with negative
    curvatures gives each label a bell-shaped preference region instead
    of a monotone one.  One rule object serves every domain of a
    generated benchmark, which is what makes the label distribution
    shift-free by construction.
    """

    def __init__(self, weights, biases, feature_slice=None, centers=None):
        self.weights = np.asarray(weights, dtype=np.float64)
        self.biases = np.asarray(biases, dtype=np.float64).ravel()
        if self.weights.ndim != 2 or self.weights.shape[0] != self.biases.size:
            raise ShapeError("label rule needs (L, k) weights and L biases")
        self.centers = None if centers is None else \
            np.asarray(centers, dtype=np.float64)
        if self.centers is not None and self.centers.shape != self.weights.shape:
            raise ShapeError(
                f"centers shape {self.centers.shape} must match weights "
                f"{self.weights.shape}")
        self.feature_slice = feature_slice

    @property
    def n_labels(self):
        return self.weights.shape[0]

    def _inputs(self, features):
        features = np.asarray(features, dtype=np.float64)
        if self.feature_slice is not None:
            features = features[:, self.feature_slice]
        if features.shape[1] != self.weights.shape[1]:
            raise ShapeError(
                f"rule expects {self.weights.shape[1]} columns, got {features.shape[1]}")
        return features

    def probs(self, features):
        h = self._inputs(features)
        if self.centers is None:
            logits = h @ self.weights.T + self.biases
        else:
            gap = h[:, None, :] - self.centers[None, :, :]
            logits = (self.weights[None, :, :] * gap * gap).sum(axis=2) \
                + self.biases
        return expit(logits)

    def sample(self, features, rng):
        p = self.probs(features)
        return (rng.random(p.shape) < p).astype(np.float64)

    def to_meta(self):
        sl = self.feature_slice
        return {
            "weights": self.weights.tolist(),
            "biases": self.biases.tolist(),
            "slice": None if sl is None else [sl.start, sl.stop],
            "centers": None if self.centers is None else self.centers.tolist(),
        }

    @staticmethod
    def from_meta(meta):
        sl = meta["slice"]
        centers = meta.get("centers")
        return LabelRule(np.array(meta["weights"]), np.array(meta["biases"]),
                         None if sl is None else slice(sl[0], sl[1]),
                         centers=None if centers is None else np.array(centers))


@dataclass
class DensityOracle:
    """Closed-form log densities plus the shared label rule."""

    log_p: callable
    log_q: callable
    label_rule: LabelRule
    meta: dict = field(default_factory=dict)


@dataclass
class Dataset:
    """Feature matrix with optional multi-label targets and a domain tag."""

    features: np.ndarray
    labels: np.ndarray
    domain: str
    oracle: DensityOracle = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ShapeError("features must be a 2-D matrix")
        if self.domain not in DOMAINS:
            raise ValueError(f"domain must be in {DOMAINS}, got {self.domain!r}")
        if self.labels is None:
            if self.domain != "unlabeled":
                raise ValueError(f"{self.domain!r} split requires labels")
        else:
            self.labels = np.asarray(self.labels, dtype=np.float64)
            if self.labels.shape[0] != self.features.shape[0]:
                raise ShapeError("label rows must align with feature rows")

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]


def true_shift_factor(oracle, x):
    """Exact q(x)/p(x); raises when the training density vanishes there."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    log_p = oracle.log_p(x)
    log_q = oracle.log_q(x)
    bad = np.isneginf(log_p)
    if bad.any():
        raise SupportViolationError(
            f"{int(bad.sum())} points lie outside the training support")
    return np.exp(log_q - log_p)


# -- Gaussian location shift --------------------------------------------------

def gen_gaussian_shift(n_p, n_q, dim=1, mean_p=0.0, mean_q=1.0, shared_cov=None,
                       label_rule=None, rng=None, n_labels=1):
    """Train features ~ N(mean_p, C), test ~ N(mean_q, C), shared labels.

    With the 1-D defaults the true ratio is exp(x - 1/2).  A random
    logistic label rule is drawn from ``rng`` unless one is supplied.
    """
    if rng is None:
        raise ValueError("an rng is required")
    mean_p = np.broadcast_to(np.asarray(mean_p, dtype=np.float64), dim).copy()
    mean_q = np.broadcast_to(np.asarray(mean_q, dtype=np.float64), dim).copy()
    if shared_cov is None:
        shared_cov = np.eye(dim)
    shared_cov = np.asarray(shared_cov, dtype=np.float64)
    if shared_cov.shape != (dim, dim):
        raise ShapeError(f"covariance must be {dim}x{dim}")
    try:
        chol = np.linalg.cholesky(shared_cov)
    except np.linalg.LinAlgError as err:
        raise ValueError("covariance must be positive-definite") from err

    if label_rule is None:
        w = rng.normal(scale=2.0 / np.sqrt(dim), size=(n_labels, dim))
        b = rng.normal(scale=0.5, size=n_labels)
        label_rule = LabelRule(w, b)

    x_p = mean_p + rng.standard_normal((n_p, dim)) @ chol.T
    x_q = mean_q + rng.standard_normal((n_q, dim)) @ chol.T
    y_p = label_rule.sample(x_p, rng)
    y_q = label_rule.sample(x_q, rng)

    oracle = _gaussian_oracle(mean_p, mean_q, shared_cov, label_rule)
    ds_p = Dataset(x_p, y_p, "train", oracle)
    ds_q = Dataset(x_q, y_q, "test", oracle)
    return ds_p, ds_q, oracle


def _gaussian_oracle(mean_p, mean_q, cov, label_rule):
    rv_p = multivariate_normal(mean=mean_p, cov=cov)
    rv_q = multivariate_normal(mean=mean_q, cov=cov)
    meta = {
        "generator": "gaussian_shift",
        "mean_p": np.asarray(mean_p).tolist(),
        "mean_q": np.asarray(mean_q).tolist(),
        "cov": np.asarray(cov).tolist(),
        "label_rule": label_rule.to_meta(),
    }
    return DensityOracle(
        log_p=lambda x: rv_p.logpdf(np.asarray(x)).reshape(-1),
        log_q=lambda x: rv_q.logpdf(np.asarray(x)).reshape(-1),
        label_rule=label_rule,
        meta=meta,
    )


# -- Spatial citizen-science simulator ----------------------------------------

class HabitatFields:
    """Smooth random scalar fields over the grid, one per habitat variable.

    Each field is a short sum of low-frequency cosines; coefficients are
    stored so fields rebuild exactly from serialized metadata.
    """

    def __init__(self, freqs, phases, amps):
        self.freqs = np.asarray(freqs, dtype=np.float64)    # (H, K, 2)
        self.phases = np.asarray(phases, dtype=np.float64)  # (H, K)
        self.amps = np.asarray(amps, dtype=np.float64)      # (H, K)

    @property
    def n_fields(self):
        return self.freqs.shape[0]

    @staticmethod
    def random(n_fields, grid_size, rng, n_terms=6):
        base = 2.0 * np.pi / grid_size
        modes = rng.integers(0, 4, size=(n_fields, n_terms, 2)).astype(np.float64)
        # kill the constant mode so fields stay centered
        flat = (modes == 0.0).all(axis=2)
        modes[..., 0][flat] = 1.0
        freqs = base * modes
        phases = rng.uniform(0.0, 2.0 * np.pi, size=(n_fields, n_terms))
        amps = rng.normal(scale=1.0 / np.sqrt(n_terms / 2.0), size=(n_fields, n_terms))
        return HabitatFields(freqs, phases, amps)

    def evaluate(self, locations):
        locations = np.asarray(locations, dtype=np.float64)
        h, k = self.amps.shape
        angles = locations @ self.freqs.reshape(h * k, 2).T + self.phases.reshape(-1)
        terms = np.cos(angles).reshape(-1, h, k)
        return np.einsum("nhk,hk->nh", terms, self.amps)

    def to_meta(self):
        return {"freqs": self.freqs.tolist(), "phases": self.phases.tolist(),
                "amps": self.amps.tolist()}

    @staticmethod
    def from_meta(meta):
        return HabitatFields(np.array(meta["freqs"]), np.array(meta["phases"]),
                             np.array(meta["amps"]))


def spatial_cell_probs(grid_size, hotspot_centers, hotspot_strength, hotspot_sigma):
    """Exact training probability of each grid cell.

    Uniform floor mixed with grid-truncated isotropic Gaussians around
    each hotspot; the floor keeps p positive wherever q is.
    """
    g = int(grid_size)
    centers = np.atleast_2d(np.asarray(hotspot_centers, dtype=np.float64))
    if not 0.0 <= hotspot_strength < 1.0:
        raise ValueError(f"hotspot strength must be in [0, 1), got {hotspot_strength}")
    edges = np.arange(g + 1, dtype=np.float64)
    p = np.full((g, g), (1.0 - hotspot_strength) / (g * g))
    if hotspot_strength > 0.0 and len(centers) > 0:
        per_spot = np.zeros((g, g))
        for cx, cy in centers:
            if not (0.0 <= cx <= g and 0.0 <= cy <= g):
                raise ValueError(f"hotspot ({cx}, {cy}) outside the grid")
            mx = np.diff(norm.cdf((edges - cx) / hotspot_sigma))
            my = np.diff(norm.cdf((edges - cy) / hotspot_sigma))
            mass = np.outer(mx, my)
            per_spot += mass / mass.sum()
        p += hotspot_strength * per_spot / len(centers)
    return p


def gen_spatial_bias(grid_size, n_obs, hotspot_centers, hotspot_strength,
                     n_species, habitat_fields=16, rng=None,
                     hotspot_sigma=None, n_test=None, n_val=None):
    """Hotspot-biased training set; uniform test and validation sets.

    Features are [x, y, habitat values at (x, y)].  Returns the three
    datasets plus the oracle holding exact cell densities.
    """
    if rng is None:
        raise ValueError("an rng is required")
    g = int(grid_size)
    if g < 8:
        raise ValueError(f"grid size must be >= 8, got {g}")
    if hotspot_sigma is None:
        hotspot_sigma = g / 8.0
    n_test = int(n_obs) // 5 if n_test is None else int(n_test)
    n_val = max(n_test // 2, 1) if n_val is None else int(n_val)

    p_cells = spatial_cell_probs(g, hotspot_centers, hotspot_strength, hotspot_sigma)
    habitat = HabitatFields.random(habitat_fields, g, rng)
    # each species occupies a geographic range (bell over x, y) plus a
    # niche in a few habitat variables; negative curvature around the
    # optimum, flat response on inactive variables
    n_active = min(3, habitat_fields)
    k = 2 + habitat_fields
    w = np.zeros((n_species, k))
    centers = np.zeros((n_species, k))
    centers[:, :2] = rng.uniform(0.0, g, size=(n_species, 2))
    radius = rng.uniform(g / 4.0, g / 2.0, size=n_species)
    w[:, :2] = (-1.0 / (2.0 * radius * radius))[:, None]
    centers[:, 2:] = rng.uniform(-1.2, 1.2, size=(n_species, habitat_fields))
    for li in range(n_species):
        active = 2 + rng.choice(habitat_fields, size=n_active, replace=False)
        w[li, active] = -(0.5 + np.abs(rng.normal(size=n_active)))
    b = rng.uniform(1.0, 2.5, size=n_species)
    label_rule = LabelRule(w, b, centers=centers)
    oracle = _spatial_oracle(g, hotspot_centers, hotspot_strength, hotspot_sigma,
                             habitat, label_rule)

    def make_split(n, domain, uniform):
        if uniform:
            locs = rng.random((n, 2)) * g
        else:
            flat = rng.choice(g * g, size=n, p=p_cells.ravel())
            cells = np.column_stack(np.unravel_index(flat, (g, g)))
            locs = cells + rng.random((n, 2))
        feats = np.column_stack([locs, habitat.evaluate(locs)])
        labels = label_rule.sample(feats, rng)
        return Dataset(feats, labels, domain, oracle)

    ds_train = make_split(int(n_obs), "train", uniform=False)
    ds_test = make_split(n_test, "test", uniform=True)
    ds_val = make_split(n_val, "val", uniform=True)
    return ds_train, ds_test, ds_val, oracle


def _spatial_oracle(grid_size, hotspot_centers, hotspot_strength, hotspot_sigma,
                    habitat, label_rule):
    g = int(grid_size)
    p_cells = spatial_cell_probs(g, hotspot_centers, hotspot_strength, hotspot_sigma)
    q_cell = 1.0 / (g * g)

    def cell_lookup(x):
        x = np.asarray(x, dtype=np.float64)
        locs = x[:, :2]
        inside = ((locs >= 0.0) & (locs < g)).all(axis=1)
        idx = np.clip(np.floor(locs), 0, g - 1).astype(int)
        return inside, idx

    def log_p(x):
        inside, idx = cell_lookup(x)
        # within-cell jitter is uniform on a unit cell, so the density
        # at a point is just its cell probability
        vals = np.where(inside, p_cells[idx[:, 0], idx[:, 1]], 0.0)
        with np.errstate(divide="ignore"):
            return np.log(vals)

    def log_q(x):
        inside, _ = cell_lookup(x)
        with np.errstate(divide="ignore"):
            return np.where(inside, np.log(q_cell), -np.inf)

    meta = {
        "generator": "spatial_bias",
        "grid_size": g,
        "hotspot_centers": np.atleast_2d(np.asarray(hotspot_centers, dtype=np.float64)).tolist(),
        "hotspot_strength": float(hotspot_strength),
        "hotspot_sigma": float(hotspot_sigma),
        "habitat": habitat.to_meta(),
        "label_rule": label_rule.to_meta(),
    }
    return DensityOracle(log_p=log_p, log_q=log_q, label_rule=label_rule, meta=meta)


def oracle_from_meta(meta):
    """Rebuild a DensityOracle from a serialized metadata dictionary."""
    kind = meta.get("generator")
    if kind == "gaussian_shift":
        return _gaussian_oracle(np.array(meta["mean_p"]), np.array(meta["mean_q"]),
                                np.array(meta["cov"]),
                                LabelRule.from_meta(meta["label_rule"]))
    if kind == "spatial_bias":
        return _spatial_oracle(meta["grid_size"], np.array(meta["hotspot_centers"]),
                               meta["hotspot_strength"], meta["hotspot_sigma"],
                               HabitatFields.from_meta(meta["habitat"]),
                               LabelRule.from_meta(meta["label_rule"]))
    raise ValueError(f"unknown generator {kind!r}")


# -- serialization -------------------------------------------------------------

def save_dataset(ds, path, seed=None):
    """Write features/labels/domain as CSV plus a JSON metadata sidecar."""
    path = Path(path)
    n_labels = 0 if ds.labels is None else ds.labels.shape[1]
    header = [f"f{j}" for j in range(ds.dim)] + [f"y{j}" for j in range(n_labels)] + ["domain"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(ds.n):
            row = [f"{v:.17g}" for v in ds.features[i]]
            if ds.labels is not None:
                row += [f"{int(v)}" for v in ds.labels[i]]
            row.append(ds.domain)
            writer.writerow(row)
    sidecar = {"domain": ds.domain, "n": ds.n, "dim": ds.dim, "n_labels": n_labels,
               "seed": seed}
    if ds.oracle is not None:
        sidecar["oracle"] = ds.oracle.meta
    with open(path.with_suffix(path.suffix + ".meta.json"), "w") as fh:
        json.dump(sidecar, fh, indent=2)


def load_dataset(path):
    """Read a dataset CSV; rebuild its oracle when the sidecar has one."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    feat_cols = [j for j, name in enumerate(header) if name.startswith("f")]
    label_cols = [j for j, name in enumerate(header) if name.startswith("y")]
    dom_col = header.index("domain")
    feats = np.array([[float(r[j]) for j in feat_cols] for r in rows])
    labels = None
    if label_cols:
        labels = np.array([[float(r[j]) for j in label_cols] for r in rows])
    domain = rows[0][dom_col] if rows else "unlabeled"

    oracle = None
    sidecar_path = path.with_suffix(path.suffix + ".meta.json")
    if sidecar_path.exists():
        with open(sidecar_path) as fh:
            sidecar = json.load(fh)
        if "oracle" in sidecar:
            oracle = oracle_from_meta(sidecar["oracle"])
    return Dataset(feats, labels, domain, oracle)
