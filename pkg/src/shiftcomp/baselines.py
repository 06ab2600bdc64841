"""Reference density-ratio estimators to weigh training rows against.

Three practical baselines plus one brute-force oracle:

* ``kde_weights``: estimate both densities with Gaussian product kernels
  and divide.  Honest but hopeless past a handful of dimensions, so a
  hard dimension guard refuses anything wider than 10 columns.
* ``kliep_weights``: direct ratio fitting.  Maximizes the test-set log
  likelihood of a kernel mixture under the constraint that the weights
  average to one over the training rows.
* ``dfw_weights``: train a fresh feature extractor and discriminator on
  the domain classification task alone, then freeze the implied ratios.
  No mean matching and no classifier in the loop; this is the two-stage
  contrast to the joint trainer.
* ``exact_mean_match_oracle``: tiny-n exact mean matching by projected
  gradient, used by tests as a floor on feature-mean discrepancy.
"""

import dataclasses
import warnings

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigError, DimensionGuardError, ShapeError
from .networks import (build_mlp, discriminate, discriminator_spec,
                       extract_features, feature_extractor_spec)
from .optim import Adam
from .rng import make_rng
from .shift import (WEIGHT_CAP, ShiftWeights, discriminative_loss,
                    shift_factor)
from .validation import as_feature_matrix, check_same_width

WEIGHT_FLOOR = 1e-6


def _clamped(w):
    return np.clip(w, WEIGHT_FLOOR, WEIGHT_CAP)


# --------------------------------------------------------------------------
# KDE ratio


def _silverman_bandwidths(x):
    n, d = x.shape
    factor = (n * (d + 2) / 4.0) ** (-1.0 / (d + 4))
    sigma = x.std(axis=0, ddof=1) * factor
    # degenerate columns (zero spread) fall back to a unit kernel
    sigma[sigma == 0.0] = 1.0
    return sigma


def _log_kde(points, centers, sigma, block=2048):
    """Log density of a Gaussian product-kernel estimate at `points`.

    Evaluated in row blocks; the full pairwise tensor would need
    n_points * n_centers * dim floats at once.
    """
    log_norm = np.sum(np.log(sigma * np.sqrt(2.0 * np.pi)))
    out = np.empty(points.shape[0])
    for start in range(0, points.shape[0], block):
        chunk = points[start:start + block]
        z = (chunk[:, None, :] - centers[None, :, :]) / sigma
        log_k = -0.5 * np.sum(z * z, axis=2) - log_norm
        out[start:start + block] = logsumexp(log_k, axis=1)
    return out - np.log(centers.shape[0])


@dataclasses.dataclass
class KdeRatio:
    """Two fitted kernel density estimates, queried as a ratio."""

    x_p: np.ndarray
    x_q: np.ndarray
    sig_p: np.ndarray
    sig_q: np.ndarray

    def weigh(self, x):
        x = as_feature_matrix(x, "x")
        log_p = _log_kde(x, self.x_p, self.sig_p)
        log_q = _log_kde(x, self.x_q, self.sig_q)
        return _clamped(np.exp(log_q - log_p))


def kde_fit(x_p, x_q, bandwidth="silverman"):
    """Estimate both densities with Gaussian product kernels.

    `bandwidth` is either "silverman" (per-dimension rule, computed
    separately for each domain) or a positive float shared by both.
    """
    x_p = as_feature_matrix(x_p, "x_p")
    x_q = as_feature_matrix(x_q, "x_q")
    check_same_width(x_p, x_q, "x_p", "x_q")
    if x_p.shape[0] < 2 or x_q.shape[0] < 2:
        raise ShapeError("need at least 2 samples per domain")
    d = x_p.shape[1]
    if d > 10:
        raise DimensionGuardError(
            f"kernel density ratios degrade badly in high dimension "
            f"(curse of dimensionality); got {d} columns, limit is 10")

    if bandwidth == "silverman":
        sig_p = _silverman_bandwidths(x_p)
        sig_q = _silverman_bandwidths(x_q)
    else:
        sigma = float(bandwidth)
        if sigma <= 0.0:
            raise ConfigError("fixed bandwidth must be positive")
        sig_p = np.full(d, sigma)
        sig_q = np.full(d, sigma)
    return KdeRatio(x_p=x_p, x_q=x_q, sig_p=sig_p, sig_q=sig_q)


def kde_weights(x_p, x_q, bandwidth="silverman"):
    """Plug-in ratio of the two density estimates at the training rows."""
    model = kde_fit(x_p, x_q, bandwidth=bandwidth)
    return ShiftWeights(model.weigh(model.x_p), "kde")


# --------------------------------------------------------------------------
# KLIEP


@dataclasses.dataclass
class KernelModel:
    """Fitted kernel mixture w(x) = sum_c theta_c k(x, c)."""

    centers: np.ndarray
    sigma: float
    theta: np.ndarray
    converged: bool
    objective: float

    def __post_init__(self):
        if self.sigma <= 0.0:
            raise ConfigError("kernel bandwidth must be positive")
        if not np.all(np.isfinite(self.theta)) or np.any(self.theta < 0.0):
            raise ValueError("mixing coefficients must be finite and nonnegative")

    def weigh(self, x):
        x = as_feature_matrix(x, "x")
        return _kernel_matrix(x, self.centers, self.sigma) @ self.theta


def _kernel_matrix(x, centers, sigma):
    d2 = np.sum((x[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    return np.exp(-d2 / (2.0 * sigma * sigma))


def _median_distance(x, rng):
    sub = x if x.shape[0] <= 500 else x[rng.choice(x.shape[0], 500, replace=False)]
    d2 = np.sum((sub[:, None, :] - sub[None, :, :]) ** 2, axis=2)
    med = np.sqrt(np.median(d2[np.triu_indices(sub.shape[0], k=1)]))
    return med if med > 0.0 else 1.0


def _kliep_ascend(k_q, k_p, steps, tol=1e-9):
    """Projected gradient ascent on the test log likelihood.

    After each gradient step, feasibility (theta >= 0, training-mean
    weight = 1) is restored by an orthogonal correction onto the mean
    constraint, a clip, and a final rescale.  The orthogonal correction
    matters: a plain rescale cancels the radial part of the gradient and
    stalls far from the optimum.
    """
    n_q, n_c = k_q.shape
    b = k_p.mean(axis=0)
    b_dot = b @ b

    def project(theta):
        theta = theta + (1.0 - b @ theta) * b / b_dot
        theta = np.maximum(theta, 0.0)
        scale = b @ theta
        if scale <= 0.0:
            theta = np.ones(n_c)
            scale = b @ theta
        return theta / scale

    def objective(theta):
        return np.mean(np.log(np.maximum(k_q @ theta, 1e-300)))

    theta = project(np.ones(n_c))
    best_theta, best_obj = theta, objective(theta)
    lr = 1.0
    converged = False
    for _ in range(steps):
        grad = k_q.T @ (1.0 / np.maximum(k_q @ theta, 1e-300)) / n_q
        lr = min(lr * 2.0, 1.0)  # let the step grow back after backtracking
        cand = project(theta + lr * grad)
        cand_obj = objective(cand)
        while cand_obj < best_obj - 1e-15 and lr > 1e-12:
            lr *= 0.5
            cand = project(theta + lr * grad)
            cand_obj = objective(cand)
        gain = cand_obj - best_obj
        theta = cand
        if cand_obj > best_obj:
            best_theta, best_obj = cand, cand_obj
        if abs(gain) < tol:
            converged = True
            break
    return best_theta, best_obj, converged


def kliep_fit(x_p, x_q, n_centers=100, sigma=None, steps=2000, rng=None):
    """Fit the kernel mixing coefficients; returns the full model.

    With `sigma=None` the bandwidth is picked by 5-fold likelihood
    cross-validation over {0.1, 0.3, 1} times the median Q distance;
    the decade of spread matters more than the exact anchors when the
    ratio has structure much finer than the point cloud.
    """
    x_p = as_feature_matrix(x_p, "x_p")
    x_q = as_feature_matrix(x_q, "x_q")
    check_same_width(x_p, x_q, "x_p", "x_q")
    if rng is None:
        rng = make_rng(0)

    n_q = x_q.shape[0]
    n_centers = min(n_centers, n_q)
    centers = x_q[rng.choice(n_q, n_centers, replace=False)]

    if sigma is None:
        med = _median_distance(x_q, rng)
        grid = [0.1 * med, 0.3 * med, med]
        folds = np.array_split(rng.permutation(n_q), 5)
        scores = []
        for cand in grid:
            k_q_all = _kernel_matrix(x_q, centers, cand)
            k_p = _kernel_matrix(x_p, centers, cand)
            fold_scores = []
            for fold in folds:
                mask = np.ones(n_q, dtype=bool)
                mask[fold] = False
                theta, _, _ = _kliep_ascend(k_q_all[mask], k_p, steps=200)
                held = np.maximum(k_q_all[fold] @ theta, 1e-300)
                fold_scores.append(np.mean(np.log(held)))
            scores.append(np.mean(fold_scores))
        sigma = grid[int(np.argmax(scores))]

    k_q = _kernel_matrix(x_q, centers, sigma)
    k_p = _kernel_matrix(x_p, centers, sigma)
    theta, best_obj, converged = _kliep_ascend(k_q, k_p, steps)
    return KernelModel(centers=centers, sigma=float(sigma), theta=theta,
                       converged=converged, objective=float(best_obj))


def kliep_weights(x_p, x_q, n_centers=100, sigma=None, steps=2000, rng=None):
    """Direct ratio estimate evaluated at the training rows."""
    model = kliep_fit(x_p, x_q, n_centers=n_centers, sigma=sigma,
                      steps=steps, rng=rng)
    if not model.converged:
        warnings.warn("ratio fit did not reach stationarity; "
                      "returning the best iterate", RuntimeWarning)
    w = model.weigh(np.asarray(x_p, dtype=np.float64))
    w = w / w.mean()
    return ShiftWeights(_clamped(w), "kliep")


# --------------------------------------------------------------------------
# Discriminator-only weighting


def dfw_fit(x_p, x_q, g_hidden=(64, 128, 64), d_hidden=(64, 32),
            epochs=60, batch_size=128, lr=1e-3, keep_prob=0.8, rng=None):
    """Train fresh feature and discriminator nets on the domain task.

    Domain-classification loss only; returns the trained (g, d) pair in
    eval mode, ready to score arbitrary points.
    """
    x_p = as_feature_matrix(x_p, "x_p")
    x_q = as_feature_matrix(x_q, "x_q")
    check_same_width(x_p, x_q, "x_p", "x_q")
    if x_p.shape[0] == 0 or x_q.shape[0] == 0:
        raise ShapeError("both domains need samples")
    if rng is None:
        rng = make_rng(0)
    rng_g, rng_d, rng_order, rng_q_pick, rng_g_drop, rng_d_drop = rng.spawn(6)

    g_spec = feature_extractor_spec(x_p.shape[1], g_hidden, keep=keep_prob)
    d_spec = discriminator_spec(g_spec.out_width, d_hidden, keep=keep_prob)
    g = build_mlp(g_spec, rng_g)
    d = build_mlp(d_spec, rng_d)
    opt = Adam(g.params() + d.params(), lr=lr)

    n_p, n_q = x_p.shape[0], x_q.shape[0]
    for _ in range(epochs):
        perm = rng_order.permutation(n_p)
        for start in range(0, n_p, batch_size):
            idx = perm[start:start + batch_size]
            q_idx = rng_q_pick.integers(0, n_q, size=idx.size)
            g.set_mode("train")
            d.set_mode("train")
            feats_p = extract_features(g, x_p[idx], rng=rng_g_drop)
            feats_q = extract_features(g, x_q[q_idx], rng=rng_g_drop)
            d_p = discriminate(d, feats_p, rng=rng_d_drop)
            d_q = discriminate(d, feats_q, rng=rng_d_drop)
            loss = discriminative_loss(d_p, d_q) * (-1.0)
            loss.backward()
            opt.step()

    g.set_mode("eval")
    d.set_mode("eval")
    return g, d


def dfw_score(g, d, x):
    """Frozen ratio (1 - d)/d at `x`, clamped to the usual range."""
    x = as_feature_matrix(x, "x")
    d_out = discriminate(d, extract_features(g, x)).values
    return _clamped(shift_factor(d_out)).ravel()


def dfw_weights(x_p, x_q, g_hidden=(64, 128, 64), d_hidden=(64, 32),
                epochs=60, batch_size=128, lr=1e-3, keep_prob=0.8,
                rng=None):
    """Two-stage weighting: fit the domain discriminator, freeze ratios."""
    x_p = as_feature_matrix(x_p, "x_p")
    g, d = dfw_fit(x_p, x_q, g_hidden=g_hidden, d_hidden=d_hidden,
                   epochs=epochs, batch_size=batch_size, lr=lr,
                   keep_prob=keep_prob, rng=rng)
    return ShiftWeights(dfw_score(g, d, x_p), "dfw")


# --------------------------------------------------------------------------
# Exact mean matching at tiny n


def _project_to_mean_one_simplex(v):
    """Euclidean projection onto {w >= 0, sum(w) = n}. Sort-based, exact."""
    n = v.shape[0]
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - float(n)
    rho = np.nonzero(u * np.arange(1, n + 1) > css)[0][-1]
    tau = css[rho] / (rho + 1.0)
    return np.maximum(v - tau, 0.0)


def exact_mean_match_oracle(feats_p, feats_q, max_iter=200_000, tol=1e-14):
    """Best nonnegative mean-one weights matching the Q feature mean.

    Minimizes || mean(feats_q) - (1/n) sum_i w_i feats_p[i] ||_2 over the
    feasible set by projected gradient; convex, so the answer is global.
    Returns (weights, objective).  Guarded to n <= 200 rows.
    """
    feats_p = as_feature_matrix(feats_p, "feats_p")
    feats_q = as_feature_matrix(feats_q, "feats_q")
    check_same_width(feats_p, feats_q, "feats_p", "feats_q")
    n = feats_p.shape[0]
    if n == 0:
        raise ShapeError("no rows to weigh")
    if n > 200:
        raise DimensionGuardError(
            f"exact matching is meant for tiny problems; got {n} rows, limit is 200")

    m_q = feats_q.mean(axis=0)
    # Lipschitz constant of the squared-residual gradient
    lip = 2.0 * np.linalg.norm(feats_p, ord=2) ** 2 / (n * n)
    step = 1.0 / max(lip, 1e-30)

    w = np.ones(n)
    residual = m_q - feats_p.T @ w / n
    obj = residual @ residual
    for _ in range(max_iter):
        grad = -2.0 * (feats_p @ residual) / n
        w_new = _project_to_mean_one_simplex(w - step * grad)
        residual = m_q - feats_p.T @ w_new / n
        obj_new = residual @ residual
        moved = np.max(np.abs(w_new - w))
        w = w_new
        if abs(obj - obj_new) < tol and moved < 1e-10:
            obj = obj_new
            break
        obj = obj_new
    return ShiftWeights(w, "oracle"), float(np.sqrt(obj))
