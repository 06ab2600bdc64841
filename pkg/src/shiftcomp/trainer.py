"""Two-step end-to-end training, plus vanilla and fixed-weight modes.

Each iteration pairs one pass over a labeled training batch with an
unlabeled test-feature batch.  Step 1 scores both batches with the
discriminator, folds the test feature mean and the ratio-weighted
training feature mean into their moving averages, and ascends the
mixed objective into the discriminator and extractor.  Step 2 recomputes
the ratio weights in eval mode, detaches them, and descends the weighted
classification loss into the classifier and extractor.

Randomness is split into named substreams per consumer (init, shuffle,
dropout, test-batch sampling), so disabling a component leaves every
other component's draws untouched.  That is what makes the reduction
checks exact: with both loss mixers at zero and unit weights forced,
the trajectory is bitwise identical to vanilla training.
"""

import time
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.special import expit

from .autodiff import constant
from .errors import ConfigError, NonFiniteError, ShapeError, TrainingDivergedError
from .metrics import evaluate_multilabel
from .networks import (build_mlp, classifier_spec, classify, discriminator_spec,
                       discriminate, extract_features, feature_extractor_spec)
from .optim import Adam
from .rng import (STREAM_C_DROPOUT, STREAM_C_INIT, STREAM_D_DROPOUT, STREAM_D_INIT,
                  STREAM_G_DROPOUT, STREAM_G_INIT, STREAM_Q_SAMPLE, STREAM_SHUFFLE,
                  make_rng)
from .shift import (MovingMean, ShiftWeights, discriminative_loss, fsmm_loss,
                    shift_factor, uniform_weights, weighted_classification_loss,
                    weighted_feature_mean)

VARIANTS = ("full", "d_only", "fsmm_only", "no_moving_avg")


@dataclass(frozen=True)
class ScnConfig:
    """Hyperparameters and network layout for one training run."""

    lambda1: float = 1.0
    lambda2: float = 0.1
    alpha: float = 0.9
    lr: float = 1e-4
    batch_size: int = 128
    epochs: int = 100
    patience: int = 20
    variant: str = "full"
    normalize_weights: bool = False
    force_unit_weights: bool = False
    seed: int = 0
    g_hidden: tuple = (64, 128, 64)
    d_hidden: tuple = (64, 32)
    c_hidden: tuple = (64, 32)
    keep_prob: float = 0.8
    standardize: bool = False

    def __post_init__(self):
        object.__setattr__(self, "g_hidden", tuple(int(w) for w in self.g_hidden))
        object.__setattr__(self, "d_hidden", tuple(int(w) for w in self.d_hidden))
        object.__setattr__(self, "c_hidden", tuple(int(w) for w in self.c_hidden))
        if self.lambda1 < 0.0 or self.lambda2 < 0.0:
            raise ConfigError("loss mixers must be nonnegative")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be in {VARIANTS}, got {self.variant!r}")
        l1, l2, _ = self.resolved()
        if l1 == 0.0 and l2 == 0.0 and not self.force_unit_weights:
            raise ConfigError(
                "both loss mixers are zero; the discriminator would be untrained "
                "garbage, so unit weights must be forced explicitly")
        if not 0.0 <= self.alpha < 1.0:
            raise ConfigError(f"alpha must be in [0, 1), got {self.alpha}")
        if self.lr <= 0.0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if self.batch_size < 2:
            raise ConfigError(f"batch size must be >= 2, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if not 0.0 < self.keep_prob <= 1.0:
            raise ConfigError(f"keep probability must be in (0, 1], got {self.keep_prob}")

    def resolved(self):
        """Effective (lambda1, lambda2, alpha) after the variant overrides."""
        l1, l2, a = self.lambda1, self.lambda2, self.alpha
        if self.variant == "d_only":
            l2 = 0.0
        elif self.variant == "fsmm_only":
            l1 = 0.0
        elif self.variant == "no_moving_avg":
            a = 0.0
        return l1, l2, a

    def to_dict(self):
        d = asdict(self)
        d["g_hidden"] = list(self.g_hidden)
        d["d_hidden"] = list(self.d_hidden)
        d["c_hidden"] = list(self.c_hidden)
        return d


@dataclass
class TrainReport:
    """Per-epoch traces plus the artifacts a run leaves behind."""

    loss_d: list = field(default_factory=list)
    loss_fsmm: list = field(default_factory=list)
    loss_c: list = field(default_factory=list)
    val_auc: list = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False
    wall_clock: float = 0.0
    seed: int = 0
    config: dict = field(default_factory=dict)
    final_weights: ShiftWeights = None

    def as_dict(self):
        return {
            "loss_d": self.loss_d,
            "loss_fsmm": self.loss_fsmm,
            "loss_c": self.loss_c,
            "val_auc": self.val_auc,
            "best_epoch": self.best_epoch,
            "stopped_early": self.stopped_early,
            "wall_clock": self.wall_clock,
            "seed": self.seed,
            "config": self.config,
            "weight_source": None if self.final_weights is None else self.final_weights.source,
        }


class ScnState:
    """Everything one training run owns: networks, averages, optimizers, rngs."""

    def __init__(self, cfg, in_dim, n_labels, with_discriminator=True):
        self.cfg = cfg
        l1, l2, alpha = cfg.resolved()
        self.lambda1, self.lambda2, self.alpha = l1, l2, alpha

        g_spec = feature_extractor_spec(in_dim, cfg.g_hidden, keep=cfg.keep_prob,
                                        standardize=cfg.standardize)
        self.g = build_mlp(g_spec, make_rng(cfg.seed, STREAM_G_INIT))
        feat_dim = g_spec.out_width

        self.d = None
        self.mm_p = None
        self.mm_q = None
        self.opt_step1 = None
        if with_discriminator:
            d_spec = discriminator_spec(feat_dim, cfg.d_hidden, keep=1.0,
                                        standardize=cfg.standardize)
            self.d = build_mlp(d_spec, make_rng(cfg.seed, STREAM_D_INIT))
            self.mm_p = MovingMean(feat_dim, alpha)
            self.mm_q = MovingMean(feat_dim, alpha)
            self.opt_step1 = Adam(self.d.params() + self.g.params(), lr=cfg.lr)

        c_spec = classifier_spec(feat_dim, n_labels, cfg.c_hidden, keep=cfg.keep_prob,
                                 standardize=cfg.standardize)
        self.c = build_mlp(c_spec, make_rng(cfg.seed, STREAM_C_INIT))
        self.opt_step2 = Adam(self.c.params() + self.g.params(), lr=cfg.lr)

        self.rng_shuffle = make_rng(cfg.seed, STREAM_SHUFFLE)
        self.rng_q = make_rng(cfg.seed, STREAM_Q_SAMPLE)
        self.rng_g_drop = make_rng(cfg.seed, STREAM_G_DROPOUT)
        self.rng_d_drop = make_rng(cfg.seed, STREAM_D_DROPOUT)
        self.rng_c_drop = make_rng(cfg.seed, STREAM_C_DROPOUT)
        self.iteration = 0

    @property
    def step1_active(self):
        return self.d is not None and not (self.lambda1 == 0.0 and self.lambda2 == 0.0)

    def all_params(self):
        params = self.g.params() + self.c.params()
        if self.d is not None:
            params += self.d.params()
        return params

    def snapshot(self):
        return [p.values.copy() for p in self.all_params()]

    def restore(self, snap):
        for p, values in zip(self.all_params(), snap):
            p.values = values.copy()

    def batch_weights(self, x_p):
        """Eval-mode ratio weights for one batch, as a plain array."""
        self.g.set_mode("eval")
        self.d.set_mode("eval")
        feats = extract_features(self.g, x_p)
        d_prob = discriminate(self.d, feats)
        return shift_factor(d_prob.values.ravel())


def scn_iteration(state, batch_p, batch_q=None, fixed_w=None, _keep_zero_terms=False):
    """One two-step update; returns (state, loss_d, loss_fsmm, loss_c).

    ``fixed_w`` supplies frozen per-sample weights (baseline mode) and
    suppresses the discriminator-derived ones.  ``_keep_zero_terms``
    keeps zero-mixer loss terms in the graph instead of dropping them;
    the trajectories must match either way and tests assert exactly that.
    """
    cfg = state.cfg
    x_p, y_p = batch_p
    if x_p.shape[0] == 0:
        raise ShapeError("empty training batch")
    loss_d_val = 0.0
    loss_fsmm_val = 0.0

    if state.step1_active:
        if batch_q is None or batch_q.shape[0] == 0:
            raise ShapeError("step 1 needs a non-empty test-feature batch")
        state.g.set_mode("train")
        state.d.set_mode("train")
        feats_p = extract_features(state.g, x_p, rng=state.rng_g_drop)
        feats_q = extract_features(state.g, batch_q, rng=state.rng_g_drop)
        d_p = discriminate(state.d, feats_p, rng=state.rng_d_drop)

        w_attached = shift_factor(d_p)
        m_p = weighted_feature_mean(w_attached, feats_p)
        m_q = feats_q.mean("rows")
        corrected_p = state.mm_p.update(m_p)
        corrected_q = state.mm_q.update(m_q)

        terms = []
        if state.lambda1 > 0.0 or _keep_zero_terms:
            d_q = discriminate(state.d, feats_q, rng=state.rng_d_drop)
            l_d = discriminative_loss(d_p, d_q)
            loss_d_val = l_d.item()
            # ascent on the likelihood = descent on its negation
            terms.append(l_d * (-state.lambda1))
        if state.lambda2 > 0.0 or _keep_zero_terms:
            l_fsmm = fsmm_loss(corrected_q, corrected_p)
            loss_fsmm_val = l_fsmm.item()
            terms.append(l_fsmm * state.lambda2)
        step1_loss = terms[0]
        for extra in terms[1:]:
            step1_loss = step1_loss + extra
        step1_loss.backward()
        state.opt_step1.step()

    if fixed_w is not None:
        w_np = np.asarray(fixed_w, dtype=np.float64).ravel()
        if w_np.shape[0] != x_p.shape[0]:
            raise ShapeError("fixed weights misaligned with the batch")
    elif cfg.force_unit_weights or state.d is None:
        w_np = np.ones(x_p.shape[0])
    else:
        w_np = state.batch_weights(x_p)
    if cfg.normalize_weights and fixed_w is None and not cfg.force_unit_weights:
        w_np = w_np / w_np.mean()

    state.g.set_mode("train")
    state.c.set_mode("train")
    feats_train = extract_features(state.g, x_p, rng=state.rng_g_drop)
    logits = classify(state.c, feats_train, rng=state.rng_c_drop)
    l_c = weighted_classification_loss(logits, y_p, w_np)
    loss_c_val = l_c.item()
    l_c.backward()
    state.opt_step2.step()

    state.iteration += 1
    return state, loss_d_val, loss_fsmm_val, loss_c_val


@dataclass
class ScnModel:
    """Trained networks bundled for prediction and weight extraction."""

    g: object
    d: object
    c: object
    cfg: ScnConfig
    n_labels: int

    def predict_proba(self, x):
        x = np.asarray(x, dtype=np.float64)
        self.g.set_mode("eval")
        self.c.set_mode("eval")
        feats = extract_features(self.g, x)
        return expit(classify(self.c, feats).values)

    def importance_weights(self, x):
        if self.d is None:
            return uniform_weights(len(x))
        x = np.asarray(x, dtype=np.float64)
        self.g.set_mode("eval")
        self.d.set_mode("eval")
        feats = extract_features(self.g, x)
        w = shift_factor(discriminate(self.d, feats).values.ravel())
        return ShiftWeights(w, "scn")


def _validate_inputs(train_ds, q_features, val_ds):
    if train_ds.n == 0:
        raise ShapeError("empty training set")
    if train_ds.labels is None:
        raise ValueError("training split must be labeled")
    if val_ds is not None and val_ds.labels is None:
        raise ValueError("validation split must be labeled")
    if q_features is not None and q_features.shape[1] != train_ds.dim:
        raise ShapeError(
            f"test feature width {q_features.shape[1]} != train width {train_ds.dim}")


def _val_macro_auc(state, val_ds):
    if val_ds is None:
        return None
    state.g.set_mode("eval")
    state.c.set_mode("eval")
    feats = extract_features(state.g, val_ds.features)
    probs = expit(classify(state.c, feats).values)
    return evaluate_multilabel(probs, val_ds.labels).macro_auc


def _train_loop(train_ds, q_features, val_ds, cfg, with_discriminator,
                fixed_w=None, pretrain_epochs=0):
    _validate_inputs(train_ds, q_features, val_ds)
    started = time.perf_counter()
    n_labels = train_ds.labels.shape[1]
    state = ScnState(cfg, train_ds.dim, n_labels, with_discriminator=with_discriminator)
    report = TrainReport(seed=cfg.seed, config=cfg.to_dict())
    x_train, y_train = train_ds.features, train_ds.labels

    best_val = None
    best_snap = state.snapshot()
    best_epoch = -1
    stale = 0

    for epoch in range(cfg.epochs):
        in_pretrain = epoch < pretrain_epochs
        perm = state.rng_shuffle.permutation(train_ds.n)
        sums = np.zeros(3)
        n_batches = 0
        for start in range(0, train_ds.n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            batch_q = None
            if state.step1_active:
                q_idx = state.rng_q.integers(0, q_features.shape[0], size=idx.size)
                batch_q = q_features[q_idx]
            batch_w = None
            if fixed_w is not None:
                batch_w = np.ones(idx.size) if in_pretrain else fixed_w[idx]
            try:
                _, l_d, l_f, l_c = scn_iteration(state, (x_train[idx], y_train[idx]),
                                                 batch_q, fixed_w=batch_w)
            except NonFiniteError as err:
                raise TrainingDivergedError(
                    f"run diverged at epoch {epoch}: {err}",
                    snapshot={"epoch": epoch, "iteration": state.iteration,
                              "loss_d": report.loss_d, "loss_c": report.loss_c},
                ) from err
            sums += (l_d, l_f, l_c)
            n_batches += 1

        report.loss_d.append(sums[0] / n_batches)
        report.loss_fsmm.append(sums[1] / n_batches)
        report.loss_c.append(sums[2] / n_batches)
        val_auc = _val_macro_auc(state, val_ds)
        report.val_auc.append(val_auc)

        if val_auc is not None and (best_val is None or val_auc > best_val):
            best_val = val_auc
            best_snap = state.snapshot()
            best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if not in_pretrain and val_ds is not None and stale >= cfg.patience:
                report.stopped_early = True
                break

    if best_epoch >= 0:
        state.restore(best_snap)
    report.best_epoch = best_epoch

    model = ScnModel(g=state.g, d=state.d, c=state.c, cfg=cfg, n_labels=n_labels)
    if fixed_w is not None:
        report.final_weights = None  # caller records the tagged weights
    elif with_discriminator and not cfg.force_unit_weights:
        report.final_weights = model.importance_weights(x_train)
    else:
        report.final_weights = uniform_weights(train_ds.n)
    report.wall_clock = time.perf_counter() - started
    return model, report


def train_scn(train_ds, test_features, val_ds, cfg):
    """End-to-end two-step training against unlabeled test features."""
    if hasattr(test_features, "features"):
        test_features = test_features.features
    q = np.asarray(test_features, dtype=np.float64)
    if q.shape[0] == 0:
        raise ShapeError("empty test feature set")
    return _train_loop(train_ds, q, val_ds, cfg, with_discriminator=True)


def train_vanilla(train_ds, val_ds, cfg):
    """Plain ERM on the training set; no discriminator is ever built."""
    return _train_loop(train_ds, None, val_ds, cfg, with_discriminator=False)


def train_weighted(train_ds, fixed_w, val_ds, cfg, pretrain_epochs=20):
    """Unweighted warmup, then ERM against frozen importance weights."""
    values = fixed_w.values if isinstance(fixed_w, ShiftWeights) else \
        np.asarray(fixed_w, dtype=np.float64).ravel()
    if values.shape[0] != train_ds.n:
        raise ShapeError(
            f"{values.shape[0]} weights misaligned with {train_ds.n} training rows")
    if pretrain_epochs < 0:
        raise ConfigError("pretrain epochs must be >= 0")
    model, report = _train_loop(train_ds, None, val_ds, cfg,
                                with_discriminator=False, fixed_w=values,
                                pretrain_epochs=pretrain_epochs)
    if isinstance(fixed_w, ShiftWeights):
        report.final_weights = fixed_w
    else:
        source = "uniform" if np.all(values == 1.0) else "oracle"
        report.final_weights = ShiftWeights(values, source)
    return model, report
