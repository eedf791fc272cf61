"""Log-likelihood maximization with Adam and validation-based early stopping.

Randomness is split into named streams derived from one seed: parameter
initialization uses the seed itself, epoch shuffling uses seed + 1, and
sampling elsewhere uses seed + 2, so changing one stage never perturbs the
others.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import pca as pca_mod
from .dataio import ScenarioSet
from .errors import DivergedError, NumericError, UsageError
from .flow import FlowModel, Standardizer, build_flow

GRAD_CLIP_NORM = 100.0


@dataclass
class TrainConfig:
    epochs: int = 1000
    batch_size: int = 64
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    seed: int = 0
    early_stop_patience: int = 50
    validation_fraction: float = 0.2

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise UsageError("epochs and batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise UsageError("learning_rate must be positive")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise UsageError("Adam betas must lie in (0, 1)")


@dataclass
class TrainLog:
    train_nll: list = field(default_factory=list)
    val_nll: list = field(default_factory=list)
    best_epoch: int = -1
    diverged: bool = False
    diverged_epoch: int | None = None

    @property
    def epochs_completed(self):
        return len(self.train_nll)

    def write_csv(self, path, header_comment=None):
        with open(path, "w", encoding="utf-8") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            fh.write("epoch,train_nll,val_nll\n")
            for i, (tr, va) in enumerate(zip(self.train_nll, self.val_nll)):
                fh.write(f"{i},{tr!r},{va!r}\n")
            fh.write(f"# best_epoch={self.best_epoch}\n")
            if self.diverged:
                fh.write(f"# diverged_at_epoch={self.diverged_epoch}\n")


def nll_and_grads(model: FlowModel, batch):
    """Mean negative log-likelihood of the batch and its exact gradients."""
    return model.nll_and_grads(batch)


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def for_params(cls, params):
        return cls(m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params])


def adam_step(params, grads, state: AdamState, config: TrainConfig):
    """One in-place Adam update; returns (params, state)."""
    if len(params) != len(grads):
        raise UsageError("params/grads length mismatch")
    b1, b2, eps = config.adam_beta1, config.adam_beta2, config.adam_epsilon
    state.t += 1
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= config.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return params, state


def _clip_gradients(grads, max_norm=GRAD_CLIP_NORM):
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if total > max_norm:
        factor = max_norm / total
        grads = [g * factor for g in grads]
    return grads


def _as_rows(data):
    return data.data if isinstance(data, ScenarioSet) else np.asarray(data, dtype=float)


def _train_loop(model: FlowModel, train_rows, val_rows, config: TrainConfig,
                allow_divergence: bool):
    """Mini-batch Adam loop; returns the best-validation-epoch parameters."""
    log = TrainLog()
    params = model.parameters()
    if not params:
        # standardizer-only fallback has nothing to optimize
        log.train_nll.append(-float(np.mean(model.log_prob(train_rows))))
        log.val_nll.append(-float(np.mean(model.log_prob(val_rows))))
        log.best_epoch = 0
        return model, log

    state = AdamState.for_params(params)
    shuffle_rng = np.random.default_rng(config.seed + 1)
    n = train_rows.shape[0]
    best_val = math.inf
    best_params = [p.copy() for p in params]

    for epoch in range(config.epochs):
        perm = shuffle_rng.permutation(n)
        epoch_nll = 0.0
        diverged_here = False
        for start in range(0, n, config.batch_size):
            batch = train_rows[perm[start: start + config.batch_size]]
            try:
                nll, grads = model.nll_and_grads(batch)
            except NumericError:
                if allow_divergence:
                    diverged_here = True
                    break
                raise DivergedError("training loss became non-finite", log=log)
            epoch_nll += nll * batch.shape[0]
            grads = _clip_gradients(grads)
            adam_step(params, grads, state, config)
        if diverged_here:
            log.diverged = True
            log.diverged_epoch = epoch
            break

        try:
            val_nll = -float(np.mean(model.log_prob(val_rows)))
        except NumericError:
            val_nll = math.nan
        train_nll = epoch_nll / n
        log.train_nll.append(train_nll)
        log.val_nll.append(val_nll)
        if not (math.isfinite(train_nll) and math.isfinite(val_nll)):
            if allow_divergence:
                log.diverged = True
                log.diverged_epoch = epoch
                break
            raise DivergedError("training loss became non-finite", log=log)

        if val_nll < best_val:
            best_val = val_nll
            best_params = [p.copy() for p in params]
            log.best_epoch = epoch
        elif epoch - log.best_epoch > config.early_stop_patience:
            break

    if log.best_epoch < 0:
        log.best_epoch = 0
    model.set_parameters(best_params)
    return model, log


def fit_pcf(train_set, val_set, cev_target=None, n_components=None,
            n_layers=5, hidden_dims=None, config: TrainConfig | None = None,
            **model_kwargs):
    """Fit PCA on the training rows only, then train the flow in latent space."""
    config = config or TrainConfig()
    if cev_target is None and n_components is None:
        raise UsageError("give either cev_target or n_components")
    train_rows = _as_rows(train_set)
    val_rows = _as_rows(val_set)

    decomposition = pca_mod.fit(train_rows)
    pca_map = pca_mod.truncate(decomposition, cev_threshold=cev_target,
                               n_components=n_components)
    train_lat = pca_mod.project(pca_map, train_rows)

    model = build_flow(
        pca_map.n_components, n_layers=n_layers, hidden_dims=hidden_dims,
        seed=config.seed, standardizer=Standardizer.from_data(train_lat),
        pca=pca_map, **_set_metadata(train_set, model_kwargs),
    )
    return _train_loop(model, train_rows, val_rows, config, allow_divergence=False)


def fit_fsnf(train_set, val_set, n_layers=5, hidden_dims=None,
             config: TrainConfig | None = None, **model_kwargs):
    """Train the flow directly in the ambient dimension.

    On manifold data this is expected to misbehave; a non-finite loss is
    recorded in the log instead of raised.
    """
    config = config or TrainConfig()
    train_rows = _as_rows(train_set)
    val_rows = _as_rows(val_set)
    model = build_flow(
        train_rows.shape[1], n_layers=n_layers, hidden_dims=hidden_dims,
        seed=config.seed, standardizer=Standardizer.from_data(train_rows),
        pca=None, **_set_metadata(train_set, model_kwargs),
    )
    return _train_loop(model, train_rows, val_rows, config, allow_divergence=True)


def _set_metadata(train_set, overrides):
    kwargs = dict(overrides)
    if isinstance(train_set, ScenarioSet):
        kwargs.setdefault("interval_minutes", train_set.interval_minutes)
        kwargs.setdefault("scaling", train_set.scaling)
        kwargs.setdefault("scale_min", train_set.scale_min)
        kwargs.setdefault("scale_max", train_set.scale_max)
    return kwargs
