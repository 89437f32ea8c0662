"""Federated round engine: client update variants (vanilla SGD, proximal,
contrastive) and server aggregation strategies (weighted averaging,
adaptive pseudo-gradient optimizers, cosine spread-out regularization,
and SVM-guided selective aggregation with max-margin spread-out
regularization on the class embeddings).

A round samples clients, trains each on its own data starting from the
global model, then applies the configured server strategy. Strategy
state (server optimizer moments, per-client previous models for the
contrastive variant) lives in a ``ServerState`` owned by the caller.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import (
    Batch,
    Model,
    encode,
    encode_with_cache,
    encoder_backward,
    flatten_params,
    loss_and_gradient,
    require_compatible,
    unflatten_params,
)
from .numerics import Tensor, check_finite, weighted_mean
from .optim import (
    ADAM,
    AMSGRAD,
    SGD,
    OptimizerState,
    adam_state,
    amsgrad_state,
    optimizer_step,
    sgd_state,
    sgd_step,
)
from .svm import OvoSvm, fit_ovo, format_diagnostics, hyperplane, support_vectors_of_class

log = logging.getLogger(__name__)

VANILLA = "vanilla"
PROX = "prox"
MOON = "moon"

FEDAVG = "fedavg"
FEDOPT = "fedopt"
FEDAWS = "fedaws"
SVM_MARGIN = "svm_margin"

DECREASING = "decreasing"
INCREASING = "increasing"


@dataclass
class ClientConfig:
    epochs: int = 1
    batch_size: int = 64
    learning_rate: float = 0.1
    variant: str = VANILLA
    prox_mu: float = 0.01
    moon_coeff: float = 1.0
    moon_temperature: float = 0.5

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")
        if self.variant not in (VANILLA, PROX, MOON):
            raise ValueError(f"unknown client variant {self.variant!r}")
        if self.variant == PROX and self.prox_mu < 0:
            raise ValueError("prox_mu must be nonnegative")
        if self.variant == MOON and (self.moon_coeff < 0 or self.moon_temperature <= 0):
            raise ValueError("moon_coeff must be >= 0 and moon_temperature > 0")


@dataclass
class PenaltySchedule:
    """Per-round SVM slack-penalty coefficient: linear decay from
    ``initial`` to ``floor`` over the run (or its time reversal)."""

    initial: float = 1.0
    floor: float = 0.01
    total_rounds: int = 1
    mode: str = DECREASING

    def __post_init__(self):
        if self.initial <= 0 or self.floor <= 0:
            raise ValueError("initial and floor must be positive")
        if self.total_rounds < 1:
            raise ValueError("total_rounds must be >= 1")
        if self.mode not in (DECREASING, INCREASING):
            raise ValueError(f"unknown schedule mode {self.mode!r}")


def penalty_value(schedule: PenaltySchedule, t: int) -> float:
    """Coefficient for round ``t``; decreasing mode is
    ``max(floor, initial * (1 - t/T))``."""
    if t < 0 or t >= schedule.total_rounds:
        raise ValueError(f"round {t} outside [0, {schedule.total_rounds})")
    if schedule.mode == INCREASING:
        t = schedule.total_rounds - 1 - t
    return max(schedule.floor, schedule.initial * (1.0 - t / schedule.total_rounds))


@dataclass
class ServerStrategy:
    kind: str = FEDAVG
    server_optimizer: str = ADAM
    server_learning_rate: float = 1e-2
    schedule: PenaltySchedule | None = None
    reg_steps: int = 1
    reset_server_state: bool = False

    def __post_init__(self):
        if self.kind not in (FEDAVG, FEDOPT, FEDAWS, SVM_MARGIN):
            raise ValueError(f"unknown strategy kind {self.kind!r}")
        if self.kind != FEDAVG and self.server_learning_rate <= 0:
            raise ValueError("server_learning_rate must be positive")
        if self.server_optimizer not in (SGD, ADAM, AMSGRAD):
            raise ValueError(f"unknown server optimizer {self.server_optimizer!r}")
        if self.reg_steps < 0:
            raise ValueError("reg_steps must be >= 0")


def _make_server_optimizer(strategy: ServerStrategy) -> OptimizerState:
    lr = strategy.server_learning_rate
    if strategy.server_optimizer == SGD:
        log.warning("server optimizer is SGD: degenerate averaging-like update")
        return sgd_state(lr)
    if strategy.server_optimizer == AMSGRAD:
        return amsgrad_state(lr)
    return adam_state(lr)


@dataclass
class ServerState:
    """Everything the round loop owns across rounds for one run."""

    strategy: ServerStrategy
    full_opt: OptimizerState | None = None    # pseudo-gradient optimizer, whole model
    logit_opt: OptimizerState | None = None   # optimizer over the logit matrix only
    prev_models: dict[int, Model] = field(default_factory=dict)

    @classmethod
    def create(cls, strategy: ServerStrategy) -> "ServerState":
        state = cls(strategy=strategy)
        if strategy.kind == FEDOPT:
            state.full_opt = _make_server_optimizer(strategy)
        elif strategy.kind in (FEDAWS, SVM_MARGIN):
            state.logit_opt = _make_server_optimizer(strategy)
        return state

    def maybe_reset(self):
        if self.strategy.reset_server_state:
            fresh = ServerState.create(self.strategy)
            self.full_opt = fresh.full_opt
            self.logit_opt = fresh.logit_opt


@dataclass
class RoundRecordData:
    """Per-round facts the harness turns into a CSV row."""

    train_loss: float
    selected_clients: tuple[int, ...]
    lam: float | None = None
    sv_counts: tuple[int, ...] | None = None
    diagnostics: str | None = None


# ---------------------------------------------------------------------------
# Client side
# ---------------------------------------------------------------------------

def moon_loss_and_gradient(model: Model, global_model: Model, prev_model: Model,
                           inputs: Tensor, temperature: float) -> tuple[float, Model]:
    """Contrastive embedding loss against the global (positive) and the
    previous local (negative) model, mean over the batch.

    Per sample the loss is ``-log softmax_g(cos(z, z_g)/tau, cos(z, z_p)/tau)``
    where only ``z`` (the current model's embedding) carries gradient.
    """
    z, cache = encode_with_cache(model, inputs)
    z_g = encode(global_model, inputs)
    z_p = encode(prev_model, inputs)
    nz = np.linalg.norm(z, axis=1)
    ng = np.linalg.norm(z_g, axis=1)
    npv = np.linalg.norm(z_p, axis=1)
    # A zero-norm embedding has no direction: its cosine is taken as 0 and
    # it contributes the constant uniform-choice loss with zero gradient.
    sz = np.where(nz > 0, nz, 1.0)
    sg = np.where(ng > 0, ng, 1.0)
    sp = np.where(npv > 0, npv, 1.0)
    bsz = z.shape[0]
    cos_g = np.sum(z * z_g, axis=1) / (sz * sg)
    cos_p = np.sum(z * z_p, axis=1) / (sz * sp)
    a = cos_g / temperature
    b = cos_p / temperature
    top = np.maximum(a, b)
    lse = top + np.log(np.exp(a - top) + np.exp(b - top))
    loss = float(np.mean(lse - a))
    p_g = np.exp(a - lse)
    p_p = np.exp(b - lse)
    dc_g = (p_g - 1.0) / temperature
    dc_p = p_p / temperature
    # d cos(z, u) / dz = u / (|z||u|) - cos * z / |z|^2
    dz = (dc_g / (sz * sg))[:, None] * z_g \
        + (dc_p / (sz * sp))[:, None] * z_p \
        - ((dc_g * cos_g + dc_p * cos_p) / (sz * sz))[:, None] * z
    dz[nz == 0] = 0.0
    dz /= bsz
    return loss, encoder_backward(model, cache, dz)


def client_update(n: int, global_model: Model, data: tuple[Tensor, np.ndarray],
                  config: ClientConfig, rng: np.random.Generator,
                  prev_model: Model | None = None) -> tuple[Model, float]:
    """Local training on client ``n``; returns the trained model and the
    mean batch loss. The global model is never mutated.

    Batches come from a seeded shuffle per epoch, last partial batch
    kept. The proximal variant adds ``mu * (theta - theta_global)`` to
    every gradient; the contrastive variant adds its encoder gradient
    scaled by ``moon_coeff``. Zero-coefficient variants take the exact
    vanilla path so they are bitwise-identical to it.
    """
    features, labels = data
    features = np.asarray(features, dtype=np.float64)
    if features.shape[0] == 0:
        raise ValueError(f"client {n}: empty dataset")

    model = global_model.copy()
    flat_global = flatten_params(global_model)
    flat = flat_global.copy()
    opt = sgd_state(config.learning_rate) if config.learning_rate > 0 else None

    use_prox = config.variant == PROX and config.prox_mu != 0.0
    use_moon = config.variant == MOON and config.moon_coeff != 0.0
    if use_moon and prev_model is None:
        prev_model = global_model

    losses = []
    n_samples = features.shape[0]
    for _ in range(config.epochs):
        order = rng.permutation(n_samples)
        for start in range(0, n_samples, config.batch_size):
            idx = order[start:start + config.batch_size]
            batch = Batch(features[idx], labels[idx])
            loss, grads = loss_and_gradient(model, batch)
            losses.append(loss)
            grad_flat = flatten_params(grads)
            if use_prox:
                grad_flat += config.prox_mu * (flat - flat_global)
            if use_moon:
                _, moon_grads = moon_loss_and_gradient(
                    model, global_model, prev_model, batch.inputs,
                    config.moon_temperature)
                grad_flat += config.moon_coeff * flatten_params(moon_grads)
            if opt is not None:
                flat = sgd_step(flat, grad_flat, opt)
                model = unflatten_params(global_model, flat)
    return model, float(np.mean(losses))


# ---------------------------------------------------------------------------
# Server side
# ---------------------------------------------------------------------------

def fedavg_aggregate(models: Sequence[Model], dataset_sizes: Sequence[float]) -> Model:
    """Parameter-wise weighted mean with weights ``|D_n| / sum |D_n|``."""
    if len(models) == 0:
        raise ValueError("cannot aggregate an empty model list")
    for m in models[1:]:
        require_compatible(models[0], m)
    flat = weighted_mean([flatten_params(m) for m in models], dataset_sizes)
    return unflatten_params(models[0], flat)


def pseudo_gradient(global_model: Model, aggregated: Model) -> Tensor:
    """Flat displacement from the current global model to the aggregate."""
    require_compatible(global_model, aggregated)
    return flatten_params(aggregated) - flatten_params(global_model)


def fedopt_step(global_model: Model, delta: Tensor, server_state: OptimizerState) -> Model:
    """Server-optimizer update of the global model with gradient ``-delta``."""
    flat = flatten_params(global_model)
    if delta.shape != flat.shape:
        raise ValueError("pseudo-gradient length does not match the model")
    new_flat = optimizer_step(flat, -delta, server_state)
    return unflatten_params(global_model, new_flat)


def fedaws_penalty(logit_matrix: Tensor) -> tuple[float, Tensor]:
    """Squared hinge of pairwise cosine similarities among class
    embeddings, with its analytic gradient."""
    w = logit_matrix
    norms = np.linalg.norm(w, axis=1)
    if np.any(norms == 0):
        raise ValueError("zero-norm class embedding: cosine undefined")
    k = w.shape[0]
    loss = 0.0
    grad = np.zeros_like(w)
    for i in range(k - 1):
        for j in range(i + 1, k):
            c = float(w[i] @ w[j]) / (norms[i] * norms[j])
            if c <= 0.0:
                continue
            loss += c * c
            dci = w[j] / (norms[i] * norms[j]) - c * w[i] / (norms[i] ** 2)
            dcj = w[i] / (norms[i] * norms[j]) - c * w[j] / (norms[j] ** 2)
            grad[i] += 2.0 * c * dci
            grad[j] += 2.0 * c * dcj
    return loss, grad


def fedaws_regularize(logit_matrix: Tensor, server_state: OptimizerState) -> Tensor:
    """One server-optimizer step on the cosine spread-out penalty."""
    if logit_matrix.shape[0] < 2:
        raise ValueError("need at least two classes")
    _, grad = fedaws_penalty(logit_matrix)
    return optimizer_step(logit_matrix, grad, server_state)


def spreadout_loss(logit_matrix: Tensor,
                   normals: dict[tuple[int, int], Tensor]) -> tuple[float, Tensor]:
    """Gaussian similarity of class embeddings projected on the fitted
    pair hyperplane normals, summed over pairs, with its gradient.

    Each pair (k, k') contributes
    ``exp(-(w_k.h - w_k'.h)^2 / (2 |h|^2))`` with ``h`` held constant.
    """
    w = logit_matrix
    loss = 0.0
    grad = np.zeros_like(w)
    for (k, kp), h in sorted(normals.items()):
        h_sq = float(h @ h)
        if h_sq <= 0.0:
            raise ValueError(f"zero-norm hyperplane normal for pair ({k}, {kp})")
        diff = float((w[k] - w[kp]) @ h)
        term = np.exp(-diff * diff / (2.0 * h_sq))
        loss += term
        coef = term * diff / h_sq
        grad[k] -= coef * h
        grad[kp] += coef * h
    return float(loss), grad


def selective_aggregate(svm: OvoSvm) -> Tensor:
    """Global class embeddings from support vectors only: row k is the
    dataset-size-weighted mean of the class-k embeddings that support at
    least one pair problem involving k."""
    rows = []
    for k in range(svm.num_classes):
        svs = support_vectors_of_class(svm, k)
        if not svs:
            raise ValueError(f"class {k} has no support vectors")
        rows.append(weighted_mean([e for _, e, _ in svs], [w for _, _, w in svs]))
    return np.vstack(rows)


def spreadout_regularize(logit_matrix: Tensor, svm: OvoSvm,
                         server_state: OptimizerState,
                         reg_steps: int) -> tuple[Tensor, list[float]]:
    """Apply ``reg_steps`` server-optimizer steps to the class embeddings
    under the projected spread-out penalty; hyperplane normals are
    constants. Returns the new matrix and the loss before each step."""
    normals = {}
    for (k, kp) in svm.pairs():
        h, _ = hyperplane(svm, k, kp)
        normals[(k, kp)] = h
    w = logit_matrix
    losses = []
    prev = None
    for _ in range(reg_steps):
        loss, grad = spreadout_loss(w, normals)
        losses.append(loss)
        if prev is not None and loss >= prev:
            log.warning("spread-out penalty did not decrease: %.6g -> %.6g", prev, loss)
        prev = loss
        w = optimizer_step(w, grad, server_state)
    return w, losses


def sample_clients(train_indices: Sequence[int], count: int,
                   rng: np.random.Generator) -> tuple[int, ...]:
    """Uniform draw of ``count`` distinct clients, returned sorted."""
    if count > len(train_indices):
        raise ValueError("cannot sample more clients than available")
    picked = rng.choice(np.asarray(train_indices), size=count, replace=False)
    return tuple(sorted(int(i) for i in picked))


def _client_rng(seed: int, t: int, n: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, 2, t, n]))


def _sampling_rng(seed: int, t: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, 1, t]))


def run_round(t: int, global_model: Model, dataset, server: ServerState,
              client_config: ClientConfig, clients_per_round: int,
              seed: int) -> tuple[Model, RoundRecordData]:
    """One full aggregation round.

    Samples clients without replacement, trains each from the current
    global model, then applies the server strategy. Client updates are
    consumed in client-index order; all randomness is keyed on
    ``(seed, round, client)`` so results do not depend on scheduling.
    """
    strategy = server.strategy
    selected = sample_clients(dataset.train_client_indices, clients_per_round,
                              _sampling_rng(seed, t))
    models = []
    sizes = []
    losses = []
    for n in selected:
        data = dataset.clients[n]
        prev = server.prev_models.get(n, global_model) \
            if client_config.variant == MOON else None
        try:
            trained, loss = client_update(n, global_model, data, client_config,
                                          _client_rng(seed, t, n), prev_model=prev)
        except Exception as err:
            raise RuntimeError(f"round {t}, client {n}: {err}") from err
        models.append(trained)
        sizes.append(float(data[0].shape[0]))
        losses.append(loss)
        if client_config.variant == MOON:
            server.prev_models[n] = trained

    server.maybe_reset()
    aggregated = fedavg_aggregate(models, sizes)
    record = RoundRecordData(train_loss=float(np.mean(losses)),
                             selected_clients=selected)

    if strategy.kind == FEDAVG:
        new_model = aggregated
    elif strategy.kind == FEDOPT:
        if server.full_opt.kind == SGD and server.full_opt.learning_rate == 1.0:
            # Exact algebraic identity: an SGD server step at unit rate on
            # -delta lands on the aggregate itself. Taking the aggregate
            # directly keeps the identity bitwise.
            server.full_opt.step_count += 1
            new_model = aggregated
        else:
            new_model = fedopt_step(global_model, pseudo_gradient(global_model, aggregated),
                                    server.full_opt)
    elif strategy.kind == FEDAWS:
        new_logits = fedaws_regularize(aggregated.logit_matrix, server.logit_opt)
        new_model = Model(aggregated.encoder, new_logits)
    else:  # SVM_MARGIN
        lam = penalty_value(strategy.schedule, t)
        class_embeddings = {
            k: [(models[i].logit_matrix[k], sizes[i]) for i in range(len(models))]
            for k in range(global_model.num_classes)
        }
        try:
            svm = fit_ovo(class_embeddings, lam)
        except ValueError as err:
            raise RuntimeError(f"round {t}: SVM fit failed: {err}") from err
        for pair, bin_model in svm.models.items():
            if not bin_model.converged:
                log.warning("round %d pair %s: solver stopped at gap %.3e",
                            t, pair, bin_model.duality_gap)
        new_logits = selective_aggregate(svm)
        if strategy.reg_steps > 0:
            new_logits, _ = spreadout_regularize(new_logits, svm, server.logit_opt,
                                                 strategy.reg_steps)
        new_model = Model(aggregated.encoder, new_logits)
        record.lam = lam
        record.sv_counts = tuple(
            len(support_vectors_of_class(svm, k))
            for k in range(global_model.num_classes))
        record.diagnostics = format_diagnostics(svm)

    check_finite(flatten_params(new_model), f"global model after round {t}")
    return new_model, record
