"""Restricted Boltzmann machines: one-step contrastive divergence training,
greedy stacking, and an exact-likelihood oracle for tiny models.

The model is binary-binary: real-valued inputs in [0, 1] are treated as
Bernoulli probabilities on the visible units.  The one-step sampling policy
is fixed: the data-phase hidden states are sampled binary; the reconstructed
visible layer and the reconstruction-phase hidden layer both use
probabilities.  The learning rule for a batch is

    dW = lr * (<v h>_data - <v h>_recon - weight_decay * W)

with the analogous probability-difference updates for both bias vectors
(no decay on biases).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logsumexp

from .dataset import Dataset
from .errors import CapacityError, ConfigError, DimensionError, DivergenceError

ENUMERATION_LIMIT = 20  # max visible+hidden units for exact enumeration


def sigmoid(z):
    """Logistic function 1/(1+exp(-z)), stable for arguments of any size."""
    out = expit(z)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class Rbm:
    """Weights (num_visible x num_hidden) plus visible and hidden biases."""

    weights: np.ndarray
    visible_bias: np.ndarray
    hidden_bias: np.ndarray

    def __post_init__(self):
        w, b, c = self.weights, self.visible_bias, self.hidden_bias
        if w.ndim != 2 or b.ndim != 1 or c.ndim != 1:
            raise DimensionError("weights must be a matrix and biases vectors")
        if b.shape[0] != w.shape[0] or c.shape[0] != w.shape[1]:
            raise DimensionError(
                f"bias lengths {b.shape[0]}/{c.shape[0]} do not match "
                f"weight shape {w.shape}"
            )
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b)) and np.all(np.isfinite(c))):
            raise DivergenceError("rbm parameters contain non-finite values")

    @property
    def num_visible(self) -> int:
        return self.weights.shape[0]

    @property
    def num_hidden(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class CdConfig:
    """Hyperparameters for contrastive-divergence training.

    Momentum follows the usual pretraining schedule: initial_momentum for
    the first momentum_switch_epoch epochs, then momentum.
    """

    learning_rate: float = 0.1
    momentum: float = 0.9
    initial_momentum: float = 0.5
    momentum_switch_epoch: int = 5
    weight_decay: float = 2e-4
    epochs: int = 10
    mini_batch: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be nonnegative")
        if not (0 <= self.momentum < 1 and 0 <= self.initial_momentum < 1):
            raise ConfigError("momentum values must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be nonnegative")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.mini_batch < 1:
            raise ConfigError("mini_batch must be >= 1")


def init_rbm(num_visible: int, num_hidden: int, rng: np.random.Generator,
             weight_scale: float = 0.01, dtype=np.float64) -> Rbm:
    """Zero-mean Gaussian weights (std weight_scale), zero biases."""
    w = (rng.standard_normal((num_visible, num_hidden)) * weight_scale).astype(dtype)
    return Rbm(w, np.zeros(num_visible, dtype), np.zeros(num_hidden, dtype))


def energy(rbm: Rbm, v, h) -> float:
    """Energy of one joint configuration:
    -sum_ij W_ij v_i h_j - sum_i v_i b_i - sum_j h_j c_j.
    """
    v = np.asarray(v, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if v.shape != (rbm.num_visible,) or h.shape != (rbm.num_hidden,):
        raise DimensionError(
            f"expected v of length {rbm.num_visible} and h of length "
            f"{rbm.num_hidden}, got {v.shape} and {h.shape}"
        )
    return float(-(v @ rbm.weights @ h) - v @ rbm.visible_bias - h @ rbm.hidden_bias)


def hidden_given_visible(rbm: Rbm, v: np.ndarray) -> np.ndarray:
    """p(h_j = 1 | v) for a single vector or a batch of rows."""
    v = np.asarray(v)
    if v.shape[-1] != rbm.num_visible:
        raise DimensionError(
            f"visible width {v.shape[-1]} != {rbm.num_visible}"
        )
    return sigmoid(v @ rbm.weights + rbm.hidden_bias)


def visible_given_hidden(rbm: Rbm, h: np.ndarray) -> np.ndarray:
    """p(v_i = 1 | h) for a single vector or a batch of rows."""
    h = np.asarray(h)
    if h.shape[-1] != rbm.num_hidden:
        raise DimensionError(
            f"hidden width {h.shape[-1]} != {rbm.num_hidden}"
        )
    return sigmoid(h @ rbm.weights.T + rbm.visible_bias)


def _cd1_statistics(rbm: Rbm, batch: np.ndarray, rng: np.random.Generator):
    """One-step CD statistics for a batch.

    Returns per-parameter gradient estimates (positive minus reconstruction
    correlations, already averaged over the batch) and the mean squared
    reconstruction error.  Consumes exactly one rng.random draw of shape
    (rows, num_hidden), used to binarize the data-phase hidden layer.
    """
    n = batch.shape[0]
    ph0 = hidden_given_visible(rbm, batch)
    h0 = (rng.random(ph0.shape) < ph0).astype(batch.dtype)
    pv1 = visible_given_hidden(rbm, h0)
    ph1 = hidden_given_visible(rbm, pv1)
    gw = (batch.T @ h0 - pv1.T @ ph1) / n
    gb = (batch - pv1).mean(axis=0)
    gc = (h0 - ph1).mean(axis=0)
    recon = float(((batch - pv1) ** 2).mean())
    return gw, gb, gc, recon


def cd1_update(rbm: Rbm, batch: np.ndarray, cfg: CdConfig,
               rng: np.random.Generator) -> tuple[Rbm, float]:
    """Apply one CD-1 step on a batch; returns the updated machine and the
    mean squared reconstruction error of the batch."""
    batch = np.asarray(batch)
    if batch.ndim != 2 or batch.shape[1] != rbm.num_visible:
        raise DimensionError(
            f"batch shape {batch.shape} does not match {rbm.num_visible} visible units"
        )
    gw, gb, gc, recon = _cd1_statistics(rbm, batch, rng)
    lr = cfg.learning_rate
    w = rbm.weights + lr * (gw - cfg.weight_decay * rbm.weights)
    b = rbm.visible_bias + lr * gb
    c = rbm.hidden_bias + lr * gc
    if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b)) and np.all(np.isfinite(c))):
        raise DivergenceError("cd1 update produced non-finite parameters")
    return Rbm(w, b, c), recon


def train_rbm(data: np.ndarray, num_hidden: int, cfg: CdConfig,
              rng: np.random.Generator | None = None) -> tuple[Rbm, list[float]]:
    """Train a single machine with CD-1 over shuffled mini-batches.

    Returns the trained machine and the per-epoch mean reconstruction error.
    """
    data = np.asarray(data)
    if data.ndim != 2:
        raise DimensionError("training data must be a 2-D matrix")
    if data.size and (data.min() < 0 or data.max() > 1):
        raise ConfigError("rbm training data must lie in [0, 1]")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    n, num_visible = data.shape
    rbm = init_rbm(num_visible, num_hidden, rng, dtype=data.dtype)
    vel_w = np.zeros_like(rbm.weights)
    vel_b = np.zeros_like(rbm.visible_bias)
    vel_c = np.zeros_like(rbm.hidden_bias)
    lr, decay = cfg.learning_rate, cfg.weight_decay
    history = []
    w, b, c = rbm.weights.copy(), rbm.visible_bias.copy(), rbm.hidden_bias.copy()
    for epoch in range(cfg.epochs):
        mom = cfg.initial_momentum if epoch < cfg.momentum_switch_epoch else cfg.momentum
        order = rng.permutation(n)
        errs = []
        for start in range(0, n, cfg.mini_batch):
            rows = data[order[start : start + cfg.mini_batch]]
            gw, gb, gc, recon = _cd1_statistics(Rbm(w, b, c), rows, rng)
            vel_w = mom * vel_w + lr * (gw - decay * w)
            vel_b = mom * vel_b + lr * gb
            vel_c = mom * vel_c + lr * gc
            w = w + vel_w
            b = b + vel_b
            c = c + vel_c
            errs.append(recon)
        if not np.all(np.isfinite(w)):
            raise DivergenceError(f"rbm training diverged in epoch {epoch}")
        history.append(float(np.mean(errs)))
    return Rbm(w, b, c), history


def train_stack(data: Dataset, layer_sizes, cfg: CdConfig, dtype=None) -> list[Rbm]:
    """Greedy layer-by-layer pretraining.

    Machine t is trained on the hidden activation probabilities of machine
    t-1 applied to the data; the raw features feed the first machine.
    Computation runs in the requested dtype (default: the data's own).
    """
    layer_sizes = list(layer_sizes)
    if len(layer_sizes) < 2:
        raise ConfigError("layer_sizes needs at least an input and an output width")
    if layer_sizes[0] != data.dim:
        raise DimensionError(
            f"layer_sizes[0]={layer_sizes[0]} does not match data dim {data.dim}"
        )
    rng = np.random.default_rng(cfg.seed)
    activations = data.features
    if dtype is not None:
        activations = activations.astype(dtype, copy=False)
    stack = []
    for num_hidden in layer_sizes[1:]:
        machine, _ = train_rbm(activations, num_hidden, cfg, rng)
        stack.append(machine)
        activations = hidden_given_visible(machine, activations)
    return stack


def _binary_configs(k: int) -> np.ndarray:
    return np.array(list(itertools.product((0.0, 1.0), repeat=k)), dtype=np.float64)


def log_prob_visible(rbm: Rbm, rows: np.ndarray) -> np.ndarray:
    """log p(v) for each row, by full enumeration of the joint distribution.

    The partition function sums exp(-E) over all 2^(V+H) configurations, so
    V+H is capped at ENUMERATION_LIMIT.
    """
    total = rbm.num_visible + rbm.num_hidden
    if total > ENUMERATION_LIMIT:
        raise CapacityError(
            f"enumeration needs visible+hidden <= {ENUMERATION_LIMIT}, got {total}"
        )
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    if rows.shape[1] != rbm.num_visible:
        raise DimensionError(
            f"rows have width {rows.shape[1]}, expected {rbm.num_visible}"
        )
    vs = _binary_configs(rbm.num_visible)
    hs = _binary_configs(rbm.num_hidden)
    # -E over the full grid of (v, h) pairs
    neg_energy_all = vs @ rbm.weights @ hs.T + (vs @ rbm.visible_bias)[:, None] \
        + (hs @ rbm.hidden_bias)[None, :]
    log_z = logsumexp(neg_energy_all)
    neg_energy_rows = rows @ rbm.weights @ hs.T + (rows @ rbm.visible_bias)[:, None] \
        + (hs @ rbm.hidden_bias)[None, :]
    return logsumexp(neg_energy_rows, axis=1) - log_z


def exact_log_likelihood(rbm: Rbm, rows: np.ndarray) -> float:
    """Mean log p(v) over the given rows (enumeration oracle, tiny models only)."""
    return float(log_prob_visible(rbm, rows).mean())
