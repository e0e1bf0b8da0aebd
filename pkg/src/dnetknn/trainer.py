"""Fine-tuning driver: mini-batch scheduling and nonlinear conjugate-gradient
minimization of the margin objective through the encoder.

Each epoch re-partitions the training set with a derived seed (seed + epoch),
rebuilds the neighbor triples inside every batch, and runs a fixed number of
Polak-Ribiere line searches per batch.  A backtracking (Armijo) line search
guarantees accepted steps never increase the batch loss.  The returned
parameters are the best-so-far by full-training-set loss, measured at the
end of every epoch against a triples table built once over the whole set.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import margin
from .dataset import Dataset, make_batches
from .encoder import (
    EncoderParams,
    flatten,
    forward,
    from_rbm_stack,
    init_encoder,
    unflatten,
)
from .errors import ConfigError, DimensionError, DivergenceError
from .neighbors import NeighborConfig, build_triples
from .rbm import CdConfig, train_stack

INIT_RBM = "rbm-pretrained"
INIT_RANDOM = "random"


@dataclass(frozen=True)
class TrainConfig:
    layer_sizes: tuple[int, ...]
    k: int = 5
    m: int = 30
    batch_size: int = 10000
    epochs: int = 10
    cg_line_searches: int = 3
    seed: int = 0
    pretraining: CdConfig = field(default_factory=CdConfig)
    init_mode: str = INIT_RBM
    dtype: str = "float64"

    def __post_init__(self):
        if len(self.layer_sizes) < 2:
            raise ConfigError("layer_sizes needs at least an input and an output width")
        if self.k < 1 or self.m < 1:
            raise ConfigError("k and m must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.cg_line_searches < 1:
            raise ConfigError("cg_line_searches must be >= 1")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if self.init_mode not in (INIT_RBM, INIT_RANDOM):
            raise ConfigError(f"unknown init_mode {self.init_mode!r}")
        try:
            np.dtype(self.dtype)
        except TypeError as exc:
            raise ConfigError(f"unknown dtype {self.dtype!r}") from exc

    @property
    def neighbor_config(self) -> NeighborConfig:
        return NeighborConfig(self.k, self.m)


@dataclass
class EpochStats:
    loss: float
    active_triples: int
    seconds: float


@dataclass
class TrainReport:
    """Per-epoch training trajectory; one line per epoch when serialized."""

    epochs: list[EpochStats] = field(default_factory=list)
    checkpoint_path: str | None = None

    @property
    def losses(self) -> list[float]:
        return [e.loss for e in self.epochs]

    def to_lines(self) -> list[str]:
        return [
            f"{idx},{e.loss:.17g},{e.active_triples},{e.seconds:.3f}"
            for idx, e in enumerate(self.epochs)
        ]

    def save(self, path, header: bool = False) -> None:
        with open(path, "w") as f:
            if header:
                f.write("epoch,loss,active_triples,seconds\n")
            for line in self.to_lines():
                f.write(line + "\n")


def polak_ribiere_minimize(value_fn, value_and_grad_fn, x0: np.ndarray,
                           line_searches: int, armijo: float = 1e-4,
                           backtracks: int = 30) -> tuple[np.ndarray, list[float]]:
    """Nonlinear conjugate gradient with PR+ direction updates.

    value_fn(x) -> float and value_and_grad_fn(x) -> (float, grad).  Runs
    the given number of line searches; each one backtracks from an adaptive
    initial step until the Armijo condition holds, so the recorded value
    trajectory is non-increasing.  Returns the final point and the values
    [f(x0), f after each accepted step].
    """
    x = x0.copy()
    f0, g = value_and_grad_fn(x)
    if not (np.isfinite(f0) and np.all(np.isfinite(g))):
        raise DivergenceError("objective is non-finite at the starting point")
    trajectory = [f0]
    direction = -g
    gnorm2 = float(g @ g)
    step = 1.0 / max(1.0, np.sqrt(gnorm2))
    for _ in range(line_searches):
        if gnorm2 == 0.0:
            trajectory.append(f0)
            continue
        slope = float(g @ direction)
        if slope >= 0.0:  # lost conjugacy; restart on steepest descent
            direction = -g
            slope = -gnorm2
        alpha = step
        accepted = False
        resolution = 1e-12 * (1.0 + abs(f0))
        for _ in range(backtracks):
            if alpha * (-slope) < resolution:
                break  # the demanded decrease is below float resolution of f
            f_try = value_fn(x + alpha * direction)
            if np.isfinite(f_try) and f_try <= f0 + armijo * alpha * slope:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            direction = -g  # try fresh steepest descent next time
            step = max(step * 0.25, 1e-20)
            trajectory.append(f0)
            continue
        x += alpha * direction
        step = 2.0 * alpha
        f_new, g_new = value_and_grad_fn(x)
        if not (np.isfinite(f_new) and np.all(np.isfinite(g_new))):
            raise DivergenceError("objective became non-finite after a step")
        beta = max(0.0, float(g_new @ (g_new - g)) / gnorm2)
        direction = -g_new + beta * direction
        g = g_new
        gnorm2 = float(g @ g)
        f0 = f_new
        trajectory.append(f0)
    return x, trajectory


def finetune(train: Dataset, cfg: TrainConfig,
             init: EncoderParams) -> tuple[EncoderParams, TrainReport]:
    """Minimize the margin objective over the encoder parameters.

    Returns the best parameters seen (by end-of-epoch loss over the full
    training set) and the per-epoch report.
    """
    if init.widths != tuple(cfg.layer_sizes):
        raise DimensionError(
            f"init widths {init.widths} do not match layer_sizes {tuple(cfg.layer_sizes)}"
        )
    if cfg.batch_size < 2 * train.num_classes:
        raise ConfigError(
            f"batch_size {cfg.batch_size} < 2 * num_classes ({2 * train.num_classes})"
        )
    dtype = np.dtype(cfg.dtype)
    template = init.astype(dtype)
    features = train.features.astype(dtype, copy=False)
    x = flatten(template)

    full_table = build_triples(train, cfg.neighbor_config)
    report = TrainReport()
    best_loss = np.inf
    best_x = x.copy()
    single_batch = cfg.batch_size >= len(train)
    for epoch in range(cfg.epochs):
        started = time.perf_counter()
        if single_batch:
            # one batch holds the whole set every epoch, so the permutation
            # only relabels rows; reuse the table built on the original order
            batches = iter([(train, full_table)])
        else:
            batches = (
                (batch, build_triples(batch, cfg.neighbor_config))
                for batch in make_batches(train, cfg.batch_size, seed=cfg.seed + epoch)
            )
        for batch_idx, (batch, table) in enumerate(batches):
            batch_features = batch.features.astype(dtype, copy=False)

            def value(vec):
                codes = forward(unflatten(template, vec), batch_features)
                return margin.loss(codes, table).value

            def value_and_grad(vec):
                result, grad = margin.loss_and_param_grad(
                    unflatten(template, vec), batch_features, table)
                return result.value, grad

            try:
                x, _ = polak_ribiere_minimize(
                    value, value_and_grad, x, cfg.cg_line_searches)
            except DivergenceError as exc:
                raise DivergenceError(
                    f"epoch {epoch}, batch {batch_idx}: {exc}") from exc

        full = margin.loss(forward(unflatten(template, x), features), full_table)
        if not np.isfinite(full.value):
            raise DivergenceError(f"epoch {epoch}: full training loss is non-finite")
        report.epochs.append(EpochStats(
            loss=full.value,
            active_triples=full.active_triples,
            seconds=time.perf_counter() - started,
        ))
        if full.value < best_loss:
            best_loss = full.value
            best_x = x.copy()
    return unflatten(template, best_x), report


def pretrain_then_finetune(train: Dataset,
                           cfg: TrainConfig) -> tuple[EncoderParams, TrainReport]:
    """Greedy pretraining (or a random start) followed by fine-tuning."""
    if cfg.init_mode == INIT_RBM:
        stack = train_stack(train, cfg.layer_sizes, cfg.pretraining,
                            dtype=np.dtype(cfg.dtype))
        init = from_rbm_stack(stack)
    else:
        init = init_encoder(cfg.layer_sizes, seed=cfg.seed)
    return finetune(train, cfg, init)
