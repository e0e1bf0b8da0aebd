"""Large-margin triplet objective over code vectors and its gradients.

For every table row (i, l, j) the objective adds

    hinge(1 + ||y_i - y_l||^2 - ||y_i - y_j||^2)

where y = f(x) are the code vectors.  The margin constant is fixed at 1 and
the loss is a raw sum (no normalization by row count), so its scale grows
with the table.  Rows whose hinge argument is <= 0 are inactive and
contribute nothing to the value or the gradient; the sub-gradient at the
kink is taken as 0.

The implementation scans the table once via its unique-pair decomposition:
squared distances are evaluated once per distinct (anchor, target) and
(anchor, impostor) pair and gathered back onto rows.  Each active row
contributes three updates to the code gradient, which is algebraically the
per-point pull/push sum:

    row i += 2 (y_i - y_l) - 2 (y_i - y_j)
    row l -= 2 (y_i - y_l)
    row j += 2 (y_i - y_j)

The scatter is organized as a graph-Laplacian product over signed active
pair counts, which keeps the whole pass vectorized and reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .encoder import (
    LINEAR,
    EncoderParams,
    backward,
    flatten_gradients,
    forward_with_cache,
)
from .errors import ConfigError, ConsistencyError
from .neighbors import TriplesTable


def hinge(z):
    """max(z, 0), elementwise."""
    return np.maximum(z, 0.0)


@dataclass(frozen=True)
class MarginLoss:
    """Sum of hinge terms plus the number of margin-violating rows."""

    value: float
    active_triples: int


@dataclass(frozen=True)
class LinearBaselineConfig:
    """Single-linear-layer objective: pull term plus hinge term weighted by
    the penalty coefficient."""

    penalty: float = 1.0  # coefficient C on the hinge (margin) sum
    output_dim: int | None = None

    def __post_init__(self):
        if self.penalty < 0:
            raise ConfigError("penalty must be nonnegative")


def _check_indices(codes: np.ndarray, table: TriplesTable) -> None:
    rows = table.rows
    if rows.size and (rows.min() < 0 or rows.max() >= codes.shape[0]):
        raise ConsistencyError(
            f"triple indices must lie in [0, {codes.shape[0]}), "
            f"found range [{rows.min()}, {rows.max()}]"
        )


def _pair_distances(codes: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    diff = codes[pairs[:, 0]] - codes[pairs[:, 1]]
    return (diff * diff).sum(axis=1)


def _hinge_arguments(codes: np.ndarray, table: TriplesTable) -> np.ndarray:
    """1 + d(i,l) - d(i,j) for every table row."""
    pairs = table.pairs
    d_target = _pair_distances(codes, pairs.target_pairs)
    d_impostor = _pair_distances(codes, pairs.impostor_pairs)
    return 1.0 + d_target[pairs.target_ids] - d_impostor[pairs.impostor_ids]


def _scatter_pair_grad(grad: np.ndarray, codes: np.ndarray, pairs: np.ndarray,
                       weights: np.ndarray) -> None:
    """Add 2 * w * [(y_a - y_b) into row a, (y_b - y_a) into row b] per pair."""
    n = codes.shape[0]
    data = np.concatenate((weights, weights)).astype(np.float64)
    r = np.concatenate((pairs[:, 0], pairs[:, 1]))
    c = np.concatenate((pairs[:, 1], pairs[:, 0]))
    adjacency = sparse.coo_matrix((data, (r, c)), shape=(n, n)).tocsr()
    deg = np.asarray(adjacency.sum(axis=1)).ravel()
    grad += 2.0 * (deg[:, None] * codes - adjacency @ codes)


def loss(codes: np.ndarray, table: TriplesTable) -> MarginLoss:
    """Objective value and active-row count without the gradient."""
    codes = np.atleast_2d(np.asarray(codes))
    _check_indices(codes, table)
    if len(table) == 0:
        return MarginLoss(0.0, 0)
    z = _hinge_arguments(codes, table)
    viol = z > 0.0
    return MarginLoss(float(z.sum(dtype=np.float64, where=viol)), int(viol.sum()))


def loss_and_code_grad(codes: np.ndarray,
                       table: TriplesTable) -> tuple[MarginLoss, np.ndarray]:
    """Objective value plus its gradient with respect to every code row."""
    codes = np.atleast_2d(np.asarray(codes))
    _check_indices(codes, table)
    grad = np.zeros_like(codes)
    if len(table) == 0:
        return MarginLoss(0.0, 0), grad
    pairs = table.pairs
    z = _hinge_arguments(codes, table)
    viol = z > 0.0
    result = MarginLoss(float(z.sum(dtype=np.float64, where=viol)), int(viol.sum()))
    if result.active_triples:
        # how many active rows each unique pair participates in
        target_w = np.bincount(pairs.target_ids[viol],
                               minlength=pairs.target_pairs.shape[0])
        impostor_w = np.bincount(pairs.impostor_ids[viol],
                                 minlength=pairs.impostor_pairs.shape[0])
        active_t = target_w > 0
        active_i = impostor_w > 0
        _scatter_pair_grad(grad, codes, pairs.target_pairs[active_t],
                           target_w[active_t])
        _scatter_pair_grad(grad, codes, pairs.impostor_pairs[active_i],
                           -impostor_w[active_i])
    return result, grad


def loss_and_param_grad(params: EncoderParams, batch: np.ndarray,
                        table: TriplesTable) -> tuple[MarginLoss, np.ndarray]:
    """Objective on forward(params, batch) and its flattened parameter gradient.

    The gradient vector lines up with encoder.flatten(params).
    """
    codes, cache = forward_with_cache(params, batch)
    result, code_grad = loss_and_code_grad(codes, table)
    grads = backward(params, cache, code_grad)
    return result, flatten_gradients(grads)


def linear_baseline_loss(params: EncoderParams, batch: np.ndarray,
                         table: TriplesTable,
                         cfg: LinearBaselineConfig) -> tuple[float, np.ndarray]:
    """Single-linear-layer objective: sum of target-pair distances plus the
    penalty-weighted margin hinge sum, with its flattened gradient.

    Each (anchor, target) pair is counted once in the pull term regardless
    of how many table rows repeat it.
    """
    if len(params.layers) != 1 or params.layers[0].activation != LINEAR:
        raise ConfigError("the baseline objective needs exactly one linear layer")
    if cfg.output_dim is not None and params.widths[-1] != cfg.output_dim:
        raise ConfigError(
            f"encoder outputs {params.widths[-1]} dims, config expects {cfg.output_dim}"
        )
    codes, cache = forward_with_cache(params, batch)
    hinge_part, hinge_grad = loss_and_code_grad(codes, table)

    target_pairs = table.pairs.target_pairs
    pull = float(_pair_distances(codes, target_pairs).sum(dtype=np.float64))
    pull_grad = np.zeros_like(codes)
    _scatter_pair_grad(pull_grad, codes, target_pairs,
                       np.ones(target_pairs.shape[0]))

    code_grad = pull_grad + cfg.penalty * hinge_grad
    grads = backward(params, cache, code_grad)
    return pull + cfg.penalty * hinge_part.value, flatten_gradients(grads)
