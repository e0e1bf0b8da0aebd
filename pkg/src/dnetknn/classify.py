"""Code-space classifiers: majority-vote kNN and minimum-energy labeling.

Tie rules are fixed for reproducibility.  kNN breaks distance ties toward
the smaller training index and vote ties toward the class of the nearest
neighbor among the tied classes.  Energy classification hypothesizes each
class in turn for the test point: the point's k nearest codes of the
hypothesized class act as targets, the m nearest codes of every other
class act as impostors, and the hypothesis with the smallest hinge-energy
sum wins (ties toward the smaller class id).  Neighbor selection here runs
in code space because the test point has no row in the pixel-space tables.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, ConsistencyError
from .neighbors import NeighborConfig

_CHUNK_ROWS = 256


@dataclass(frozen=True)
class Prediction:
    """Predicted class id with a score: the vote count for kNN, the negative
    energy for energy mode."""

    label: int
    score: float


def _sq_dists_to(train_codes: np.ndarray, points: np.ndarray) -> np.ndarray:
    aa = (points * points).sum(axis=1)[:, None]
    bb = (train_codes * train_codes).sum(axis=1)[None, :]
    d = aa + bb - 2.0 * (points @ train_codes.T)
    np.maximum(d, 0.0, out=d)
    return d


def knn_predict(train_codes: np.ndarray, train_labels: np.ndarray,
                test_codes: np.ndarray, k: int) -> list[Prediction]:
    """Majority vote among the k nearest training codes of each test code."""
    train_codes = np.atleast_2d(np.asarray(train_codes))
    test_codes = np.atleast_2d(np.asarray(test_codes))
    train_labels = np.asarray(train_labels, dtype=np.int64)
    n = train_codes.shape[0]
    if n == 0:
        raise CapacityError("knn needs a nonempty training set")
    if train_labels.shape[0] != n:
        raise ConsistencyError(f"{train_labels.shape[0]} labels for {n} training codes")
    if not 1 <= k <= n:
        raise CapacityError(f"k={k} must lie in [1, {n}]")
    num_classes = int(train_labels.max()) + 1
    predictions = []
    for start in range(0, test_codes.shape[0], _CHUNK_ROWS):
        dists = _sq_dists_to(train_codes, test_codes[start : start + _CHUNK_ROWS])
        order = np.argsort(dists, axis=1, kind="stable")[:, :k]
        for neighbor_idx in order:
            votes = np.bincount(train_labels[neighbor_idx], minlength=num_classes)
            top = votes.max()
            tied = np.flatnonzero(votes == top)
            if tied.size == 1:
                label = int(tied[0])
            else:
                tied_set = set(int(t) for t in tied)
                label = next(int(train_labels[idx]) for idx in neighbor_idx
                             if int(train_labels[idx]) in tied_set)
            predictions.append(Prediction(label, float(top)))
    return predictions


def energy_predict(train_codes: np.ndarray, train_labels: np.ndarray,
                   test_code: np.ndarray, cfg: NeighborConfig) -> Prediction:
    """Label a single test code by the hypothesized class of lowest energy."""
    train_codes = np.atleast_2d(np.asarray(train_codes))
    train_labels = np.asarray(train_labels, dtype=np.int64)
    test_code = np.asarray(test_code).ravel()
    num_classes = int(train_labels.max()) + 1
    if num_classes < 2:
        raise CapacityError("energy classification needs at least two classes")
    dists = ((train_codes - test_code) ** 2).sum(axis=1)

    need = max(cfg.k, cfg.m)
    nearest_per_class = []
    for cls in range(num_classes):
        idx = np.flatnonzero(train_labels == cls)
        if idx.size < need:
            raise CapacityError(
                f"class {cls} has {idx.size} training codes; energy mode needs >= {need}"
            )
        order = np.argsort(dists[idx], kind="stable")
        nearest_per_class.append(dists[idx[order]])

    energies = np.empty(num_classes)
    for hyp in range(num_classes):
        target_d = nearest_per_class[hyp][: cfg.k]
        impostor_d = np.concatenate([
            nearest_per_class[cls][: cfg.m]
            for cls in range(num_classes) if cls != hyp
        ])
        terms = 1.0 + target_d[:, None] - impostor_d[None, :]
        energies[hyp] = np.maximum(terms, 0.0).sum(dtype=np.float64)
    label = int(np.argmin(energies))  # argmin takes the smaller class id on ties
    return Prediction(label, -float(energies[label]))


def energy_predict_all(train_codes, train_labels, test_codes,
                       cfg: NeighborConfig) -> list[Prediction]:
    """energy_predict applied to each row of test_codes."""
    test_codes = np.atleast_2d(np.asarray(test_codes))
    return [energy_predict(train_codes, train_labels, row, cfg) for row in test_codes]


def error_rate(predictions, true_labels) -> float:
    """Fraction of predictions whose label differs from the truth."""
    if len(predictions) and isinstance(predictions[0], Prediction):
        predicted = np.array([p.label for p in predictions], dtype=np.int64)
    else:
        predicted = np.asarray(predictions, dtype=np.int64)
    truth = np.asarray(true_labels, dtype=np.int64)
    if predicted.shape != truth.shape:
        raise ConsistencyError(
            f"{predicted.shape[0]} predictions vs {truth.shape[0]} labels"
        )
    if predicted.size == 0:
        return 0.0
    return float((predicted != truth).mean())


def save_predictions(path, predictions, true_labels, header: bool = False) -> None:
    """CSV export: index,true_label,predicted_label,score."""
    truth = np.asarray(true_labels, dtype=np.int64)
    if len(predictions) != truth.shape[0]:
        raise ConsistencyError(
            f"{len(predictions)} predictions vs {truth.shape[0]} labels"
        )
    with open(path, "w") as f:
        if header:
            f.write("index,true_label,predicted_label,score\n")
        for idx, (pred, true) in enumerate(zip(predictions, truth)):
            f.write(f"{idx},{true},{pred.label},{pred.score:.17g}\n")
