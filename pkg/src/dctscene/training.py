# -*- coding: utf-8 -*-
"""Offline training of the classifier model.

The per-coefficient weights come from histogram naive Bayes log-odds fitted
with a line and the match threshold from the ROC operating point where the
true positive rate plus the false positive rate equals one. The spatial
lookup table holds the log prior-odds shift of candidates by their number of
similar neighbours.
"""
from dataclasses import dataclass
from typing import Any, Iterable, Optional, Sequence
import logging

import numpy as np
import numpy.typing as npt
from sklearn import metrics

from dctscene.classifier import (ClassifierModel, LambdaTable, MatchWeights, classify_frame, score_modes,
                                 similar_neighbor_counts, spatial_iterate)
from dctscene.config import ModelConfig
from dctscene.features import extract_features
from dctscene.jpeg import decode_jpeg_dct
from dctscene.scene import SceneModel, apply_updates, expire_modes
from dctscene.synthetic import SyntheticSequence
from dctscene.units import MAX_NEIGHBOURS, N_FEATURES

HISTOGRAM_BINS = 64
LAMBDA_PRIOR_STRENGTH = 20.0


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class LabeledPair:
    """Absolute coefficient differences between an input block and a mode."""
    c: tuple[float, ...]
    label: bool

    def __post_init__(self) -> None:
        if len(self.c) != N_FEATURES or min(self.c) < 0:
            raise ValueError(f"Expected {N_FEATURES} non-negative differences, got {self.c}")


@dataclass(frozen=True)
class RocCurve:
    """Operating points of every achievable cut point, from predicting nothing to predicting everything.

    A sample is predicted a match when its score is >= the threshold.
    """
    thresholds: npt.NDArray[np.float64]
    tpr: npt.NDArray[np.float64]
    fpr: npt.NDArray[np.float64]

    @property
    def criterion(self) -> npt.NDArray[np.float64]:
        """|TPR + FPR - 1| per cut point."""
        return np.abs(self.tpr + self.fpr - 1.0)


def pairs_to_arrays(pairs: Iterable[LabeledPair]) -> tuple[npt.NDArray[np.float64], npt.NDArray[np.bool_]]:
    pairs = list(pairs)
    differences = np.array([p.c for p in pairs], dtype=np.float64).reshape(-1, N_FEATURES)
    return differences, np.array([p.label for p in pairs], dtype=bool)


def _check_classes(labels: npt.NDArray[np.bool_]) -> None:
    n_match = int(labels.sum())
    if n_match == 0 or n_match == labels.size:
        raise TrainingError(f"Training data must hold both labels, got {n_match} matches out of {labels.size}")


def roc_curve(scores: npt.ArrayLike, labels: npt.ArrayLike) -> RocCurve:
    """Sweeps every achievable cut point of `scores`.

    Cut points lie midway between neighbouring distinct scores, above the
    largest score and at the smallest score.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError(f"scores and labels must be 1D of equal length, got {scores.shape} and {labels.shape}")
    _check_classes(labels)
    fpr, tpr, _ = metrics.roc_curve(labels.astype(np.int64), scores, pos_label=1, drop_intermediate=False)
    distinct = np.unique(scores)[::-1]
    cuts = np.empty(distinct.size + 1)
    cuts[0] = np.nextafter(distinct[0], np.inf)
    cuts[1:-1] = 0.5 * (distinct[:-1] + distinct[1:])
    cuts[-1] = distinct[-1]
    # a midpoint can round onto the lower score for neighbouring floats
    cuts[1:-1] = np.where(cuts[1:-1] > distinct[1:], cuts[1:-1], distinct[:-1])
    return RocCurve(cuts, np.asarray(tpr, dtype=np.float64), np.asarray(fpr, dtype=np.float64))


def roc_threshold(scores: npt.ArrayLike, labels: npt.ArrayLike) -> float:
    """Returns the cut point minimizing |TPR + FPR - 1|, ties going to the higher TPR."""
    curve = roc_curve(scores, labels)
    if curve.thresholds.size == 2:
        logging.warning("All scores are identical; the ROC threshold is degenerate.")
    order = np.lexsort((-curve.tpr, curve.criterion))
    return float(curve.thresholds[order[0]])


def _coefficient_weight(values: npt.NDArray[np.float64], labels: npt.NDArray[np.bool_], bins: int) -> float:
    edges = np.linspace(values.min(), values.max(), bins + 1)
    n_match = np.histogram(values[labels], edges)[0].astype(np.float64)
    n_other = np.histogram(values[~labels], edges)[0].astype(np.float64)
    total_match, total_other = float(labels.sum()), float((~labels).sum())
    # pseudo-counts proportional to the class totals keep the log-odds finite
    log_odds = np.log((n_match + total_match / bins) / (n_other + total_other / bins))
    support = n_match + n_other
    used = support > 0
    if used.sum() < 2:
        return 0.0
    centres = 0.5 * (edges[:-1] + edges[1:])
    slope, _ = np.polyfit(centres[used], log_odds[used], 1, w=np.sqrt(support[used]))
    return float(slope)


def train_weights(differences: npt.ArrayLike, labels: npt.ArrayLike,
                  bins: int = HISTOGRAM_BINS) -> npt.NDArray[np.float64]:
    """Estimates the weights a_0..a_7 from labeled absolute differences.

    Parameters
    ----------
    differences
        Shape (n, 8), |c_i| per pair.
    labels
        Shape (n,), True for pairs of matching content.
    bins
        Histogram bins over the observed range of each coefficient.

    Returns
    -------
    The slope of the match log-odds against |c_i|, per coefficient.
    """
    differences = np.asarray(differences, dtype=np.float64).reshape(-1, N_FEATURES)
    labels = np.asarray(labels, dtype=bool)
    if differences.shape[0] != labels.size:
        raise ValueError(f"{differences.shape[0]} difference rows but {labels.size} labels")
    _check_classes(labels)
    weights = np.zeros(N_FEATURES)
    for i in range(N_FEATURES):
        values = differences[:, i]
        if values.max() == values.min():
            logging.warning(f"Coefficient {i} has no variance in the training data; its weight is 0.")
            continue
        weights[i] = _coefficient_weight(values, labels, bins)
    return weights


def sequence_features(sequence: SyntheticSequence) -> list[npt.NDArray[np.float64]]:
    return [extract_features(decode_jpeg_dct(frame)) for frame in sequence.frames]


def collect_pairs(sequences: Iterable[SyntheticSequence], rng: np.random.Generator, max_lag: int = 30,
                  features: Optional[Sequence[list[npt.NDArray[np.float64]]]] = None
                  ) -> tuple[npt.NDArray[np.float64], npt.NDArray[np.bool_]]:
    """Pairs every block with the same block a random number of frames earlier.

    A pair matches when the noise-free content of both blocks is identical.
    The more frequent class is subsampled so both classes are equally large.

    Returns
    -------
    (differences, labels)
    """
    all_differences, all_labels = [], []
    for index, sequence in enumerate(sequences):
        frames = features[index] if features is not None else sequence_features(sequence)
        for t in range(1, len(frames)):
            lag = rng.integers(1, min(max_lag, t) + 1, size=frames[t].shape[:2])
            rows, cols = np.indices(lag.shape)
            earlier = np.stack([frames[t - k] for k in range(0, min(max_lag, t) + 1)])
            reference = earlier[lag, rows, cols]
            all_differences.append(np.abs(frames[t] - reference).reshape(-1, N_FEATURES))
            reference_labels = np.stack([sequence.labels[t - k] for k in range(0, min(max_lag, t) + 1)])[lag, rows, cols]
            all_labels.append((sequence.labels[t] == reference_labels).ravel())
    if not all_labels:
        raise TrainingError("No frame pairs found in the training corpus")
    differences = np.concatenate(all_differences)
    labels = np.concatenate(all_labels)
    _check_classes(labels)
    matches, others = np.flatnonzero(labels), np.flatnonzero(~labels)
    n = min(matches.size, others.size)
    keep = np.sort(np.concatenate([rng.choice(matches, n, replace=False), rng.choice(others, n, replace=False)]))
    logging.info(f"Collected {keep.size} balanced training pairs from {labels.size} candidates.")
    return differences[keep], labels[keep]


def lambda_from_samples(labels: npt.ArrayLike, similar: npt.ArrayLike, iteration: int = 1,
                        prior_strength: float = LAMBDA_PRIOR_STRENGTH) -> npt.NDArray[np.float64]:
    """Estimates one lambda row from candidate mode samples.

    The match threshold is the ROC operating point of the base scores, which
    does not depend on how often candidates are correct. lambda(A) restores
    that base rate for candidates with A similar neighbours: it is the log-odds
    of a correct candidate among those with A similar neighbours minus the
    log-odds over all candidates. The weights are log-odds slopes, so this is
    in score units.

    Parameters
    ----------
    labels
        True for candidates that carry the current block's content.
    similar
        Similar neighbour count A of each candidate, 0..4.
    iteration
        Spatial iteration the row belongs to, used in messages.
    prior_strength
        Pseudo-samples at the overall rate added to each count, pulling
        sparse cells towards zero.
    """
    labels = np.asarray(labels, dtype=bool)
    similar = np.asarray(similar)
    row = np.zeros(MAX_NEIGHBOURS + 1)
    rate = float(labels.mean()) if labels.size else 0.0
    if rate in (0.0, 1.0):
        logging.warning(f"Lambda row {iteration} has {labels.size} samples of a single class; using 0.")
        return row
    overall = np.log(rate / (1.0 - rate))
    for a in range(MAX_NEIGHBOURS + 1):
        selected = similar == a
        n = int(selected.sum())
        if n == 0:
            logging.warning(f"Lambda cell (iteration {iteration}, A={a}) has no samples; using 0.")
            continue
        p = (float(labels[selected].sum()) + prior_strength * rate) / (n + prior_strength)
        row[a] = np.log(p / (1.0 - p)) - overall
    return row


def _replay_samples(sequence: SyntheticSequence, frames: list[npt.NDArray[np.float64]], model: ClassifierModel,
                    config: ModelConfig, iteration: int) -> tuple[list[Any], list[Any]]:
    scene: Optional[SceneModel] = None
    labels, similar = [], []
    previous = iteration - 1
    for t, features in enumerate(frames):
        if scene is None or scene.grid_shape != features.shape[:2]:
            scene = SceneModel(features.shape[0], features.shape[1], config, track_tags=True)
        base = score_modes(scene, features, model.weights, config)
        decisions = classify_frame(scene, features, model.weights, config, base)
        decisions = spatial_iterate(scene, decisions, model.lambdas, model.weights, previous, base, config.t_similar)
        valid = np.isfinite(base)
        if valid.any():
            counts = similar_neighbor_counts(scene, decisions, config.t_similar)
            labels.append((scene.tags == sequence.labels[t][:, :, None])[valid])
            similar.append(counts[valid])
        apply_updates(scene, decisions, features, sequence.labels[t])
        expire_modes(scene)
        scene.advance_frame()
    return labels, similar


def train_lambda(sequences: Sequence[SyntheticSequence], weights: MatchWeights, iterations: int,
                 config: Optional[ModelConfig] = None,
                 features: Optional[Sequence[list[npt.NDArray[np.float64]]]] = None) -> LambdaTable:
    """Trains the spatial lookup table one iteration at a time.

    Row I is estimated from a replay of the sequences that uses the already
    trained rows 1..I-1. A candidate mode is correct when it was created from
    the same noise-free content as the current block.
    """
    config = config or ModelConfig()
    if features is None:
        features = [sequence_features(sequence) for sequence in sequences]
    rows: list[npt.NDArray[np.float64]] = []
    for iteration in range(1, iterations + 1):
        model = ClassifierModel(weights, LambdaTable(np.array(rows).reshape(-1, MAX_NEIGHBOURS + 1)))
        labels, similar = [], []
        for sequence, frames in zip(sequences, features):
            la, a = _replay_samples(sequence, frames, model, config, iteration)
            labels += la
            similar += a
        if not labels:
            raise TrainingError("No candidate modes found in the training corpus")
        row = lambda_from_samples(np.concatenate(labels), np.concatenate(similar), iteration)
        logging.info(f"Lambda row {iteration}: {np.array2string(row, precision=3)}")
        rows.append(row)
    return LambdaTable(np.array(rows).reshape(-1, MAX_NEIGHBOURS + 1))


def train_match_weights(differences: npt.ArrayLike, labels: npt.ArrayLike, rng: np.random.Generator,
                        holdout: float = 0.25) -> tuple[MatchWeights, npt.NDArray[np.intp]]:
    """Fits the weights on one split of the pairs and the match threshold on the other.

    Returns
    -------
    (weights, held-out indices)
    """
    if not 0.0 < holdout < 1.0:
        raise ValueError(f"holdout must be in (0, 1), got {holdout}")
    differences = np.asarray(differences, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    order = rng.permutation(labels.size)
    n_holdout = max(1, int(round(holdout * labels.size)))
    held, fitted = order[:n_holdout], order[n_holdout:]
    a = train_weights(differences[fitted], labels[fitted])
    t_match = roc_threshold(differences[held] @ a, labels[held])
    logging.info(f"Trained weights {np.array2string(a, precision=4)}, match threshold {t_match:.4f}")
    return MatchWeights(a, t_match), held


def train_model(sequences: Sequence[SyntheticSequence], iterations: int, config: Optional[ModelConfig] = None,
                seed: int = 0, holdout: float = 0.25) -> ClassifierModel:
    """Trains weights, match threshold and lambda table from a labeled corpus.

    The weights are fitted on one split of the collected pairs; the match
    threshold is the ROC threshold of the DCT scores of the held-out split.
    """
    if not 0.0 < holdout < 1.0:
        raise ValueError(f"holdout must be in (0, 1), got {holdout}")
    config = config or ModelConfig()
    rng = np.random.default_rng(seed)
    features = [sequence_features(sequence) for sequence in sequences]
    differences, labels = collect_pairs(sequences, rng, features=features)
    weights, _ = train_match_weights(differences, labels, rng, holdout)
    return ClassifierModel(weights, train_lambda(sequences, weights, iterations, config, features))
