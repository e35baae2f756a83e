# -*- coding: utf-8 -*-
"""Mode matching.

A trained weighted sum of absolute coefficient differences (the DCT score)
ranks the modes of each block. Modes matched recently get an active mode
bonus, and a number of spatial iterations re-rank the modes using how many
4-connected neighbours matched modes created at a similar time.

Scores are oriented so that a higher score means a more likely match.
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence
import logging

import numba
import numpy as np
import numpy.typing as npt

from dctscene.config import ModelConfig, default_model_text
from dctscene.scene import ModeModel, SceneModel
from dctscene.units import MAX_NEIGHBOURS, N_FEATURES

CREATE_NEW = -1


@dataclass(frozen=True)
class MatchWeights:
    """Per-coefficient weights `a` and the accept/create threshold `t_match`."""
    a: npt.NDArray[np.float64]
    t_match: float

    def __post_init__(self) -> None:
        a = np.array(self.a, dtype=np.float64)
        if a.shape != (N_FEATURES,):
            raise ValueError(f"Expected {N_FEATURES} weights, got shape {a.shape}")
        a.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "t_match", float(self.t_match))


@dataclass(frozen=True)
class LambdaTable:
    """Score adjustment per spatial iteration (rows) and similar neighbour count (columns 0..4)."""
    values: npt.NDArray[np.float64]

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64).reshape(-1, MAX_NEIGHBOURS + 1)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, iterations: int) -> "LambdaTable":
        return cls(np.zeros((iterations, MAX_NEIGHBOURS + 1)))

    @property
    def iterations(self) -> int:
        return int(self.values.shape[0])

    def row(self, iteration: int) -> npt.NDArray[np.float64]:
        """Returns the adjustments of 1-based `iteration`; zeros beyond the table."""
        if iteration < 1:
            raise ValueError(f"Iterations are counted from 1, got {iteration}")
        if iteration > self.iterations:
            return np.zeros(MAX_NEIGHBOURS + 1)
        return self.values[iteration - 1]

    def __call__(self, iteration: int, similar: int) -> float:
        return float(self.row(iteration)[similar])

    def for_iterations(self, iterations: int) -> "LambdaTable":
        """Returns a table with exactly `iterations` rows, padding with zero rows."""
        if iterations > self.iterations:
            logging.warning(f"Model holds {self.iterations} lambda rows, {iterations} iterations requested; "
                            "the missing rows are zero.")
        return LambdaTable(np.array([self.row(i) for i in range(1, iterations + 1)]).reshape(-1, MAX_NEIGHBOURS + 1))


@dataclass(frozen=True)
class ClassifierModel:
    weights: MatchWeights
    lambdas: LambdaTable = field(default_factory=lambda: LambdaTable.zeros(0))


@dataclass(frozen=True)
class MatchDecision:
    """Outcome of matching one block.

    `mode_index` is CREATE_NEW when a new mode is to be created; `score` is
    then the best (rejected) mode score, or -inf for a block without modes.
    """
    row: int
    col: int
    mode_index: int
    score: float
    matched_creation_frame: int

    @property
    def matched(self) -> bool:
        return self.mode_index != CREATE_NEW


@dataclass
class DecisionGrid:
    """Match decisions of a whole frame as arrays of shape (rows, cols)."""
    mode_index: npt.NDArray[np.int16]
    score: npt.NDArray[np.float64]
    creation_frame: npt.NDArray[np.int64]

    @property
    def shape(self) -> tuple[int, int]:
        return (int(self.mode_index.shape[0]), int(self.mode_index.shape[1]))

    @property
    def created(self) -> npt.NDArray[np.bool_]:
        return self.mode_index == CREATE_NEW

    def decision(self, row: int, col: int) -> MatchDecision:
        return MatchDecision(row, col, int(self.mode_index[row, col]), float(self.score[row, col]),
                             int(self.creation_frame[row, col]))

    def copy(self) -> "DecisionGrid":
        return DecisionGrid(self.mode_index.copy(), self.score.copy(), self.creation_frame.copy())

    def same_outcome(self, other: "DecisionGrid") -> bool:
        return bool(np.array_equal(self.mode_index, other.mode_index)
                    and np.array_equal(self.creation_frame, other.creation_frame))


def kappa(block: npt.ArrayLike, mode_coeffs: npt.ArrayLike, weights: MatchWeights) -> float:
    """DCT score of one block against one mode: sum of a_i * |block_i - mode_i|."""
    block = np.asarray(block, dtype=np.float64)
    mode_coeffs = np.asarray(mode_coeffs, dtype=np.float64)
    score = 0.0
    for i in range(N_FEATURES):
        score += weights.a[i] * abs(block[i] - mode_coeffs[i])
    return score


def _prefer(score: float, hits: int, creation: int, best: Optional[tuple[float, int, int]]) -> bool:
    if best is None:
        return True
    return (score, hits, -creation) > best


def classify_block(block: npt.ArrayLike, modes: Sequence[ModeModel], weights: MatchWeights, current_frame: int,
                   config: Optional[ModelConfig] = None, *, row: int = 0, col: int = 0) -> MatchDecision:
    """Selects the best matching mode of one block, or decides to create a new one.

    Every mode scores kappa plus `bonus_value` if it was matched within the
    last `bonus_window` frames. The best mode (ties: more hits, then earlier
    creation) is matched if its score reaches `t_match`.
    """
    config = config or ModelConfig()
    best: Optional[tuple[float, int, int]] = None
    best_index = CREATE_NEW
    for index, mode in enumerate(modes):
        score = kappa(block, mode.coeffs, weights)
        if current_frame - mode.last_matched_frame <= config.bonus_window:
            score += config.bonus_value
        if _prefer(score, mode.hit_count, mode.creation_frame, best):
            best = (score, mode.hit_count, -mode.creation_frame)
            best_index = index
    if best is None:
        return MatchDecision(row, col, CREATE_NEW, -np.inf, current_frame)
    if best[0] >= weights.t_match:
        return MatchDecision(row, col, best_index, best[0], modes[best_index].creation_frame)
    return MatchDecision(row, col, CREATE_NEW, best[0], current_frame)


@numba.jit(nopython=True, cache=True)
def _score_modes(features, coeffs, last, count, a, bonus_value, bonus_window, current):
    rows, cols, max_modes = last.shape
    scores = np.empty((rows, cols, max_modes), dtype=np.float64)
    scores[:] = -np.inf
    for r in range(rows):
        for c in range(cols):
            for m in range(count[r, c]):
                score = 0.0
                for i in range(a.shape[0]):
                    score += a[i] * abs(features[r, c, i] - coeffs[r, c, m, i])
                if current - last[r, c, m] <= bonus_window:
                    score += bonus_value
                scores[r, c, m] = score
    return scores


@numba.jit(nopython=True, cache=True)
def _select_modes(scores, hits, creation, count, t_match, current):
    rows, cols, _ = scores.shape
    mode_index = np.empty((rows, cols), dtype=np.int16)
    best_score = np.empty((rows, cols), dtype=np.float64)
    creation_frame = np.empty((rows, cols), dtype=np.int64)
    for r in range(rows):
        for c in range(cols):
            best = -1
            for m in range(np.int64(count[r, c])):
                if best < 0:
                    best = m
                    continue
                s, b = scores[r, c, m], scores[r, c, best]
                if s > b or (s == b and (hits[r, c, m] > hits[r, c, best] or (
                        hits[r, c, m] == hits[r, c, best] and creation[r, c, m] < creation[r, c, best]))):
                    best = m
            mode_index[r, c] = -1
            creation_frame[r, c] = current
            best_score[r, c] = -np.inf
            if best >= 0:
                best_score[r, c] = scores[r, c, best]
                if scores[r, c, best] >= t_match[r, c]:
                    mode_index[r, c] = best
                    creation_frame[r, c] = creation[r, c, best]
    return mode_index, best_score, creation_frame


@numba.jit(nopython=True, cache=True)
def _similar_counts(neighbour_creation, creation, count, t_similar):
    rows, cols, max_modes = creation.shape
    similar = np.zeros((rows, cols, max_modes), dtype=np.int64)
    for r in range(rows):
        for c in range(cols):
            for m in range(count[r, c]):
                candidate = creation[r, c, m]
                n = 0
                if r > 0 and abs(neighbour_creation[r - 1, c] - candidate) <= t_similar:
                    n += 1
                if r + 1 < rows and abs(neighbour_creation[r + 1, c] - candidate) <= t_similar:
                    n += 1
                if c > 0 and abs(neighbour_creation[r, c - 1] - candidate) <= t_similar:
                    n += 1
                if c + 1 < cols and abs(neighbour_creation[r, c + 1] - candidate) <= t_similar:
                    n += 1
                similar[r, c, m] = n
    return similar


def score_modes(scene: SceneModel, features: npt.NDArray[Any], weights: MatchWeights,
                config: Optional[ModelConfig] = None) -> npt.NDArray[np.float64]:
    """Returns the base scores (kappa plus active mode bonus) of every stored mode.

    Returns
    -------
    Array of shape (rows, cols, max_modes); unused mode slots hold -inf.
    """
    config = config or scene.config
    return _score_modes(np.asarray(features, dtype=np.float64), scene.coeffs, scene.last, scene.count,
                        weights.a, float(config.bonus_value), config.bonus_window, scene.current_frame)


def select_modes(scene: SceneModel, scores: npt.NDArray[np.float64], t_match: float,
                 keep_matched: Optional[npt.NDArray[np.bool_]] = None) -> DecisionGrid:
    """Picks the best scoring mode per block and applies the match threshold.

    Blocks flagged in `keep_matched` skip the threshold and always match
    their best mode.
    """
    thresholds = np.full(scene.grid_shape, float(t_match))
    if keep_matched is not None:
        thresholds[keep_matched] = -np.inf
    return DecisionGrid(*_select_modes(scores, scene.hits, scene.creation, scene.count, thresholds,
                                       scene.current_frame))


def classify_frame(scene: SceneModel, features: npt.NDArray[Any], weights: MatchWeights,
                   config: Optional[ModelConfig] = None,
                   base_scores: Optional[npt.NDArray[np.float64]] = None) -> DecisionGrid:
    """Runs `classify_block` on every block of the frame."""
    if base_scores is None:
        base_scores = score_modes(scene, features, weights, config)
    return select_modes(scene, base_scores, weights.t_match)


def count_similar_neighbors(row: int, col: int, candidate_creation_frame: int,
                            neighbour_creation: npt.NDArray[np.integer], t_similar: int) -> int:
    """Counts the 4-connected neighbours whose matched mode was created within
    `t_similar` frames of `candidate_creation_frame`."""
    rows, cols = neighbour_creation.shape
    count = 0
    for r, c in ((row - 1, col), (row + 1, col), (row, col - 1), (row, col + 1)):
        if 0 <= r < rows and 0 <= c < cols and abs(int(neighbour_creation[r, c]) - candidate_creation_frame) <= t_similar:
            count += 1
    return count


def similar_neighbor_counts(scene: SceneModel, decisions: DecisionGrid, t_similar: int) -> npt.NDArray[np.int64]:
    """Returns A for every stored mode, shape (rows, cols, max_modes)."""
    return _similar_counts(decisions.creation_frame, scene.creation, scene.count, t_similar)


def spatial_step(scene: SceneModel, base_scores: npt.NDArray[np.float64], decisions: DecisionGrid,
                 lambda_row: npt.ArrayLike, t_match: float, t_similar: int,
                 raw: Optional[DecisionGrid] = None) -> DecisionGrid:
    """One synchronous spatial iteration.

    Every mode scores its base score plus lambda(A), where A counts
    neighbours of the previous decisions. Creating a new mode stays at
    `t_match` without adjustment and only competes in blocks where the raw
    decisions `raw` (default: `decisions`) created a mode. Blocks the raw
    classifier matched may switch modes but never fall back to creation.
    """
    if raw is None:
        raw = decisions
    similar = similar_neighbor_counts(scene, decisions, t_similar)
    totals = base_scores + np.asarray(lambda_row, dtype=np.float64)[similar]
    return select_modes(scene, totals, t_match, keep_matched=raw.mode_index >= 0)


def spatial_iterate(scene: SceneModel, decisions: DecisionGrid, lambdas: LambdaTable, weights: MatchWeights,
                    iterations: int, base_scores: npt.NDArray[np.float64], t_similar: int) -> DecisionGrid:
    """Refines `decisions` with `iterations` spatial iterations.

    Iteration I reads only the output of iteration I - 1, so the result does
    not depend on the order in which blocks are visited.
    """
    raw = decisions
    for iteration in range(1, iterations + 1):
        decisions = spatial_step(scene, base_scores, decisions, lambdas.row(iteration), weights.t_match, t_similar,
                                 raw)
    return decisions


def parse_model(text: str) -> ClassifierModel:
    """Parses model text: 8 weights, T_match, then rows of 5 lambda values.

    Lines starting with '#' are comments.
    """
    values = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            values.extend(float(token) for token in line.replace(",", " ").split())
    if len(values) < N_FEATURES + 1:
        raise ValueError(f"Model holds {len(values)} values, at least {N_FEATURES + 1} expected")
    rest = values[N_FEATURES + 1:]
    if len(rest) % (MAX_NEIGHBOURS + 1):
        raise ValueError(f"Lambda values must come in rows of {MAX_NEIGHBOURS + 1}, got {len(rest)} values")
    return ClassifierModel(MatchWeights(np.array(values[:N_FEATURES]), values[N_FEATURES]),
                           LambdaTable(np.array(rest)))


def format_model(model: ClassifierModel) -> str:
    lines = ["# dctscene classifier model",
             "# weights a0..a7 (6 luma coefficients in zigzag order, I, Q)",
             " ".join(f"{a:.9g}" for a in model.weights.a),
             "# match threshold",
             f"{model.weights.t_match:.9g}",
             f"# lambda rows, one per spatial iteration, for 0..{MAX_NEIGHBOURS} similar neighbours"]
    lines.extend(" ".join(f"{v:.9g}" for v in row) for row in model.lambdas.values)
    return "\n".join(lines) + "\n"


def load_model(path: Optional[str | Path] = None) -> ClassifierModel:
    """Loads a model file, or the model shipped with the package if `path` is None."""
    if path is None:
        return parse_model(default_model_text())
    logging.info(f"Loading classifier model from {path}")
    return parse_model(Path(path).read_text(encoding="utf-8"))


def save_model(model: ClassifierModel, path: str | Path) -> None:
    Path(path).write_text(format_model(model), encoding="utf-8")
    logging.info(f"Saved classifier model to {path}")
