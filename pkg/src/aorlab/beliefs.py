"""Belief-MDP mechanics over a finite label set.

A belief is a point on the probability simplex over object labels, stored as
a 1-D float64 numpy array. The hidden label never changes within an episode,
so the transition side of every update is the identity and posterior updates
reduce to an elementwise product with a likelihood column followed by
renormalization.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateClass, DimensionMismatch, ZeroEvidence

SIMPLEX_TOL = 1e-9
EVIDENCE_TOL = 1e-30


def as_belief(probs) -> np.ndarray:
    """Validate and freeze a probability vector as a belief.

    Entries must be non-negative and sum to 1 within ``SIMPLEX_TOL``. The
    returned array is read-only so beliefs can be shared safely.
    """
    b = np.asarray(probs, dtype=np.float64)
    if b.ndim != 1:
        raise DimensionMismatch(f"belief must be 1-D, got shape {b.shape}")
    if np.any(b < -SIMPLEX_TOL):
        raise ValueError(f"belief has negative entries: {b}")
    total = float(b.sum())
    if abs(total - 1.0) > SIMPLEX_TOL:
        raise ValueError(f"belief entries sum to {total}, expected 1")
    b = np.clip(b, 0.0, None)
    b = b / b.sum()
    b.flags.writeable = False
    return b


def uniform_belief(num_labels: int) -> np.ndarray:
    return as_belief(np.full(num_labels, 1.0 / num_labels))


def is_valid_belief(b: np.ndarray, dim: int | None = None) -> bool:
    if b.ndim != 1 or (dim is not None and b.shape[0] != dim):
        return False
    return bool(np.all(b >= 0.0) and abs(float(b.sum()) - 1.0) <= SIMPLEX_TOL)


@dataclass(frozen=True)
class WorldSpec:
    """Sizes of a recognition world. The label transition is always identity."""

    num_labels: int
    num_actions: int
    num_observations: int

    def __post_init__(self):
        for name in ("num_labels", "num_actions", "num_observations"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class RewardSpec:
    """Reward parameters for recognition episodes.

    A step's reward is ``step_cost`` plus ``correct_reward`` when the
    post-update belief ranks the true label first. ``r_max`` bounds the
    magnitude of any one-step or terminal reward and feeds the planner's
    parameter formulas.
    """

    correct_reward: float = 1.0
    step_cost: float = -0.05
    gamma: float = 0.9

    def __post_init__(self):
        if not (0.0 < self.gamma < 1.0):
            raise ValueError(f"gamma must lie strictly inside (0,1), got {self.gamma}")
        if self.step_cost > 0.0:
            raise ValueError("step_cost must be <= 0")
        if self.correct_reward <= 0.0:
            raise ValueError("correct_reward must be positive")

    @property
    def r_max(self) -> float:
        return max(
            abs(self.step_cost),
            abs(self.step_cost + self.correct_reward),
            self.correct_reward,
        )

    @property
    def value_bound(self) -> float:
        return self.r_max / (1.0 - self.gamma)


@dataclass(frozen=True)
class LikelihoodModel:
    """Observation likelihood table P(o | s, a) with per-class normalizers.

    ``table`` has shape (num_labels, num_actions, num_observations) and every
    (label, action) slice sums to 1 over observations, which keeps evidence
    probabilities a proper distribution over the observation set.
    """

    table: np.ndarray
    per_class_normalizers: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        table = np.asarray(self.table, dtype=np.float64)
        if table.ndim != 3:
            raise DimensionMismatch(f"table must be 3-D (S,A,O), got {table.shape}")
        if np.any(table < 0.0):
            raise ValueError("likelihood table has negative entries")
        sums = table.sum(axis=2)
        if np.any(np.abs(sums - 1.0) > SIMPLEX_TOL):
            bad = np.unravel_index(int(np.argmax(np.abs(sums - 1.0))), sums.shape)
            raise ValueError(
                f"table rows must sum to 1 over observations; slice (s={bad[0]}, a={bad[1]}) "
                f"sums to {sums[bad]}"
            )
        table.flags.writeable = False
        object.__setattr__(self, "table", table)
        norm = self.per_class_normalizers
        if norm is None:
            norm = np.ones(table.shape[0])
        norm = np.asarray(norm, dtype=np.float64)
        if norm.shape != (table.shape[0],) or np.any(norm <= 0.0):
            raise ValueError("per_class_normalizers must be positive, one per label")
        norm.flags.writeable = False
        object.__setattr__(self, "per_class_normalizers", norm)

    @property
    def num_labels(self) -> int:
        return self.table.shape[0]

    @property
    def num_actions(self) -> int:
        return self.table.shape[1]

    @property
    def num_observations(self) -> int:
        return self.table.shape[2]

    def column(self, action: int, obs: int) -> np.ndarray:
        """Likelihood of observation ``obs`` under every label, for ``action``."""
        return self.table[:, action, obs]


def normalize_likelihoods(raw_scores) -> LikelihoodModel:
    """Build a likelihood model from per-observation, per-class scores.

    ``raw_scores`` has shape (num_observations, num_labels); row o holds the
    classifier's scores for observation o under each label. Each class's
    column is divided by its total over all observations, so for every label
    the resulting likelihoods sum to 1 over the observation set. The class
    totals are kept as normalizers for later reweighted retraining. The table
    is replicated across a single action axis; callers needing |A| > 1 tile it.
    """
    scores = np.asarray(raw_scores, dtype=np.float64)
    if scores.ndim != 2:
        raise DimensionMismatch(f"raw_scores must be 2-D (O,S), got {scores.shape}")
    if np.any(scores < 0.0):
        raise ValueError("raw_scores must be non-negative")
    totals = scores.sum(axis=0)
    if np.any(totals <= EVIDENCE_TOL):
        bad = int(np.argmin(totals))
        raise DegenerateClass(f"class {bad} has total score {totals[bad]}")
    per_class = (scores / totals).T  # (S, O)
    table = per_class[:, None, :]
    return LikelihoodModel(table=table, per_class_normalizers=totals)


def tile_actions(model: LikelihoodModel, num_actions: int) -> LikelihoodModel:
    """Repeat an action-independent table across ``num_actions`` actions."""
    if model.num_actions == num_actions:
        return model
    if model.num_actions != 1:
        raise DimensionMismatch("can only tile a single-action model")
    table = np.repeat(model.table, num_actions, axis=1)
    return LikelihoodModel(table=table, per_class_normalizers=model.per_class_normalizers)


def evidence_prob(b: np.ndarray, action: int, obs: int, model: LikelihoodModel) -> float:
    """Probability of seeing ``obs`` after ``action`` under belief ``b``,
    i.e. the belief-weighted likelihood sum over labels."""
    return float(b @ model.column(action, obs))


def belief_update(b: np.ndarray, action: int, obs: int, model: LikelihoodModel) -> np.ndarray:
    """Posterior belief after taking ``action`` and observing ``obs``.

    With an identity label transition the update is
    ``b'(s) = P(obs | s, action) * b(s) / Pr(obs | action, b)``.

    Raises ZeroEvidence when the evidence probability is at or below
    ``EVIDENCE_TOL``, signalling an observation impossible under ``b``.
    """
    col = model.column(action, obs)
    numer = b * col
    evidence = float(numer.sum())
    if evidence <= EVIDENCE_TOL:
        raise ZeroEvidence(
            f"observation {obs} after action {action} has evidence {evidence}"
        )
    out = numer / evidence
    out = out / out.sum()  # absorb floating-point drift
    out.flags.writeable = False
    return out


def belief_distance(b1: np.ndarray, b2: np.ndarray) -> float:
    """L1 distance between two beliefs; a metric bounded by 2 on the simplex."""
    if b1.shape != b2.shape:
        raise DimensionMismatch(f"belief shapes differ: {b1.shape} vs {b2.shape}")
    return float(np.abs(b1 - b2).sum())


def belief_transition_prob(
    b: np.ndarray,
    action: int,
    b_target: np.ndarray,
    model: LikelihoodModel,
    tol: float,
) -> float:
    """Probability of moving from ``b`` to within ``tol`` of ``b_target``.

    Enumerates every observation, performs the posterior update, and sums the
    evidence of those observations whose updated belief lands within ``tol``
    of the target under the L1 belief metric. Observations with zero evidence
    cannot fire and are skipped.
    """
    if b.shape != b_target.shape:
        raise DimensionMismatch("belief and target dimension differ")
    total = 0.0
    for obs in range(model.num_observations):
        ev = evidence_prob(b, action, obs, model)
        if ev <= EVIDENCE_TOL:
            continue
        updated = (b * model.column(action, obs)) / ev
        if float(np.abs(updated - b_target).sum()) <= tol:
            total += ev
    return total


def expected_reward(b: np.ndarray, action: int, reward_table: np.ndarray) -> float:
    """Belief-weighted expected reward ``sum_s b(s) * R(s, action)``.

    ``reward_table`` is (num_labels, num_actions) or (num_labels,); the
    result is exactly linear in ``b``.
    """
    table = np.asarray(reward_table, dtype=np.float64)
    row = table if table.ndim == 1 else table[:, action]
    if row.shape != b.shape:
        raise DimensionMismatch(
            f"reward table labels {row.shape} do not match belief {b.shape}"
        )
    return float(b @ row)


def classification_leaf_value(b: np.ndarray, reward: RewardSpec) -> float:
    """Expected reward of stopping now and predicting the top-ranked label.

    Predicting ``argmax b`` earns ``correct_reward`` with probability equal to
    that label's belief mass, so the expectation is ``correct_reward * max(b)``.
    """
    return reward.correct_reward * float(b.max())
