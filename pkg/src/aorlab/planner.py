"""Belief tree search with per-level delta-packing.

The planner expands every action from a belief node, enumerates the
observations the world can emit, and forms successor beliefs. A successor
whose belief lands within ``delta`` (L1) of an already-expanded representative
at the next level reuses that representative's value instead of recursing;
otherwise it becomes a new representative. Values backtrack from
classification leaves at the height cutoff.

Two successor models are supported. ``TableDynamics`` enumerates the full
observation set weighted by evidence probability (exact belief-MDP semantics,
used by brute-force validation instances). ``ViewDynamics`` enumerates only
observations the rotation simulator can emit from the node's pose (every label
at the commanded view, plus jitter neighbours), with evidence weights
renormalized within that candidate set.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .beliefs import LikelihoodModel, RewardSpec, classification_leaf_value
from .errors import InvalidParams, ParseError, VersionMismatch
from .util import fmt_floats
from .worlds import ViewWorld, initial_belief

LABELS_MAGIC = "aorlab-labels"
LABELS_VERSION = "v1"
SUCCESSOR_EVIDENCE_FLOOR = 1e-12

ROOT_AGGREGATES = ("mean", "min")


@dataclass(frozen=True)
class PlannerParams:
    """Packing radius and tree height, optionally derived from an error bound."""

    gamma: float
    r_max: float
    delta: float
    height: int
    epsilon: float | None = None
    root_aggregate: str = "mean"

    def __post_init__(self):
        if not (0.0 < self.gamma < 1.0):
            raise InvalidParams(f"gamma must lie in (0,1), got {self.gamma}")
        if self.r_max <= 0.0:
            raise InvalidParams(f"r_max must be positive, got {self.r_max}")
        if self.delta <= 0.0:
            raise InvalidParams(f"delta must be positive, got {self.delta}")
        if self.height < 0:
            raise InvalidParams(f"height must be non-negative, got {self.height}")
        if self.root_aggregate not in ROOT_AGGREGATES:
            raise InvalidParams(f"root_aggregate must be one of {ROOT_AGGREGATES}")

    @property
    def value_bound(self) -> float:
        return self.r_max / (1.0 - self.gamma)


def params_from_epsilon(
    epsilon: float,
    gamma: float,
    r_max: float,
    height: int | None = None,
    root_aggregate: str = "mean",
) -> PlannerParams:
    """Derive the packing radius and height that bound the value error.

    ``delta = epsilon * (1 - gamma)^2 / (2 * r_max)`` and
    ``height = ceil(log_gamma((1 - gamma) * epsilon / (2 * r_max)))``; the
    radius splits the budget between packing error (accumulated as
    ``delta * r_max / (1 - gamma)^2``) and discount truncation. An explicit
    ``height`` overrides the derived one, e.g. to share a horizon with an
    exact reference solver.
    """
    if epsilon <= 0.0:
        raise InvalidParams(f"epsilon must be positive, got {epsilon}")
    if not (0.0 < gamma < 1.0):
        raise InvalidParams(f"gamma must lie in (0,1), got {gamma}")
    if r_max <= 0.0:
        raise InvalidParams(f"r_max must be positive, got {r_max}")
    delta = epsilon * (1.0 - gamma) ** 2 / (2.0 * r_max)
    if height is None:
        target = (1.0 - gamma) * epsilon / (2.0 * r_max)
        height = max(0, math.ceil(math.log(target) / math.log(gamma) - 1e-12))
    return PlannerParams(
        gamma=gamma,
        r_max=r_max,
        delta=delta,
        height=int(height),
        epsilon=epsilon,
        root_aggregate=root_aggregate,
    )


class TableDynamics:
    """All observations with positive evidence can follow any action."""

    def __init__(self, model: LikelihoodModel):
        self.model = model

    def root_context(self, obs: int):
        return None

    def successors(self, belief: np.ndarray, action: int, context):
        cols = self.model.table[:, action, :]  # (S, O)
        evidence = belief @ cols
        keep = evidence > SUCCESSOR_EVIDENCE_FLOOR
        obs_ids = np.nonzero(keep)[0]
        ev = evidence[keep]
        posts = (cols[:, keep] * belief[:, None]) / ev
        posts = (posts / posts.sum(axis=0, keepdims=True)).T
        return obs_ids, ev, posts, [None] * len(obs_ids)


class ViewDynamics:
    """Only observations at the commanded view (and jitter neighbours) occur."""

    def __init__(self, world: ViewWorld, model: LikelihoodModel):
        self.world = world
        self.model = model

    def root_context(self, obs: int):
        return self.world.obs_view(obs)

    def successors(self, belief: np.ndarray, action: int, view: int):
        world = self.world
        new_view = world.apply_action(view, action)
        if world.noise_level > 0.0:
            half = 0.5 * world.noise_level
            emissions = [
                (new_view, 1.0 - world.noise_level),
                ((new_view + 1) % world.views_per_object, half),
                ((new_view - 1) % world.views_per_object, half),
            ]
        else:
            emissions = [(new_view, 1.0)]
        labels = np.arange(world.num_labels)
        obs_ids = np.concatenate(
            [labels * world.views_per_object + v for v, _ in emissions]
        )
        jitter = np.concatenate(
            [np.full(world.num_labels, w) for _, w in emissions]
        )
        cols = self.model.table[:, action, obs_ids]  # (S, k)
        weights = jitter * (belief @ cols)
        keep = weights > SUCCESSOR_EVIDENCE_FLOOR
        obs_ids, weights, cols = obs_ids[keep], weights[keep], cols[:, keep]
        total = weights.sum()
        if total <= 0.0:
            return obs_ids[:0], weights[:0], np.zeros((0, belief.shape[0])), []
        weights = weights / total
        posts = cols * belief[:, None]
        posts = (posts / posts.sum(axis=0, keepdims=True)).T
        return obs_ids, weights, posts, [new_view] * len(obs_ids)


class _PackingLevel:
    __slots__ = ("array", "values", "count")

    def __init__(self, dim: int):
        self.array = np.empty((16, dim))
        self.values: list[float] = []
        self.count = 0

    def find(self, belief: np.ndarray, delta: float) -> int | None:
        if self.count == 0:
            return None
        dists = np.abs(self.array[: self.count] - belief).sum(axis=1)
        hits = np.nonzero(dists <= delta)[0]
        return int(hits[0]) if hits.size else None  # first inserted wins

    def insert(self, belief: np.ndarray) -> int:
        if self.count == len(self.array):
            grown = np.empty((2 * self.count, self.array.shape[1]))
            grown[: self.count] = self.array[: self.count]
            self.array = grown
        self.array[self.count] = belief
        self.values.append(math.nan)
        self.count += 1
        return self.count - 1


class DeltaPacking:
    """Per-level sets of representative beliefs, pairwise >= delta apart."""

    def __init__(self, num_levels: int, dim: int, delta: float):
        self.delta = delta
        self.levels = [_PackingLevel(dim) for _ in range(num_levels + 1)]

    def find(self, level: int, belief: np.ndarray) -> int | None:
        return self.levels[level].find(belief, self.delta)

    def insert(self, level: int, belief: np.ndarray) -> int:
        return self.levels[level].insert(belief)

    def set_value(self, level: int, index: int, value: float) -> None:
        self.levels[level].values[index] = value

    def value(self, level: int, index: int) -> float:
        return self.levels[level].values[index]

    def representatives(self, level: int) -> tuple[np.ndarray, np.ndarray]:
        lvl = self.levels[level]
        return lvl.array[: lvl.count].copy(), np.array(lvl.values, dtype=np.float64)

    def level_counts(self) -> list[int]:
        return [lvl.count for lvl in self.levels]


@dataclass
class BeliefTreeNode:
    """Expanded tree node. Children map (action, observation) to either a
    child node or a (level, representative index) packing reference."""

    belief: np.ndarray
    level: int
    context: object = None
    value: float = math.nan
    action_values: np.ndarray | None = None
    children: dict = field(default_factory=dict)


class BeliefTreePlanner:
    """One search tree: a shared packing plus expansion state.

    Expanding several root beliefs on the same instance reuses the packing, so
    near-duplicate roots (the root neighbourhood) cost little beyond the first.
    """

    def __init__(
        self,
        model: LikelihoodModel,
        reward: RewardSpec,
        params: PlannerParams,
        dynamics=None,
        keep_tree: bool = False,
    ):
        self.model = model
        self.reward = reward
        self.params = params
        self.dynamics = dynamics if dynamics is not None else TableDynamics(model)
        self.keep_tree = keep_tree
        self.packing = DeltaPacking(params.height, model.num_labels, params.delta)
        self.num_expanded = 0

    def expand_root(self, belief: np.ndarray, context=None) -> BeliefTreeNode:
        node = BeliefTreeNode(belief=np.array(belief), level=0, context=context)
        self._expand(node)
        return node

    def _expand(self, node: BeliefTreeNode) -> float:
        params, reward = self.params, self.reward
        self.num_expanded += 1
        if node.level >= params.height:
            node.value = classification_leaf_value(node.belief, reward)
            return node.value
        num_actions = self.model.num_actions
        q = np.empty(num_actions)
        next_level = node.level + 1
        for action in range(num_actions):
            obs_ids, weights, posts, contexts = self.dynamics.successors(
                node.belief, action, node.context
            )
            if len(obs_ids) == 0:
                q[action] = reward.step_cost
                continue
            expected_top = float(weights @ posts.max(axis=1))
            continuation = 0.0
            for j, obs in enumerate(obs_ids):
                child_belief = posts[j]
                hit = self.packing.find(next_level, child_belief)
                if hit is not None:
                    value = self.packing.value(next_level, hit)
                    if self.keep_tree:
                        node.children[(action, int(obs))] = (next_level, hit)
                else:
                    idx = self.packing.insert(next_level, child_belief)
                    child = BeliefTreeNode(
                        belief=child_belief, level=next_level, context=contexts[j]
                    )
                    value = self._expand(child)
                    self.packing.set_value(next_level, idx, value)
                    if self.keep_tree:
                        node.children[(action, int(obs))] = child
                continuation += float(weights[j]) * value
            q[action] = (
                reward.step_cost
                + reward.correct_reward * expected_top
                + reward.gamma * continuation
            )
        node.action_values = q
        node.value = float(q[int(np.argmax(q))])  # ties resolve to lowest index
        return node.value


@dataclass(frozen=True)
class LabeledValues:
    """Per-observation root beliefs and neighbourhood-aggregated action values."""

    observations: tuple[int, ...]
    beliefs: np.ndarray  # (N, S)
    action_values: np.ndarray  # (N, A)

    def __post_init__(self):
        if len(self.observations) != self.beliefs.shape[0] or len(
            self.observations
        ) != self.action_values.shape[0]:
            raise ValueError("labels row counts disagree")

    def __len__(self) -> int:
        return len(self.observations)

    def index_of(self, obs: int) -> int | None:
        try:
            return self.observations.index(obs)
        except ValueError:
            return None

    def values(self) -> np.ndarray:
        return self.action_values.max(axis=1)


def _root_members(
    b0: np.ndarray, candidate_obs, candidate_beliefs: np.ndarray, delta: float
):
    dists = np.abs(candidate_beliefs - b0).sum(axis=1)
    return [i for i in range(len(candidate_obs)) if dists[i] <= delta]


def bts_root_values(
    root_obs: int,
    train_obs,
    model: LikelihoodModel,
    reward: RewardSpec,
    params: PlannerParams,
    dynamics=None,
) -> tuple[np.ndarray, np.ndarray]:
    """Action values for one root observation, averaged over its neighbourhood.

    All training observations whose initial beliefs fall within ``delta`` of
    the root's initial belief are expanded in one shared tree; their per-action
    root values are combined with the configured aggregator. Averaging beliefs
    that are close but earn different returns keeps the root value from
    overcommitting to a single example.
    """
    dynamics = dynamics if dynamics is not None else TableDynamics(model)
    train_obs = list(train_obs)
    b0 = initial_belief(root_obs, model)
    beliefs = np.stack([initial_belief(o, model) for o in train_obs]) if train_obs else None
    planner = BeliefTreePlanner(model, reward, params, dynamics=dynamics)
    member_values = []
    if train_obs:
        for i in _root_members(b0, train_obs, beliefs, params.delta):
            node = planner.expand_root(beliefs[i], dynamics.root_context(train_obs[i]))
            member_values.append(node.action_values)
    if not member_values:
        node = planner.expand_root(b0, dynamics.root_context(root_obs))
        member_values.append(node.action_values)
    stacked = np.stack(member_values)
    if params.root_aggregate == "min":
        return b0, stacked.min(axis=0)
    return b0, stacked.mean(axis=0)


def label_training_set(
    train_obs,
    model: LikelihoodModel,
    reward: RewardSpec,
    params: PlannerParams,
    dynamics=None,
) -> LabeledValues:
    """Root beliefs and action values for every training observation.

    Each root builds its own tree (no packing is shared between roots), so
    labels are independent of the training-set ordering beyond the fixed
    ascending enumeration used everywhere.
    """
    dynamics = dynamics if dynamics is not None else TableDynamics(model)
    train_obs = sorted(int(o) for o in train_obs)
    beliefs, values = [], []
    for obs in train_obs:
        b0, q = bts_root_values(obs, train_obs, model, reward, params, dynamics=dynamics)
        beliefs.append(b0)
        values.append(q)
    if not train_obs:
        return LabeledValues(
            observations=(),
            beliefs=np.zeros((0, model.num_labels)),
            action_values=np.zeros((0, model.num_actions)),
        )
    return LabeledValues(
        observations=tuple(train_obs),
        beliefs=np.stack(beliefs),
        action_values=np.stack(values),
    )


def save_labels(labels: LabeledValues, path) -> None:
    num_s = labels.beliefs.shape[1]
    num_a = labels.action_values.shape[1]
    lines = [f"{LABELS_MAGIC} {LABELS_VERSION}"]
    lines.append(f"labels {num_s} actions {num_a} count {len(labels)}")
    for i, obs in enumerate(labels.observations):
        lines.append(
            f"rec {obs} {fmt_floats(labels.beliefs[i])} {fmt_floats(labels.action_values[i])}"
        )
    lines.append("end")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_labels(path) -> LabeledValues:
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("empty file", line=1)
    head = lines[0].split()
    if len(head) != 2 or head[0] != LABELS_MAGIC:
        raise ParseError(f"not a {LABELS_MAGIC} file", line=1)
    if head[1] != LABELS_VERSION:
        raise VersionMismatch(f"unsupported labels version {head[1]!r}")
    if len(lines) < 2:
        raise ParseError("missing size line", line=2)
    size = lines[1].split()
    try:
        num_s, num_a, count = int(size[1]), int(size[3]), int(size[5])
    except (IndexError, ValueError):
        raise ParseError("malformed size line", line=2) from None
    observations, beliefs, values = [], [], []
    idx = 2
    while idx < len(lines) and lines[idx].startswith("rec "):
        parts = lines[idx].split()
        if len(parts) != 2 + num_s + num_a:
            raise ParseError(
                f"expected {2 + num_s + num_a} fields, found {len(parts)}", line=idx + 1
            )
        observations.append(int(parts[1]))
        row = np.array([float(p) for p in parts[2:]], dtype=np.float64)
        beliefs.append(row[:num_s])
        values.append(row[num_s:])
        idx += 1
    if idx >= len(lines) or lines[idx] != "end":
        raise ParseError("missing end marker (truncated file?)", line=len(lines))
    if len(observations) != count:
        raise ParseError(f"expected {count} records, found {len(observations)}", line=idx)
    return LabeledValues(
        observations=tuple(observations),
        beliefs=np.stack(beliefs) if beliefs else np.zeros((0, num_s)),
        action_values=np.stack(values) if values else np.zeros((0, num_a)),
    )
