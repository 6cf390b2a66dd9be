"""Synthetic multi-view recognition worlds.

A world is a grid of (label, view) observations. Actions rotate the view by a
signed offset (modular arithmetic); the hidden label never changes. Confusable
worlds make groups of labels emit near-identical classifier responses inside a
designated arc of views, so that only rotating out of the arc disambiguates
them. The classifier is a stand-in table: every observation carries a response
row over labels, produced either by free per-observation logits or by a shared
linear map over fixed per-observation features (which lets retraining
generalize to held-out views).
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .beliefs import LikelihoodModel, ZeroEvidence, normalize_likelihoods, tile_actions
from .errors import InvalidDesign, ParseError, VersionMismatch
from .util import fmt_floats, softmax

DATASET_MAGIC = "aorlab-dataset"
DATASET_VERSION = "v1"
ROW_FLOOR = 1e-6

MODE_SHARED = "shared"
MODE_PER_IMAGE = "per_image"


@dataclass(frozen=True)
class ViewWorld:
    """Observation grid plus rotation kinematics."""

    num_labels: int
    views_per_object: int
    actions: tuple[int, ...]
    noise_level: float = 0.0

    @property
    def num_actions(self) -> int:
        return len(self.actions)

    @property
    def num_observations(self) -> int:
        return self.num_labels * self.views_per_object

    def obs_id(self, label: int, view: int) -> int:
        return label * self.views_per_object + view

    def obs_label(self, obs: int) -> int:
        return obs // self.views_per_object

    def obs_view(self, obs: int) -> int:
        return obs % self.views_per_object

    def apply_action(self, view: int, action: int) -> int:
        return (view + self.actions[action]) % self.views_per_object


@dataclass(frozen=True)
class EpisodeState:
    """Hidden episode state: the true label is fixed for the whole episode."""

    true_label: int
    current_view: int
    step: int = 0


@dataclass(frozen=True)
class ConfusionDesign:
    """Recipe for a confusable world.

    ``confusion_groups`` partition the labels; each group has one ambiguous
    view interval ``[start, end)`` in which member responses are within
    ``noise_level`` of each other in L1. Outside the interval every label's
    response concentrates at least ``self_mass`` on itself.
    """

    num_labels: int
    views_per_object: int
    actions: tuple[int, ...] = (-3, -1, 1, 3)
    confusion_groups: tuple[tuple[int, ...], ...] = ()
    ambiguous_view_ranges: tuple[tuple[int, int], ...] = ()
    noise_level: float = 0.0
    self_mass: float = 0.92
    group_leak: float = 0.1
    mode: str = MODE_SHARED

    def validate(self) -> None:
        if self.num_labels < 1 or self.views_per_object < 1:
            raise InvalidDesign("num_labels and views_per_object must be positive")
        if not self.actions:
            raise InvalidDesign("at least one action offset is required")
        if not (0.0 <= self.noise_level < 1.0):
            raise InvalidDesign(f"noise_level must lie in [0,1), got {self.noise_level}")
        if self.self_mass < 0.9:
            raise InvalidDesign(
                f"self_mass must be >= 0.9 so unambiguous views concentrate, got {self.self_mass}"
            )
        if not (0.0 <= self.group_leak < 0.5):
            raise InvalidDesign("group_leak must lie in [0, 0.5)")
        if self.mode not in (MODE_SHARED, MODE_PER_IMAGE):
            raise InvalidDesign(f"unknown parameterization mode {self.mode!r}")
        seen: set[int] = set()
        for group in self.confusion_groups:
            for label in group:
                if label < 0 or label >= self.num_labels:
                    raise InvalidDesign(f"label {label} outside [0,{self.num_labels})")
                if label in seen:
                    raise InvalidDesign(f"label {label} appears in two confusion groups")
                seen.add(label)
        if seen and seen != set(range(self.num_labels)):
            raise InvalidDesign("confusion_groups must partition all labels")
        if len(self.ambiguous_view_ranges) != len(self.confusion_groups):
            raise InvalidDesign("one ambiguous view range is required per confusion group")
        for (start, end), group in zip(self.ambiguous_view_ranges, self.confusion_groups):
            if not (0 <= start <= end <= self.views_per_object):
                raise InvalidDesign(
                    f"ambiguous range [{start},{end}) outside [0,{self.views_per_object}]"
                )
            if len(group) > 1 and (end - start) >= self.views_per_object:
                raise InvalidDesign(
                    "ambiguous range covers every view; labels would never concentrate"
                )


@dataclass(frozen=True)
class LikelihoodParams:
    """Trainable parameterization behind a likelihood model.

    ``per_image`` mode keeps one free logit row per observation; retraining an
    observation cannot affect any other. ``shared`` mode computes logits as a
    linear map of fixed per-observation features, so retraining on one subset
    of views moves the responses of similar held-out views too.
    """

    mode: str
    logits: np.ndarray | None = None  # (O, S), per_image mode
    features: np.ndarray | None = None  # (O, D), shared mode
    weight: np.ndarray | None = None  # (S, D), shared mode
    bias: np.ndarray | None = None  # (S,), shared mode

    def __post_init__(self):
        if self.mode == MODE_PER_IMAGE:
            if self.logits is None or self.logits.ndim != 2:
                raise InvalidDesign("per_image params require a 2-D logits array")
        elif self.mode == MODE_SHARED:
            if self.features is None or self.weight is None or self.bias is None:
                raise InvalidDesign("shared params require features, weight and bias")
        else:
            raise InvalidDesign(f"unknown parameterization mode {self.mode!r}")

    @property
    def num_observations(self) -> int:
        src = self.logits if self.mode == MODE_PER_IMAGE else self.features
        return src.shape[0]

    @property
    def num_labels(self) -> int:
        return self.logits.shape[1] if self.mode == MODE_PER_IMAGE else self.weight.shape[0]

    def logit_rows(self) -> np.ndarray:
        if self.mode == MODE_PER_IMAGE:
            return np.array(self.logits, dtype=np.float64)
        return self.features @ self.weight.T + self.bias

    def raw_scores(self) -> np.ndarray:
        """Classifier response rows: softmax of each observation's logits."""
        return softmax(self.logit_rows(), axis=1)

    def build_model(self, num_actions: int) -> LikelihoodModel:
        return tile_actions(normalize_likelihoods(self.raw_scores()), num_actions)

    def trainable(self) -> np.ndarray:
        if self.mode == MODE_PER_IMAGE:
            return self.logits.ravel().copy()
        return np.concatenate([self.weight.ravel(), self.bias.ravel()])

    def with_trainable(self, flat: np.ndarray) -> "LikelihoodParams":
        flat = np.asarray(flat, dtype=np.float64)
        if self.mode == MODE_PER_IMAGE:
            return replace(self, logits=flat.reshape(self.logits.shape))
        w_size = self.weight.size
        return replace(
            self,
            weight=flat[:w_size].reshape(self.weight.shape),
            bias=flat[w_size:].copy(),
        )


@dataclass(frozen=True)
class Dataset:
    """Generated world bundle: kinematics, likelihood model, and its params."""

    world: ViewWorld
    model: LikelihoodModel
    params: LikelihoodParams


def _design_rows(design: ConfusionDesign, rng: np.random.Generator) -> np.ndarray:
    """Classifier response row (over labels) for every (label, view) observation."""
    num_labels, views = design.num_labels, design.views_per_object
    group_of = {label: g for g, members in enumerate(design.confusion_groups) for label in members}
    rows = np.zeros((num_labels * views, num_labels))
    for label in range(num_labels):
        g = group_of.get(label)
        members = design.confusion_groups[g] if g is not None else (label,)
        start, end = design.ambiguous_view_ranges[g] if g is not None else (0, 0)
        for view in range(views):
            row = np.full(num_labels, (1.0 - design.self_mass) / max(num_labels - 1, 1))
            if num_labels == 1:
                row = np.zeros(1)
            if start <= view < end and len(members) > 1:
                outside = [s for s in range(num_labels) if s not in members]
                row = np.zeros(num_labels)
                inside_mass = 1.0 - (design.group_leak if outside else 0.0)
                row[list(members)] = inside_mass / len(members)
                if outside:
                    row[outside] = design.group_leak / len(outside)
                # Small per-view tilt toward the true label, bounded so any two
                # members' rows stay within noise_level of each other in L1.
                if design.noise_level > 0.0:
                    tilt = 0.25 * design.noise_level * rng.uniform(0.5, 1.0)
                    unit = np.zeros(num_labels)
                    unit[label] = 1.0
                    group_uniform = np.zeros(num_labels)
                    group_uniform[list(members)] = 1.0 / len(members)
                    row = row + tilt * (unit - group_uniform)
            else:
                row[label] = design.self_mass
            row = np.clip(row, ROW_FLOOR, None)
            rows[label * views + view] = row / row.sum()
    return rows


def generate_dataset(design: ConfusionDesign, seed: int) -> Dataset:
    """Deterministically generate a world bundle from a design."""
    design.validate()
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x6F77]))
    rows = _design_rows(design, rng)
    logits = np.log(rows)
    if design.mode == MODE_PER_IMAGE:
        params = LikelihoodParams(mode=MODE_PER_IMAGE, logits=logits)
    else:
        params = LikelihoodParams(
            mode=MODE_SHARED,
            features=logits,
            weight=np.eye(design.num_labels),
            bias=np.zeros(design.num_labels),
        )
    world = ViewWorld(
        num_labels=design.num_labels,
        views_per_object=design.views_per_object,
        actions=tuple(design.actions),
        noise_level=design.noise_level,
    )
    model = params.build_model(world.num_actions)
    _check_generated(design, rows)
    return Dataset(world=world, model=model, params=params)


def generate_world(design: ConfusionDesign, seed: int) -> tuple[ViewWorld, LikelihoodModel]:
    ds = generate_dataset(design, seed)
    return ds.world, ds.model


def _check_generated(design: ConfusionDesign, rows: np.ndarray) -> None:
    views = design.views_per_object
    for g, members in enumerate(design.confusion_groups):
        start, end = design.ambiguous_view_ranges[g]
        if len(members) < 2:
            continue
        for view in range(start, end):
            base = rows[members[0] * views + view]
            for other in members[1:]:
                diff = float(np.abs(rows[other * views + view] - base).sum())
                if diff > design.noise_level + 1e-9:
                    raise InvalidDesign(
                        f"ambiguous rows for labels {members[0]} and {other} at view {view} "
                        f"differ by {diff} > noise_level {design.noise_level}"
                    )
    for label in range(design.num_labels):
        best = max(rows[label * views + v][label] for v in range(views))
        if best < 0.9 - 1e-9:
            raise InvalidDesign(f"label {label} has no view with self-concentration >= 0.9")


def simulate_action(
    state: EpisodeState,
    action: int,
    world: ViewWorld,
    rng: np.random.Generator,
) -> tuple[EpisodeState, int]:
    """Rotate and emit the observation at the new pose.

    The commanded view advances exactly; the emitted observation may be
    jittered to an adjacent view with probability ``world.noise_level``,
    modelling classifier confusion between neighbouring poses.
    """
    new_view = world.apply_action(state.current_view, action)
    emitted = new_view
    if world.noise_level > 0.0 and rng.random() < world.noise_level:
        side = 1 if rng.random() < 0.5 else -1
        emitted = (new_view + side) % world.views_per_object
    obs = world.obs_id(state.true_label, emitted)
    return EpisodeState(state.true_label, new_view, state.step + 1), obs


def initial_belief(obs: int, model: LikelihoodModel) -> np.ndarray:
    """Posterior over labels from a uniform prior and the first observation.

    Uses the canonical first action's likelihood column; with an
    action-independent table the choice of column does not matter.
    """
    col = model.column(0, obs)
    total = float(col.sum())
    if total <= 1e-30:
        raise ZeroEvidence(f"observation {obs} has zero likelihood under every label")
    b = col / total
    b = b / b.sum()
    b.flags.writeable = False
    return b


@dataclass(frozen=True)
class Split:
    train_obs: tuple[int, ...]
    test_obs: tuple[int, ...]


def novel_views_split(world: ViewWorld, test_view_start: int, num_test_views: int) -> Split:
    """Hold out a contiguous arc of views (same arc for every object)."""
    views = world.views_per_object
    if not (0 < num_test_views < views):
        raise InvalidDesign(f"num_test_views must lie in (0,{views})")
    test_views = {(test_view_start + k) % views for k in range(num_test_views)}
    train, test = [], []
    for label in range(world.num_labels):
        for view in range(views):
            (test if view in test_views else train).append(world.obs_id(label, view))
    return Split(tuple(train), tuple(test))


def novel_objects_split(world: ViewWorld, train_fraction: float = 0.6) -> Split:
    """Hold out whole labels; the first ceil(L * fraction) label ids train."""
    if not (0.0 < train_fraction < 1.0):
        raise InvalidDesign("train_fraction must lie in (0,1)")
    num_train = max(1, min(world.num_labels - 1, round(world.num_labels * train_fraction)))
    train, test = [], []
    for label in range(world.num_labels):
        bucket = train if label < num_train else test
        for view in range(world.views_per_object):
            bucket.append(world.obs_id(label, view))
    return Split(tuple(train), tuple(test))


def _parse_floats(parts, count, lineno):
    if len(parts) != count:
        raise ParseError(f"expected {count} numbers, found {len(parts)}", line=lineno)
    try:
        return np.array([float(p) for p in parts], dtype=np.float64)
    except ValueError as exc:
        raise ParseError(str(exc), line=lineno) from None


def save_dataset(dataset: Dataset, path) -> None:
    """Write the self-describing line-oriented dataset file (see README)."""
    world, params = dataset.world, dataset.params
    lines = [f"{DATASET_MAGIC} {DATASET_VERSION}"]
    lines.append(f"labels {world.num_labels}")
    lines.append(f"views {world.views_per_object}")
    lines.append("actions " + " ".join(str(a) for a in world.actions))
    lines.append(f"noise {fmt_floats([world.noise_level])}")
    lines.append(f"mode {params.mode}")
    if params.mode == MODE_SHARED:
        lines.append(f"feature_dim {params.features.shape[1]}")
        for s in range(params.weight.shape[0]):
            lines.append(f"weight {s} {fmt_floats(params.weight[s])}")
        lines.append(f"bias {fmt_floats(params.bias)}")
    for label in range(world.num_labels):
        for view in range(world.views_per_object):
            row = (
                params.logits[world.obs_id(label, view)]
                if params.mode == MODE_PER_IMAGE
                else params.features[world.obs_id(label, view)]
            )
            lines.append(f"obs {label} {view} {fmt_floats(row)}")
    lines.append("end")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_dataset(path) -> Dataset:
    """Parse a dataset file back into an identical world bundle."""
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("empty file", line=1)
    head = lines[0].split()
    if len(head) != 2 or head[0] != DATASET_MAGIC:
        raise ParseError(f"not a {DATASET_MAGIC} file", line=1)
    if head[1] != DATASET_VERSION:
        raise VersionMismatch(f"unsupported dataset version {head[1]!r}")

    header: dict[str, list[str]] = {}
    idx = 1
    known = {"labels", "views", "actions", "noise", "mode", "feature_dim"}
    while idx < len(lines):
        parts = lines[idx].split()
        if not parts or parts[0] not in known:
            break
        header[parts[0]] = parts[1:]
        idx += 1
    for key in ("labels", "views", "actions", "noise", "mode"):
        if key not in header:
            raise ParseError(f"missing header field {key!r}", line=idx)
    try:
        num_labels = int(header["labels"][0])
        views = int(header["views"][0])
        actions = tuple(int(a) for a in header["actions"])
        noise = float(header["noise"][0])
    except (ValueError, IndexError) as exc:
        raise ParseError(f"bad header value: {exc}", line=idx) from None
    mode = header["mode"][0]

    weight = bias = None
    if mode == MODE_SHARED:
        if "feature_dim" not in header:
            raise ParseError("shared mode requires feature_dim", line=idx)
        dim = int(header["feature_dim"][0])
        weight = np.zeros((num_labels, dim))
        seen_w = set()
        while idx < len(lines) and lines[idx].startswith("weight "):
            parts = lines[idx].split()
            s = int(parts[1])
            if s < 0 or s >= num_labels or s in seen_w:
                raise ParseError(f"bad weight row index {s}", line=idx + 1)
            weight[s] = _parse_floats(parts[2:], dim, idx + 1)
            seen_w.add(s)
            idx += 1
        if len(seen_w) != num_labels:
            raise ParseError(f"expected {num_labels} weight rows, found {len(seen_w)}", line=idx)
        if idx >= len(lines) or not lines[idx].startswith("bias "):
            raise ParseError("missing bias line", line=idx + 1)
        bias = _parse_floats(lines[idx].split()[1:], num_labels, idx + 1)
        idx += 1
    else:
        dim = num_labels

    rows = np.zeros((num_labels * views, dim))
    seen = np.zeros(num_labels * views, dtype=bool)
    while idx < len(lines) and lines[idx].startswith("obs "):
        parts = lines[idx].split()
        try:
            label, view = int(parts[1]), int(parts[2])
        except (ValueError, IndexError):
            raise ParseError("malformed obs line", line=idx + 1) from None
        if not (0 <= label < num_labels and 0 <= view < views):
            raise ParseError(f"obs ({label},{view}) outside grid", line=idx + 1)
        obs = label * views + view
        if seen[obs]:
            raise ParseError(f"duplicate obs ({label},{view})", line=idx + 1)
        rows[obs] = _parse_floats(parts[3:], dim, idx + 1)
        seen[obs] = True
        idx += 1
    if idx >= len(lines) or lines[idx] != "end":
        raise ParseError("missing end marker (truncated file?)", line=len(lines))
    if not seen.all():
        missing = int(np.argmin(seen))
        raise ParseError(f"missing obs row for observation {missing}", line=idx)

    if mode == MODE_PER_IMAGE:
        params = LikelihoodParams(mode=MODE_PER_IMAGE, logits=rows)
    elif mode == MODE_SHARED:
        params = LikelihoodParams(mode=MODE_SHARED, features=rows, weight=weight, bias=bias)
    else:
        raise ParseError(f"unknown mode {mode!r}", line=1)
    world = ViewWorld(
        num_labels=num_labels,
        views_per_object=views,
        actions=actions,
        noise_level=noise,
    )
    return Dataset(world=world, model=params.build_model(world.num_actions), params=params)


def datasets_equal(a: Dataset, b: Dataset) -> bool:
    if a.world != b.world or a.params.mode != b.params.mode:
        return False
    if a.params.mode == MODE_PER_IMAGE:
        return bool(np.array_equal(a.params.logits, b.params.logits))
    return bool(
        np.array_equal(a.params.features, b.params.features)
        and np.array_equal(a.params.weight, b.params.weight)
        and np.array_equal(a.params.bias, b.params.bias)
    )
