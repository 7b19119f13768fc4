"""Genealogy ingestion and reduction to coalescent sufficient statistics.

Time runs backward: the most recent tip sits at height 0 and the root at the
time to the most recent common ancestor.  A genealogy is reduced to its
coalescent event times plus the sampling schedule; those in turn define the
half-open inter-event intervals, each carrying the number of active lineages
and the binomial coalescent factor, on which every likelihood and sampler in
this package operates.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass

import numpy as np

from .errors import NewickError, ValidationError

_NUMBER_RE = re.compile(r"[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?")
_LABEL_STOP = set("(),:;[]")


def coalescent_factor(k: int) -> int:
    """Number of lineage pairs among k active lineages, binom(k, 2)."""
    if k < 1:
        raise ValueError(f"lineage count must be >= 1, got {k}")
    return k * (k - 1) // 2


class TreeNode:
    __slots__ = ("label", "branch_length", "children", "height")

    def __init__(self, label=None, branch_length=None, children=None):
        self.label = label
        self.branch_length = branch_length
        self.children = children if children is not None else []
        self.height = math.nan

    @property
    def is_tip(self) -> bool:
        return not self.children


class Genealogy:
    """A rooted, strictly binary, dated tree.

    Heights are backward times: 0 at the most recent tip, increasing toward
    the root.  Construction validates the binary shape and that every parent
    is strictly older than its children.
    """

    def __init__(self, root: TreeNode):
        self.root = root
        self.nodes: list[TreeNode] = []
        stack = [root]
        while stack:
            node = stack.pop()
            self.nodes.append(node)
            for child in node.children:
                if child.branch_length is None:
                    raise ValidationError("every non-root node needs a branch length")
                stack.append(child)
        for node in self.nodes:
            if node.children and len(node.children) != 2:
                raise ValidationError(
                    f"tree is not strictly binary: a node has {len(node.children)} children"
                )
        self.tips = [n for n in self.nodes if n.is_tip]
        self.internals = [n for n in self.nodes if not n.is_tip]
        if len(self.tips) < 2:
            raise ValidationError("a genealogy needs at least two tips")
        self._assign_heights()

    def _assign_heights(self):
        depth = {id(self.root): 0.0}
        order = [self.root]
        for node in order:
            for child in node.children:
                depth[id(child)] = depth[id(node)] + child.branch_length
                order.append(child)
        max_tip_depth = max(depth[id(t)] for t in self.tips)
        for node in order:
            node.height = max_tip_depth - depth[id(node)]
        for node in self.internals:
            for child in node.children:
                if not node.height > child.height:
                    raise ValidationError(
                        "internal node height does not exceed its child "
                        f"({node.height} vs {child.height}); zero or negative "
                        "branch lengths are not supported"
                    )

    @property
    def n_tips(self) -> int:
        return len(self.tips)

    def tip_heights(self) -> np.ndarray:
        return np.array([t.height for t in self.tips], dtype=float)

    def internal_heights(self) -> np.ndarray:
        return np.sort([n.height for n in self.internals])

    def to_newick(self) -> str:
        def fmt(node: TreeNode) -> str:
            if node.is_tip:
                core = node.label or ""
            else:
                core = "(" + ",".join(fmt(c) for c in node.children) + ")"
                if node.label:
                    core += node.label
            if node.branch_length is not None:
                core += f":{node.branch_length:.17g}"
            return core

        return fmt(self.root) + ";"


def _skip_ws(text: str, i: int) -> int:
    while i < len(text) and text[i].isspace():
        i += 1
    return i


def _parse_label(text: str, i: int) -> tuple[str, int]:
    i = _skip_ws(text, i)
    if i < len(text) and text[i] == "'":
        j = text.find("'", i + 1)
        if j < 0:
            raise NewickError("unterminated quoted label", i)
        return text[i + 1 : j], j + 1
    j = i
    while j < len(text) and not text[j].isspace() and text[j] not in _LABEL_STOP:
        j += 1
    return text[i:j], j


def _parse_number(text: str, i: int) -> tuple[float, int]:
    i = _skip_ws(text, i)
    m = _NUMBER_RE.match(text, i)
    if not m:
        raise NewickError("expected a branch length", i)
    return float(m.group(0)), m.end()


def _parse_subtree(text: str, i: int) -> tuple[TreeNode, int]:
    i = _skip_ws(text, i)
    if i >= len(text):
        raise NewickError("unexpected end of input", i)
    if text[i] == "(":
        i += 1
        children = []
        while True:
            child, i = _parse_subtree(text, i)
            i = _skip_ws(text, i)
            if i >= len(text) or text[i] != ":":
                raise NewickError("missing branch length", i)
            child.branch_length, i = _parse_number(text, i + 1)
            children.append(child)
            i = _skip_ws(text, i)
            if i >= len(text):
                raise NewickError("unbalanced parentheses: expected ',' or ')'", i)
            if text[i] == ",":
                i += 1
                continue
            if text[i] == ")":
                i += 1
                break
            raise NewickError(f"expected ',' or ')', found {text[i]!r}", i)
        label, i = _parse_label(text, i)
        return TreeNode(label=label or None, children=children), i
    label, i = _parse_label(text, i)
    if not label:
        raise NewickError(f"expected a tip label or '(', found {text[i]!r}", i)
    return TreeNode(label=label), i


def parse_newick(
    text: str,
    tip_dates: dict[str, float] | None = None,
    date_delimiter: str | None = None,
    date_atol: float = 1e-6,
) -> Genealogy:
    """Parse a single Newick tree into a height-normalized Genealogy.

    Node heights come from branch lengths, shifted so the most recent tip is
    at 0.  Tip dates, when supplied (sidecar map, or embedded as
    ``label<delimiter>date``), are converted to backward times against the
    latest date and checked against the branch-length geometry to
    ``date_atol``; disagreement raises ``ValidationError``.
    """
    root, i = _parse_subtree(text, 0)
    i = _skip_ws(text, i)
    if i < len(text) and text[i] == ":":  # tolerated, ignored root edge
        _, i = _parse_number(text, i + 1)
        i = _skip_ws(text, i)
    if i >= len(text) or text[i] != ";":
        raise NewickError("missing terminating ';'", i)
    if text[i + 1 :].strip():
        raise NewickError("trailing content after ';'", i + 1)

    g = Genealogy(root)

    dates: dict[str, float] = {}
    if tip_dates:
        dates = dict(tip_dates)
    elif date_delimiter:
        for tip in g.tips:
            label = tip.label or ""
            head, delim, tail = label.rpartition(date_delimiter)
            if not delim:
                raise ValidationError(f"tip {label!r} has no {date_delimiter!r}-delimited date")
            try:
                dates[label] = float(tail)
            except ValueError as exc:
                raise ValidationError(f"tip {label!r}: cannot parse date {tail!r}") from exc
    if dates:
        missing = [t.label for t in g.tips if t.label not in dates]
        if missing:
            raise ValidationError(f"tip dates missing for {missing[:5]}")
        newest = max(dates[t.label] for t in g.tips)
        for tip in g.tips:
            implied = newest - dates[tip.label]
            if abs(implied - tip.height) > date_atol:
                raise ValidationError(
                    f"tip {tip.label!r}: date implies height {implied:.6g} but branch "
                    f"lengths give {tip.height:.6g}"
                )
    return g


def read_tip_dates(text: str) -> dict[str, float]:
    """Parse a two-column (label, date) table; tabs or whitespace separated."""
    dates: dict[str, float] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t") if "\t" in line else line.split()
        if len(parts) != 2:
            raise ValidationError(f"tip-date table line {lineno}: expected 2 columns")
        try:
            dates[parts[0]] = float(parts[1])
        except ValueError as exc:
            raise ValidationError(f"tip-date table line {lineno}: bad date {parts[1]!r}") from exc
    if not dates:
        raise ValidationError("tip-date table is empty")
    return dates


@dataclass(frozen=True)
class CoalescentData:
    """Coalescent event times plus the sampling schedule.

    ``coal_times`` holds the n-1 strictly increasing positive event times
    (the conventional t_n = 0 origin is implicit).  ``samp_times`` starts at
    0; ``samp_counts`` are the sequences added at each sampling time.
    """

    coal_times: np.ndarray
    samp_times: np.ndarray
    samp_counts: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coal_times", np.asarray(self.coal_times, dtype=float))
        object.__setattr__(self, "samp_times", np.asarray(self.samp_times, dtype=float))
        object.__setattr__(self, "samp_counts", np.asarray(self.samp_counts, dtype=int))
        ct, st, sc = self.coal_times, self.samp_times, self.samp_counts
        if ct.ndim != 1 or st.ndim != 1 or sc.shape != st.shape:
            raise ValidationError("coal_times, samp_times, samp_counts have wrong shapes")
        if len(ct) and ct[0] <= 0:
            raise ValidationError("coalescent times must be strictly positive")
        if np.any(np.diff(ct) <= 0):
            raise ValidationError("coalescent times must be strictly increasing (no ties)")
        if len(st) == 0 or st[0] != 0.0:
            raise ValidationError("sampling times must start at 0")
        if np.any(np.diff(st) <= 0):
            raise ValidationError("sampling times must be strictly increasing")
        if np.any(sc < 1):
            raise ValidationError("sample counts must be positive")
        if sc.sum() != len(ct) + 1:
            raise ValidationError(
                f"expected {sc.sum() - 1} coalescent events for {sc.sum()} samples, got {len(ct)}"
            )
        if len(ct) and len(st) > 1 and ct[-1] <= st[-1]:
            raise ValidationError("the root must predate the oldest sampling time")
        _lineage_walk(ct, st, sc)  # raises if the lineage count ever drops below 2 at an event

    @classmethod
    def isochronous(cls, coal_times) -> "CoalescentData":
        coal_times = np.asarray(coal_times, dtype=float)
        return cls(coal_times, np.array([0.0]), np.array([len(coal_times) + 1]))

    @property
    def n(self) -> int:
        return int(self.samp_counts.sum())

    @property
    def is_isochronous(self) -> bool:
        return len(self.samp_times) == 1

    @property
    def tmrca(self) -> float:
        return float(self.coal_times[-1])

    def to_json(self) -> dict:
        return {
            "coal_times": self.coal_times.tolist(),
            "samp_times": self.samp_times.tolist(),
            "samp_counts": self.samp_counts.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CoalescentData":
        ct = np.asarray(obj["coal_times"], dtype=float)
        sc = np.asarray(obj["samp_counts"], dtype=int)
        # tolerate the t_n = 0 origin being written explicitly
        if len(ct) == sc.sum() and len(ct) and ct[0] == 0.0:
            ct = ct[1:]
        return cls(ct, np.asarray(obj["samp_times"], dtype=float), sc)

    @classmethod
    def from_file(cls, path) -> "CoalescentData":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def _lineage_walk(coal_times, samp_times, samp_counts):
    """Merged event walk; returns (times, is_coal, samp_add) per event, validated."""
    events: dict[float, list] = {}
    for t in coal_times:
        ev = events.setdefault(float(t), [0, 0])
        ev[0] += 1
    for t, c in zip(samp_times, samp_counts):
        ev = events.setdefault(float(t), [0, 0])
        ev[1] += int(c)
    times = sorted(events)
    active = 0
    for t in times:
        n_coal, add = events[t]
        if n_coal > 1:
            raise ValidationError("tied coalescent times are not supported")
        if n_coal and active < 2:
            raise ValidationError(
                f"coalescent event at t={t} with fewer than 2 active lineages"
            )
        active += add - n_coal
    if active != 1:
        raise ValidationError("lineage count does not end at 1 past the root")
    return times, events


@dataclass(frozen=True)
class IntervalGrid:
    """Flat enumeration of the half-open inter-event intervals.

    Interval j is (starts[j], ends[j]], carries ``n_lineages[j]`` active
    lineages with pair count ``coal_factor[j]``, belongs to the
    ``event_index[j]``-th coalescent event (0-based, most recent first), and
    either ends with that coalescent event or with a sampling event.
    """

    starts: np.ndarray
    ends: np.ndarray
    n_lineages: np.ndarray
    coal_factor: np.ndarray
    event_index: np.ndarray
    ends_with_coal: np.ndarray

    @property
    def lengths(self) -> np.ndarray:
        return self.ends - self.starts

    @property
    def n_intervals(self) -> int:
        return len(self.starts)

    @property
    def n_events(self) -> int:
        return int(self.event_index[-1]) + 1 if len(self.event_index) else 0

    @property
    def total_hazard_weight(self) -> float:
        """Sum over intervals of coal_factor * length."""
        return float(np.dot(self.coal_factor, self.lengths))

    @property
    def coal_event_times(self) -> np.ndarray:
        return self.ends[self.ends_with_coal]

    def interval_of(self, t: float) -> int:
        """Index of the interval containing t, with (start, end] convention."""
        j = int(np.searchsorted(self.ends, t, side="left"))
        if j >= self.n_intervals or not (self.starts[j] < t <= self.ends[j]):
            raise ValidationError(f"time {t} lies outside the genealogy's span")
        return j

    def interval_of_many(self, t: np.ndarray) -> np.ndarray:
        j = np.searchsorted(self.ends, t, side="left")
        if np.any(j >= self.n_intervals) or np.any(t <= self.starts[np.minimum(j, self.n_intervals - 1)]):
            raise ValidationError("some times lie outside the genealogy's span")
        return j


def extract_coalescent_data(g: Genealogy, height_atol: float = 1e-9) -> CoalescentData:
    """Reduce a genealogy to coalescent times and the sampling schedule.

    Tip heights within ``height_atol`` of each other collapse into a single
    sampling event; tied internal heights are rejected rather than jittered.
    """
    coal = g.internal_heights()
    if np.any(np.diff(coal) <= height_atol):
        raise ValidationError(
            "tied (or nearly tied) internal node heights; resolve the tie upstream"
        )
    tips = np.sort(g.tip_heights())
    groups: list[tuple[float, int]] = []
    for h in tips:
        if groups and h - groups[-1][0] <= height_atol:
            groups[-1] = (groups[-1][0], groups[-1][1] + 1)
        else:
            groups.append((float(h), 1))
    samp_times = np.array([t for t, _ in groups])
    samp_counts = np.array([c for _, c in groups])
    samp_times[0] = 0.0  # exact by height normalization
    return CoalescentData(coal, samp_times, samp_counts)


def build_interval_grid(d: CoalescentData) -> IntervalGrid:
    """Enumerate all inter-event intervals with lineage counts and factors."""
    times, events = _lineage_walk(d.coal_times, d.samp_times, d.samp_counts)
    starts, ends, counts, factors, eidx, endcoal = [], [], [], [], [], []
    active = 0
    coal_seen = 0
    prev = None
    for t in times:
        n_coal, add = events[t]
        if prev is not None:
            starts.append(prev)
            ends.append(t)
            counts.append(active)
            factors.append(coalescent_factor(active) if active >= 1 else 0)
            eidx.append(coal_seen)
            endcoal.append(bool(n_coal))
        active += add - n_coal
        coal_seen += n_coal
        prev = t
    return IntervalGrid(
        starts=np.array(starts, dtype=float),
        ends=np.array(ends, dtype=float),
        n_lineages=np.array(counts, dtype=int),
        coal_factor=np.array(factors, dtype=float),
        event_index=np.array(eidx, dtype=int),
        ends_with_coal=np.array(endcoal, dtype=bool),
    )
