"""Channel grouping: Spearman correlation, threshold graph, label propagation."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .data import SeriesMatrix

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Grouping:
    """Partition of channels; each label is the smallest channel index in its group."""

    labels: tuple[int, ...]

    def __post_init__(self):
        labels = tuple(int(v) for v in self.labels)
        for i, lab in enumerate(labels):
            if not 0 <= lab <= i or labels[lab] != lab:
                raise ValueError(f"labels {labels} are not canonical (channel {i} -> {lab})")
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_labels(cls, labels) -> Grouping:
        """Canonicalize arbitrary group identifiers by minimum member index."""
        first: dict = {}
        out = []
        for i, lab in enumerate(labels):
            out.append(first.setdefault(lab, i))
        return cls(tuple(out))

    @classmethod
    def from_groups(cls, groups, n_channels: int) -> Grouping:
        labels = [-1] * n_channels
        for g, members in enumerate(groups):
            for m in members:
                if not 0 <= m < n_channels:
                    raise ValueError(f"channel {m} out of range for {n_channels} channels")
                if labels[m] != -1:
                    raise ValueError(f"channel {m} appears in more than one group")
                labels[m] = g
        if -1 in labels:
            raise ValueError(f"channel {labels.index(-1)} is not assigned to any group")
        return cls.from_labels(labels)

    @property
    def n_channels(self) -> int:
        return len(self.labels)

    @property
    def group_count(self) -> int:
        return len(set(self.labels))

    @property
    def groups(self) -> list[list[int]]:
        out: dict[int, list[int]] = {}
        for i, lab in enumerate(self.labels):
            out.setdefault(lab, []).append(i)
        return [out[k] for k in sorted(out)]

    def group_index(self) -> np.ndarray:
        """Dense 0..G-1 group id per channel, in order of first appearance."""
        ids = {lab: k for k, lab in enumerate(sorted(set(self.labels)))}
        return np.array([ids[lab] for lab in self.labels], dtype=int)


def average_ranks(x: np.ndarray) -> np.ndarray:
    """Ranks ``1..n`` along the last axis; tied values share their mean rank."""
    x = np.asarray(x, dtype=np.float64)
    flat = x.reshape(-1, x.shape[-1])
    out = np.empty_like(flat)
    n = flat.shape[1]
    for row, dst in zip(flat, out):
        order = np.argsort(row, kind="mergesort")
        sorted_vals = row[order]
        # boundaries of runs of equal values
        starts = np.flatnonzero(np.r_[True, sorted_vals[1:] != sorted_vals[:-1]])
        ends = np.r_[starts[1:], n]
        run_rank = (starts + ends + 1) / 2.0
        dst[order] = np.repeat(run_rank, ends - starts)
    return out.reshape(x.shape)


def spearman_matrix(train) -> np.ndarray:
    """Pearson correlation of per-channel ranks over time (``C x T`` input)."""
    values = train.values if isinstance(train, SeriesMatrix) else np.asarray(train, dtype=np.float64)
    if values.ndim != 2 or values.shape[1] < 2:
        raise ValueError(f"spearman needs a C x T matrix with T >= 2, got {values.shape}")
    ranks = average_ranks(values)
    centered = ranks - ranks.mean(axis=1, keepdims=True)
    norms = np.sqrt((centered * centered).sum(axis=1))
    const = norms == 0
    norms[const] = 1.0
    z = centered / norms[:, None]
    corr = np.clip(z @ z.T, -1.0, 1.0)
    corr = 0.5 * (corr + corr.T)
    corr[const, :] = 0.0
    corr[:, const] = 0.0
    np.fill_diagonal(corr, 1.0)
    return corr


def threshold_graph(corr: np.ndarray, threshold: float) -> np.ndarray:
    """Boolean adjacency: edge ``(i, j)``, ``i != j``, iff ``corr[i, j] > threshold``."""
    if not -1.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must lie in [-1, 1], got {threshold}")
    corr = np.asarray(corr)
    adj = corr > threshold
    adj = adj & adj.T
    np.fill_diagonal(adj, False)
    return adj


def label_propagation(adjacency: np.ndarray, max_iters: int = 100) -> Grouping:
    """Asynchronous label propagation with deterministic tie-breaking.

    Labels start as the channel index. Each sweep visits channels in ascending
    order and replaces the label with the most frequent neighbour label; ties
    go to the smallest label, channels without neighbours keep theirs. Stops
    at a fixed point or after ``max_iters`` sweeps.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    adj = np.asarray(adjacency, dtype=bool)
    n = adj.shape[0]
    neighbours = [np.flatnonzero(adj[i] & (np.arange(n) != i)) for i in range(n)]
    labels = np.arange(n)
    for sweep in range(max_iters):
        changed = False
        for i in range(n):
            nb = neighbours[i]
            if nb.size == 0:
                continue
            counts = np.bincount(labels[nb], minlength=n)
            best = int(np.argmax(counts))  # argmax returns the smallest label among ties
            if best != labels[i]:
                labels[i] = best
                changed = True
        if not changed:
            break
    else:
        log.info("label propagation stopped after %d sweeps without reaching a fixed point", max_iters)
    return Grouping.from_labels(labels.tolist())


@dataclass(frozen=True)
class ClusterResult:
    grouping: Grouping
    threshold: float
    edge_count: int

    @property
    def group_sizes(self) -> list[int]:
        return [len(g) for g in self.grouping.groups]

    def to_dict(self) -> dict:
        return {"threshold": self.threshold, "groups": self.grouping.groups, "edge_count": self.edge_count}


def build_grouping(train, threshold: float = 0.8, max_iters: int = 100) -> ClusterResult:
    """Group channels of the training segment whose rank correlation exceeds ``threshold``."""
    corr = spearman_matrix(train)
    adj = threshold_graph(corr, threshold)
    grouping = label_propagation(adj, max_iters=max_iters)
    result = ClusterResult(grouping, float(threshold), int(np.triu(adj, 1).sum()))
    log.info(
        "threshold %.3f: %d edges, %d groups (sizes %s)",
        threshold, result.edge_count, grouping.group_count, result.group_sizes,
    )
    return result
