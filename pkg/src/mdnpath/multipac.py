"""Multi-PAC: consolidate a mixture sequence into ranked candidate paths.

Weak components are dropped, the surviving component means are clustered per
future step with DBSCAN, clusters become nodes of a tree whose depth is the
step index, each node hangs off the nearest node of the previous step, and
every leaf-to-root chain is one proposal ranked by accumulated weight.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .types import _ConfigMixin, MdnStep, MixtureComponent, PathProposal, PredictionSequence

PAD_CUTOFF = 0.5


class AllFiltered(Exception):
    pass


class EmptySequence(Exception):
    pass


def filter_mixes(step: MdnStep, tau: float) -> list[tuple[int, MixtureComponent]]:
    """Keep components with weight >= tau / M, with their indices."""
    thresh = tau / step.n_components
    kept = [(j, c) for j, c in enumerate(step.components) if c.weight >= thresh]
    if not kept:
        raise AllFiltered(f"no component reaches weight {thresh:.4g}")
    return kept


def dbscan(points, eps: float, min_pts: int = 1) -> np.ndarray:
    """Cluster labels 0..k-1 (noise is -1). Neighbourhoods include the point itself."""
    if eps <= 0 or min_pts < 1:
        raise ValueError("need eps > 0 and min_pts >= 1")
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    n = len(pts)
    labels = np.full(n, -1)
    if n == 0:
        return labels
    d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1)
    nbrs = [np.flatnonzero(row <= eps * eps) for row in d2]
    core = np.array([len(nb) >= min_pts for nb in nbrs])
    cluster = 0
    for i in range(n):
        if labels[i] != -1 or not core[i]:
            continue
        labels[i] = cluster
        stack = [i]
        while stack:
            q = stack.pop()
            if not core[q]:
                continue
            for r in nbrs[q]:
                if labels[r] == -1:
                    labels[r] = cluster
                    stack.append(r)
        cluster += 1
    return labels


@dataclass(eq=False)
class ClusterNode:
    t_index: int
    members: list  # (component index, weight)
    centroid: tuple
    weight_sum: float
    index: int = 0
    parent: Optional["ClusterNode"] = None
    children: list = field(default_factory=list)

    @classmethod
    def from_members(cls, t_index: int, comps: Sequence[tuple[int, MixtureComponent]], index: int = 0):
        w = np.array([c.weight for _, c in comps])
        mu = np.array([c.mean for _, c in comps], dtype=float)
        total = float(w.sum())
        if len(comps) == 1:
            centroid = tuple(map(float, mu[0]))
        elif total > 0:
            centroid = tuple(map(float, (w[:, None] * mu).sum(0) / total))
        else:
            centroid = tuple(map(float, mu.mean(0)))
        return cls(t_index, [(j, c.weight) for j, c in comps], centroid, total, index)


def cluster_step(t_index: int, comps: Sequence[tuple[int, MixtureComponent]], eps: float, min_pts: int,
                 start_index: int = 0) -> list[ClusterNode]:
    labels = dbscan([c.mean for _, c in comps], eps, min_pts)
    nodes = []
    # noise points (possible only with min_pts > 1) become singleton nodes
    groups = {}
    for k, lab in enumerate(labels):
        key = ("c", int(lab)) if lab >= 0 else ("n", k)
        groups.setdefault(key, []).append(comps[k])
    for members in groups.values():
        nodes.append(ClusterNode.from_members(t_index, members, start_index + len(nodes)))
    return nodes


def build_tree(per_step: Sequence[Sequence[ClusterNode]], root_xy=(0.0, 0.0)) -> ClusterNode:
    """Link step-t nodes to their nearest step t-1 node under a root at step 0.

    Ties in distance go to the heavier parent, then the earlier one.
    """
    if not per_step or not per_step[0]:
        raise EmptySequence("no clusters at the first step")
    root = ClusterNode(0, [], tuple(map(float, root_xy)), 0.0, index=-1)
    prev = [root]
    for t, nodes in enumerate(per_step, start=1):
        if not nodes:
            break
        pc = np.array([n.centroid for n in prev])
        for node in nodes:
            if node.t_index != t:
                raise ValueError(f"node at step {node.t_index} listed under step {t}")
            d = np.hypot(*(pc - np.asarray(node.centroid)).T)
            dmin = d.min()
            tied = [k for k in range(len(prev)) if d[k] <= dmin + 1e-12 * max(1.0, dmin)]
            best = min(tied, key=lambda k: (-prev[k].weight_sum, prev[k].index))
            node.parent = prev[best]
            prev[best].children.append(node)
        prev = list(nodes)
    return root


def _walk(root: ClusterNode):
    stack = [root]
    while stack:
        n = stack.pop()
        yield n
        stack.extend(reversed(n.children))


def extract_paths(root: ClusterNode) -> list[PathProposal]:
    """One proposal per leaf, root excluded, sorted by summed node weight (descending)."""
    leaves = [n for n in _walk(root) if not n.children and n is not root]
    leaves.sort(key=lambda n: (n.t_index, n.index))
    proposals = []
    for leaf in leaves:
        chain = []
        n = leaf
        while n is not None and n is not root:
            chain.append(n)
            n = n.parent
        chain.reverse()
        pts = tuple((n.centroid[0], n.centroid[1], n.t_index) for n in chain)
        proposals.append(PathProposal(pts, float(sum(n.weight_sum for n in chain))))
    order = sorted(range(len(proposals)), key=lambda k: -proposals[k].weight)
    return [proposals[k] for k in order]


@dataclass(frozen=True)
class MultiPacParams(_ConfigMixin):
    tau: float = 0.5  # keep components with weight >= tau / M
    eps: float = 2.0  # DBSCAN radius, metres
    min_pts: int = 1

    def __post_init__(self):
        if self.tau < 0 or self.eps <= 0 or self.min_pts < 1:
            raise ValueError("need tau >= 0, eps > 0 and min_pts >= 1")


def clustered_length(pred: PredictionSequence) -> int:
    """Steps before the padding output first exceeds 0.5 (at least one)."""
    for k, st in enumerate(pred.steps):
        if st.pad_prob > PAD_CUTOFF:
            return max(k, 1)
    return len(pred.steps)


def retained(step: MdnStep, tau: float) -> list[tuple[int, MixtureComponent]]:
    try:
        return filter_mixes(step, tau)
    except AllFiltered:
        j = max(range(step.n_components), key=lambda k: step.components[k].weight)
        return [(j, step.components[j])]


def consolidate(pred: PredictionSequence, params: MultiPacParams = MultiPacParams(),
                origin=(0.0, 0.0)) -> list[PathProposal]:
    n = clustered_length(pred)
    per_step = []
    count = 0
    for t in range(1, n + 1):
        nodes = cluster_step(t, retained(pred.steps[t - 1], params.tau), params.eps, params.min_pts, count)
        count += len(nodes)
        per_step.append(nodes)
    return extract_paths(build_tree(per_step, origin))


def proposals_to_json(proposals: Sequence[PathProposal]) -> list[dict]:
    return [p.to_json(rank) for rank, p in enumerate(proposals, start=1)]
