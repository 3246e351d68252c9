"""Weighted mobility graphs, disparity-filter backbones and the GCN propagation matrix."""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from errors import InvalidArgumentError, UnknownNodeError

log = logging.getLogger(__name__)

CRITERIA = ("smallest", "largest")
DIRECTIONS = ("out", "in")


class MobilityGraph:
    """Directed (or undirected) weighted graph of locations.

    Edges are stored as three parallel arrays. Zero-weight edges are dropped,
    self-loops, duplicates, negative weights and out-of-range endpoints are
    rejected. Instances are immutable after construction.
    """

    def __init__(self, node_ids, edges=(), directed=True):
        self.node_ids = tuple(str(n) for n in node_ids)
        self.directed = bool(directed)
        self._index = {}
        for i, node in enumerate(self.node_ids):
            if node in self._index:
                raise InvalidArgumentError(f"duplicate node identifier {node!r}")
            self._index[node] = i

        edges = list(edges)
        if edges:
            src, tgt, w = zip(*edges)
        else:
            src, tgt, w = (), (), ()
        self._set_edges(
            np.asarray(src, dtype=np.int64),
            np.asarray(tgt, dtype=np.int64),
            np.asarray(w, dtype=np.float64),
        )

    @classmethod
    def from_arrays(cls, node_ids, sources, targets, weights, directed=True):
        """Graph from parallel source, target and weight arrays of node indices."""
        graph = cls.__new__(cls)
        graph.node_ids = tuple(str(n) for n in node_ids)
        graph.directed = bool(directed)
        graph._index = {node: i for i, node in enumerate(graph.node_ids)}
        if len(graph._index) != len(graph.node_ids):
            raise InvalidArgumentError("duplicate node identifiers")
        graph._set_edges(
            np.asarray(sources, dtype=np.int64),
            np.asarray(targets, dtype=np.int64),
            np.asarray(weights, dtype=np.float64),
        )
        return graph

    def _set_edges(self, sources, targets, weights):
        n = len(self.node_ids)
        if not (len(sources) == len(targets) == len(weights)):
            raise InvalidArgumentError("edge arrays must have equal length")

        bad = (sources < 0) | (sources >= n) | (targets < 0) | (targets >= n)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise InvalidArgumentError(
                f"edge ({sources[i]}, {targets[i]}) has an endpoint outside [0, {n})"
            )
        if not np.all(np.isfinite(weights)):
            raise InvalidArgumentError("edge weights must be finite")
        if (weights < 0).any():
            i = int(np.flatnonzero(weights < 0)[0])
            raise InvalidArgumentError(
                f"negative weight {weights[i]} on edge "
                f"({self.node_ids[sources[i]]}, {self.node_ids[targets[i]]})"
            )
        loops = sources == targets
        if loops.any():
            i = int(np.flatnonzero(loops)[0])
            raise InvalidArgumentError(f"self-loop on node {self.node_ids[sources[i]]!r}")

        keep = weights > 0
        sources, targets, weights = sources[keep], targets[keep], weights[keep]

        if self.directed:
            keys = sources * n + targets
        else:
            keys = np.minimum(sources, targets) * n + np.maximum(sources, targets)
        _, first, counts = np.unique(keys, return_index=True, return_counts=True)
        if (counts > 1).any():
            i = int(first[np.flatnonzero(counts > 1)[0]])
            raise InvalidArgumentError(
                f"duplicate edge ({self.node_ids[sources[i]]}, {self.node_ids[targets[i]]})"
            )

        for arr in (sources, targets, weights):
            arr.setflags(write=False)
        self.sources = sources
        self.targets = targets
        self.weights = weights

    @property
    def num_nodes(self):
        return len(self.node_ids)

    @property
    def num_edges(self):
        return len(self.weights)

    def index_of(self, node_id):
        try:
            return self._index[str(node_id)]
        except KeyError:
            raise UnknownNodeError(f"unknown node identifier {node_id!r}") from None

    def edges(self):
        """Iterate (source index, target index, weight) triples in storage order."""
        for s, t, w in zip(self.sources, self.targets, self.weights):
            yield int(s), int(t), float(w)

    def arcs(self):
        """Edges as directed arcs; undirected edges appear once per direction.

        Returns (sources, targets, weights, edge index) arrays.
        """
        idx = np.arange(self.num_edges)
        if self.directed:
            return self.sources, self.targets, self.weights, idx
        return (
            np.concatenate([self.sources, self.targets]),
            np.concatenate([self.targets, self.sources]),
            np.concatenate([self.weights, self.weights]),
            np.concatenate([idx, idx]),
        )

    def adjacency(self):
        """Weighted adjacency A as a CSR matrix, A[i, j] = flow from i to j."""
        src, tgt, w, _ = self.arcs()
        n = self.num_nodes
        return sp.csr_matrix((w, (src, tgt)), shape=(n, n))

    def stats(self):
        """Degree and strength of every node (vectorised NodeStats)."""
        src, tgt, w, _ = self.arcs()
        n = self.num_nodes
        return NodeStats(
            out_degree=np.bincount(src, minlength=n),
            out_strength=np.bincount(src, weights=w, minlength=n),
            in_degree=np.bincount(tgt, minlength=n),
            in_strength=np.bincount(tgt, weights=w, minlength=n),
        )

    def select_edges(self, mask):
        """New graph over the same nodes keeping the edges where mask is true."""
        mask = np.asarray(mask, dtype=bool)
        return MobilityGraph.from_arrays(
            self.node_ids,
            self.sources[mask],
            self.targets[mask],
            self.weights[mask],
            directed=self.directed,
        )

    def with_nodes(self, node_ids):
        """Re-index onto node_ids (in that order).

        Edges touching nodes outside node_ids are dropped, identifiers absent
        from this graph become isolated nodes.
        """
        node_ids = [str(n) for n in node_ids]
        position = {node: i for i, node in enumerate(node_ids)}
        remap = np.array([position.get(node, -1) for node in self.node_ids], dtype=np.int64)
        src = remap[self.sources] if self.num_edges else self.sources
        tgt = remap[self.targets] if self.num_edges else self.targets
        keep = (src >= 0) & (tgt >= 0)
        return MobilityGraph.from_arrays(
            node_ids, src[keep], tgt[keep], self.weights[keep], directed=self.directed
        )

    def __eq__(self, other):
        if not isinstance(other, MobilityGraph):
            return NotImplemented
        return (
            self.node_ids == other.node_ids
            and self.directed == other.directed
            and np.array_equal(self.sources, other.sources)
            and np.array_equal(self.targets, other.targets)
            and np.array_equal(self.weights, other.weights)
        )

    def __repr__(self):
        kind = "directed" if self.directed else "undirected"
        return f"MobilityGraph({kind}, N={self.num_nodes}, L={self.num_edges})"


@dataclass(frozen=True)
class NodeStats:
    out_degree: np.ndarray
    out_strength: np.ndarray
    in_degree: np.ndarray
    in_strength: np.ndarray


@dataclass(frozen=True)
class DegreeStrength:
    degree: int
    strength: float


def node_stats(graph, node, direction="out"):
    """Degree k and strength s of one node in the given direction."""
    if direction not in DIRECTIONS:
        raise InvalidArgumentError(f"direction must be one of {DIRECTIONS}, got {direction!r}")
    if not 0 <= node < graph.num_nodes:
        raise InvalidArgumentError(f"node index {node} outside [0, {graph.num_nodes})")
    src, tgt, w, _ = graph.arcs()
    incident = (src if direction == "out" else tgt) == node
    return DegreeStrength(degree=int(incident.sum()), strength=float(w[incident].sum()))


def disparity_pvalue(weight, k, s):
    """Probability that a share weight/s of s arises by chance among k edges."""
    if k < 1:
        raise InvalidArgumentError(f"degree must be >= 1, got {k}")
    if not 0 < weight <= s:
        raise InvalidArgumentError(f"need 0 < weight <= strength, got weight={weight}, s={s}")
    return (1.0 - weight / s) ** (k - 1)


def _pvalues(weights, k, s):
    # vectorised disparity_pvalue; every arc has k >= 1 and s >= weight
    return (1.0 - weights / s) ** (k - 1)


def edge_pvalues(graph, criterion="smallest"):
    """Combined disparity p-value of every edge.

    The source judges the edge with its outgoing statistics, the target with
    its incoming ones; undirected graphs use total degree and strength.
    """
    if criterion not in CRITERIA:
        raise InvalidArgumentError(f"criterion must be one of {CRITERIA}, got {criterion!r}")
    stats = graph.stats()
    src, tgt, w = graph.sources, graph.targets, graph.weights
    if graph.directed:
        p_from = _pvalues(w, stats.out_degree[src], stats.out_strength[src])
        p_to = _pvalues(w, stats.in_degree[tgt], stats.in_strength[tgt])
    else:
        p_from = _pvalues(w, stats.out_degree[src], stats.out_strength[src])
        p_to = _pvalues(w, stats.out_degree[tgt], stats.out_strength[tgt])
    combine = np.minimum if criterion == "smallest" else np.maximum
    return combine(p_from, p_to)


def significance_mask(graph, alpha, criterion="smallest"):
    """Edges whose combined p-value is strictly below alpha (before retention)."""
    return edge_pvalues(graph, criterion) < alpha


def retention_mask(graph, min_keep):
    """Each node's min_keep heaviest outgoing edges, ties to the lower target index."""
    mask = np.zeros(graph.num_edges, dtype=bool)
    if min_keep == 0 or graph.num_edges == 0:
        return mask
    src, tgt, w, edge = graph.arcs()
    order = np.lexsort((tgt, -w, src))
    ranked_src = src[order]
    group_start = np.searchsorted(ranked_src, ranked_src, side="left")
    rank = np.arange(len(order)) - group_start
    mask[edge[order[rank < min_keep]]] = True
    return mask


def extract_backbone(graph, alpha=0.01, min_keep=5, criterion="smallest"):
    """Disparity-filter backbone with top-min_keep retention per node."""
    if graph.num_nodes == 0:
        raise InvalidArgumentError("cannot extract the backbone of an empty graph")
    if not 0 < alpha < 1:
        raise InvalidArgumentError(f"alpha must lie in (0, 1), got {alpha}")
    if min_keep < 0 or int(min_keep) != min_keep:
        raise InvalidArgumentError(f"min_keep must be a non-negative integer, got {min_keep}")

    significant = significance_mask(graph, alpha, criterion)
    kept = significant | retention_mask(graph, int(min_keep))
    log.info(
        "backbone: %d edges in, %d significant, %d kept (alpha=%g, min_keep=%d, %s)",
        graph.num_edges, int(significant.sum()), int(kept.sum()), alpha, min_keep, criterion,
    )
    return graph.select_edges(kept)


def propagation_matrix(graph, dtype=np.float64):
    """D^-1/2 (A + I) D^-1/2 with D the row sums of A + I, as CSR."""
    if graph.num_nodes == 0:
        raise InvalidArgumentError("cannot build the propagation matrix of an empty graph")
    a_hat = graph.adjacency() + sp.identity(graph.num_nodes, format="csr")
    degree = np.asarray(a_hat.sum(axis=1)).ravel()
    d_inv_sqrt = sp.diags(1.0 / np.sqrt(degree))
    return (d_inv_sqrt @ a_hat @ d_inv_sqrt).tocsr().astype(dtype)
