"""Social network construction: clustered random graphs and influence matrices."""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from fjnudge.errors import DimensionMismatch, ZeroRow

ROW_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class Network:
    """Directed influence network.

    ``P`` is row-stochastic, ``lam`` holds the per-agent weight given to social
    influence and ``cluster_of`` the cluster label of each node. Instances hash by
    identity so prediction matrices derived from them can be cached.
    """

    P: np.ndarray
    lam: np.ndarray
    cluster_of: np.ndarray

    def __post_init__(self):
        P = np.array(self.P, dtype=float)
        lam = np.array(self.lam, dtype=float)
        clusters = np.array(self.cluster_of, dtype=int)
        n = P.shape[0]
        if P.ndim != 2 or P.shape != (n, n):
            raise DimensionMismatch(f"P must be square, got {P.shape}")
        if lam.shape != (n,) or clusters.shape != (n,):
            raise DimensionMismatch("lambda and clusters must have length n")
        if (P < 0).any():
            raise ValueError("P has negative entries")
        if np.abs(P.sum(axis=1) - 1.0).max() > ROW_TOL:
            raise ValueError("P is not row-stochastic")
        if ((lam < 0) | (lam > 1)).any():
            raise ValueError("lambda entries must lie in [0, 1]")
        for name, arr in (("P", P), ("lam", lam), ("cluster_of", clusters)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        # both are read on every simulation step
        A, b = lam[:, None] * P, 1.0 - lam
        A.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "_A", A)
        object.__setattr__(self, "_b", b)

    @property
    def n(self) -> int:
        return self.P.shape[0]

    @property
    def A(self) -> np.ndarray:
        """State matrix ``[lambda] P``."""
        return self._A

    @property
    def b(self) -> np.ndarray:
        """Diagonal of the input matrix ``I - [lambda]``."""
        return self._b

    def with_lambda(self, lam) -> "Network":
        lam = np.broadcast_to(np.asarray(lam, dtype=float), (self.n,))
        return Network(self.P, lam, self.cluster_of)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "lambda": self.lam.tolist(),
            "clusters": self.cluster_of.tolist(),
            "P": self.P.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Network":
        net = cls(np.asarray(doc["P"]), np.asarray(doc["lambda"]), np.asarray(doc["clusters"]))
        if net.n != int(doc["n"]):
            raise DimensionMismatch(f"n={doc['n']} but P is {net.n}x{net.n}")
        return net

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "Network":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class GraphGenParams:
    n: int = 20
    n_clusters: int = 7
    p_intra: float = 0.2
    p_inter: float = 0.7
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not 1 <= self.n_clusters <= self.n:
            raise ValueError(f"n_clusters must be in [1, n], got {self.n_clusters}")
        for p in (self.p_intra, self.p_inter):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"probability {p} outside [0, 1]")


def row_normalize(adjacency) -> np.ndarray:
    adj = np.asarray(adjacency, dtype=float)
    sums = adj.sum(axis=1)
    if (sums <= 0).any():
        raise ZeroRow(f"rows {np.flatnonzero(sums <= 0).tolist()} have no positive entry")
    return adj / sums[:, None]


def cluster_labels(n: int, n_clusters: int) -> np.ndarray:
    """Contiguous, balanced cluster assignment of ``n`` nodes."""
    labels = np.empty(n, dtype=int)
    for c, idx in enumerate(np.array_split(np.arange(n), n_clusters)):
        labels[idx] = c
    return labels


def generate_clustered_er(params: GraphGenParams, lam, rng: np.random.Generator | None = None) -> Network:
    """Sample a directed clustered Erdos-Renyi graph and its uniform-weight influence matrix.

    Each ordered pair ``(v, w)``, ``v != w``, is an edge with probability ``p_intra``
    when both nodes share a cluster and ``p_inter`` otherwise. Nodes left without
    out-edges get a self-loop. If ``rng`` is omitted it is seeded from ``params.seed``.
    """
    n = params.n
    lam = np.broadcast_to(np.asarray(lam, dtype=float), (n,)).copy()
    if rng is None:
        rng = np.random.default_rng(params.seed)
    clusters = cluster_labels(n, params.n_clusters)
    same = clusters[:, None] == clusters[None, :]
    prob = np.where(same, params.p_intra, params.p_inter)
    adj = (rng.random((n, n)) < prob).astype(float)
    np.fill_diagonal(adj, 0.0)
    lonely = adj.sum(axis=1) == 0
    adj[lonely, lonely] = 1.0
    return Network(row_normalize(adj), lam, clusters)


def check_assumption2(net: Network) -> bool:
    """True iff every node has a directed path (``P_vw > 0``) to some node with ``lambda < 1``.

    Runs a reverse breadth-first search from the set of nodes with ``lambda < 1``.
    """
    n = net.n
    reached = net.lam < 1.0
    queue = deque(np.flatnonzero(reached).tolist())
    preds = [np.flatnonzero(net.P[:, w] > 0) for w in range(n)]
    while queue:
        w = queue.popleft()
        for v in preds[w]:
            if not reached[v]:
                reached[v] = True
                queue.append(v)
    return bool(reached.all())
