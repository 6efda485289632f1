"""Communication graphs, doubly stochastic weights and gossip averaging.

All gossip here is synchronous: a round multiplies the stacked per-node values by ``W``.
"""

from __future__ import annotations

import ast
import dataclasses
import json
from pathlib import Path

import networkx as nx
import numpy as np

from .errors import ContractViolation, TopologyError

STOCHASTIC_TOLERANCE = 1e-10


@dataclasses.dataclass(frozen=True)
class CommGraph:
    """Undirected, connected communication graph without stored self-loops.

    Attributes:
        n_nodes (int): Number of agents N.
        edges (frozenset[tuple[int, int]]): Undirected edges with ``i < j``.

    """

    n_nodes: int
    edges: frozenset[tuple[int, int]]

    def __post_init__(self):
        """Normalize edges and check connectivity.

        Raises:
            TopologyError: On self-loops, out-of-range nodes or a disconnected graph.

        """
        if self.n_nodes < 1:
            raise TopologyError(f"A graph needs at least one node, got {self.n_nodes}")
        normalized = set()
        for i, j in self.edges:
            if i == j:
                raise TopologyError(f"Self-loop ({i}, {j}) is not allowed; self-weights are implicit in W")
            if not (0 <= i < self.n_nodes and 0 <= j < self.n_nodes):
                raise TopologyError(f"Edge ({i}, {j}) references a node outside 0..{self.n_nodes - 1}")
            normalized.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", frozenset(normalized))
        if not nx.is_connected(self.to_networkx()):
            raise TopologyError("Communication graph is disconnected; consensus cannot contract (nu would be 1)")

    def to_networkx(self) -> nx.Graph:
        """Return the graph as a networkx object."""
        graph = nx.Graph()
        graph.add_nodes_from(range(self.n_nodes))
        graph.add_edges_from(self.edges)
        return graph

    @classmethod
    def from_networkx(cls, graph: nx.Graph) -> CommGraph:
        """Build from a networkx graph whose nodes are ``0..N-1``."""
        return cls(n_nodes=graph.number_of_nodes(), edges=frozenset(tuple(e) for e in graph.edges))

    @classmethod
    def from_spec(cls, spec: str, n_nodes: int) -> CommGraph:
        """Parse ``ring | complete | star | edges:[(i, j), ...]``.

        Raises:
            TopologyError: If the spec is not recognized.

        """
        spec = spec.strip()
        if spec == "ring":
            graph = nx.cycle_graph(n_nodes) if n_nodes > 2 else nx.path_graph(n_nodes)
        elif spec == "complete":
            graph = nx.complete_graph(n_nodes)
        elif spec == "star":
            graph = nx.star_graph(n_nodes - 1) if n_nodes > 1 else nx.empty_graph(1)
        elif spec.startswith("edges:"):
            try:
                edges = ast.literal_eval(spec.removeprefix("edges:").strip())
            except (ValueError, SyntaxError) as e:
                raise TopologyError(f"Cannot parse edge list in {spec!r}") from e
            return cls(n_nodes=n_nodes, edges=frozenset(tuple(e) for e in edges))
        else:
            raise TopologyError(f"Unknown topology {spec!r}. Must be ring, complete, star or edges:[...]")
        return cls.from_networkx(graph)


def second_singular_value(matrix: np.ndarray) -> float:
    """Second largest singular value; 0 for a single node."""
    if matrix.shape[0] == 1:
        return 0.0
    return float(np.linalg.svd(matrix, compute_uv=False)[1])


@dataclasses.dataclass(frozen=True)
class WeightMatrix:
    """Doubly stochastic communication matrix with cached spectral metadata.

    Attributes:
        matrix (np.ndarray): The N x N weights ``W``.
        nu (float): Second largest singular value of ``W``.
        graph (CommGraph | None): Graph whose edges bound the support of ``W``, if known.

    """

    matrix: np.ndarray
    nu: float = dataclasses.field(default=float("nan"))
    graph: CommGraph | None = None

    def __post_init__(self):
        """Validate double stochasticity, support and the spectral gap.

        Raises:
            TopologyError: If any part of the doubly-stochastic requirement fails.

        """
        matrix = np.array(self.matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise TopologyError(f"Weight matrix must be square, got shape {matrix.shape}")
        if matrix.min() < 0:
            raise TopologyError("Weight matrix entries must be nonnegative")
        if np.max(np.abs(matrix.sum(axis=1) - 1.0)) > STOCHASTIC_TOLERANCE:
            raise TopologyError("Every row of W must sum to 1")
        if np.max(np.abs(matrix.sum(axis=0) - 1.0)) > STOCHASTIC_TOLERANCE:
            raise TopologyError("Every column of W must sum to 1")
        if self.graph is not None:
            allowed = np.eye(matrix.shape[0], dtype=bool)
            for i, j in self.graph.edges:
                allowed[i, j] = allowed[j, i] = True
            if np.any(matrix[~allowed] > 0):
                raise TopologyError("W has positive weight on a pair that is not an edge of the graph")
        nu = second_singular_value(matrix)
        if nu >= 1.0 - STOCHASTIC_TOLERANCE:
            raise TopologyError(f"Second largest singular value nu={nu:.6f} must be smaller than 1")
        matrix.setflags(write=False)
        object.__setattr__(self, "matrix", matrix)
        object.__setattr__(self, "nu", nu)

    @property
    def n_nodes(self) -> int:
        """Number of agents."""
        return self.matrix.shape[0]

    def to_json(self) -> dict:
        """Serialize for fixtures."""
        return {"matrix": self.matrix.tolist(), "nu": self.nu}

    @classmethod
    def from_json(cls, document: dict | str | Path) -> WeightMatrix:
        """Load a user-supplied matrix; it is validated like any other."""
        if isinstance(document, Path):
            document = json.loads(document.read_text(encoding="utf-8"))
        elif isinstance(document, str):
            document = json.loads(document)
        return cls(matrix=np.asarray(document["matrix"], dtype=float))

    @classmethod
    def full_averaging(cls, n_nodes: int) -> WeightMatrix:
        """Rank-one averaging matrix ``(1/N) 11^T`` over the complete graph."""
        return cls(matrix=np.full((n_nodes, n_nodes), 1.0 / n_nodes))


def metropolis_weights(graph: CommGraph) -> WeightMatrix:
    """Metropolis-Hastings weights ``W_ij = 1 / (1 + max(deg i, deg j))`` on the edges.

    Examples:
        >>> W = metropolis_weights(CommGraph(2, frozenset({(0, 1)})))
        >>> W.matrix.tolist()
        [[0.5, 0.5], [0.5, 0.5]]

    """
    nx_graph = graph.to_networkx()
    degree = dict(nx_graph.degree)
    matrix = np.zeros((graph.n_nodes, graph.n_nodes))
    for i, j in graph.edges:
        matrix[i, j] = matrix[j, i] = 1.0 / (1.0 + max(degree[i], degree[j]))
    matrix[np.diag_indices_from(matrix)] = 1.0 - matrix.sum(axis=1)
    return WeightMatrix(matrix=matrix, graph=graph)


def weights_from_spec(spec: str, n_nodes: int) -> WeightMatrix:
    """Resolve a topology spec, including ``file:<path>`` for a JSON weight matrix."""
    spec = spec.strip()
    if spec.startswith("file:"):
        weights = WeightMatrix.from_json(Path(spec.removeprefix("file:")))
        if weights.n_nodes != n_nodes:
            raise TopologyError(f"Weight matrix has {weights.n_nodes} nodes, expected {n_nodes}")
        return weights
    return metropolis_weights(CommGraph.from_spec(spec, n_nodes))


def _stack(values: np.ndarray, weights: WeightMatrix) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.ndim == 0 or values.shape[0] != weights.n_nodes:
        raise ContractViolation(f"Expected one value per node ({weights.n_nodes}), got shape {values.shape}")
    return values


def consensus_round(values: np.ndarray, weights: WeightMatrix) -> np.ndarray:
    """One synchronous gossip round: row ``i`` becomes ``sum_j W_ij values_j``."""
    return weights.matrix @ _stack(values, weights)


def disagreement_norm(values: np.ndarray) -> float:
    """Frobenius norm of ``Q . stack(values)`` with ``Q = I - (1/N) 11^T``.

    Examples:
        >>> disagreement_norm(np.array([[1.0, 2.0], [1.0, 2.0]]))
        0.0

    """
    values = np.asarray(values, dtype=float)
    return float(np.linalg.norm(values - values.mean(axis=0)))


def scalar_gossip(values: np.ndarray, weights: WeightMatrix, rounds: int) -> np.ndarray:
    """Apply ``rounds`` consensus rounds to per-node scalars (or per-node batches of scalars)."""
    if rounds < 0:
        raise ContractViolation(f"Gossip rounds must be nonnegative, got {rounds}")
    values = _stack(values, weights)
    for _ in range(rounds):
        values = weights.matrix @ values
    return values
