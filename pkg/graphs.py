import dataclasses
import itertools
import logging
import random
from collections import deque
from pathlib import Path
from typing import NamedTuple

import networkx as nx

from commons import InputError

logger = logging.getLogger(__name__)

FAMILIES = ("ring", "path", "complete", "random-connected", "random-tree")
EXTRA_EDGE_PROBABILITY = 0.3


class Port(NamedTuple):
    port: int
    neighbor: int
    neighbor_port: int


@dataclasses.dataclass(
    frozen=True,
    slots=True,
)
class PortLabeledGraph:
    """
    Anonymous graph stored as, per node, its ports in ascending order.

    Node indices exist only for the simulator; robots never see them.
    """

    adjacency: tuple[tuple[Port, ...], ...]

    @classmethod
    def from_lists(cls, rows: list[list[tuple[int, int, int]]]) -> "PortLabeledGraph":
        adjacency = tuple(tuple(sorted(Port(*entry) for entry in row)) for row in rows)
        graph = cls(adjacency)
        graph.validate()
        return graph

    @property
    def node_count(self) -> int:
        return len(self.adjacency)

    @property
    def edge_count(self) -> int:
        return sum(
            1
            for node, row in enumerate(self.adjacency)
            for entry in row
            if (node, entry.port) <= (entry.neighbor, entry.neighbor_port)
        )

    def degree(self, node: int) -> int:
        return len(self.adjacency[node])

    def follow(self, node: int, port: int) -> tuple[int, int]:
        """Returns (neighbor, entry port) reached by leaving ``node`` through ``port``."""
        if not 1 <= port <= len(self.adjacency[node]):
            raise InputError(f"Node {node} has no port {port}")
        entry = self.adjacency[node][port - 1]
        return entry.neighbor, entry.neighbor_port

    def check_node(self, node: int) -> None:
        if not 0 <= node < self.node_count:
            raise InputError(f"Node index {node} outside [0, {self.node_count})")

    def validate(self, *, connected: bool = True) -> None:
        """
        Checks port uniqueness, edge symmetry and (optionally) connectivity.

        Raises:
            InputError: On the first violated invariant.
        """
        if self.node_count == 0:
            raise InputError("A graph needs at least one node")
        for node, row in enumerate(self.adjacency):
            ports = [entry.port for entry in row]
            if ports != list(range(1, len(row) + 1)):
                raise InputError(f"Ports at node {node} are {ports}, expected 1..{len(row)}")
            for entry in row:
                if not 0 <= entry.neighbor < self.node_count:
                    raise InputError(f"Node {node} port {entry.port} points outside the graph")
                back_row = self.adjacency[entry.neighbor]
                if not 1 <= entry.neighbor_port <= len(back_row):
                    raise InputError(f"Node {node} port {entry.port} names a missing port {entry.neighbor_port}")
                back = back_row[entry.neighbor_port - 1]
                if (back.neighbor, back.neighbor_port) != (node, entry.port):
                    raise InputError(f"Edge ({node}, {entry.port}) is not mirrored at node {entry.neighbor}")
        if connected and len(self.reachable(0)) != self.node_count:
            raise InputError("Graph is not connected")

    def reachable(self, start: int) -> list[int]:
        seen = {start}
        order = [start]
        queue = deque([start])
        while queue:
            node = queue.popleft()
            for entry in self.adjacency[node]:
                if entry.neighbor not in seen:
                    seen.add(entry.neighbor)
                    order.append(entry.neighbor)
                    queue.append(entry.neighbor)
        return order


@dataclasses.dataclass(
    frozen=True,
    slots=True,
)
class ViewTree:
    depth: int
    children: tuple[tuple[int, int, "ViewTree"], ...]

    def truncate(self, depth: int) -> "ViewTree":
        if depth >= self.depth:
            return self
        if depth == 0:
            return ViewTree(0, ())
        return ViewTree(depth, tuple((p, q, child.truncate(depth - 1)) for p, q, child in self.children))


def build_view(
    graph: PortLabeledGraph,
    node: int,
    depth: int,
    pool: dict[tuple, ViewTree] | None = None,
) -> ViewTree:
    """
    Builds the depth-truncated view of ``node``.

    Equal subtrees are interned in ``pool``; passing the same pool to several calls
    makes equal views the very same object, so comparing deep views stays cheap.

    Args:
        graph (PortLabeledGraph): The graph to look at.
        node (int): The node whose view is built.
        depth (int): How many edges deep the view reaches.
        pool (dict | None): Interned subtrees shared between calls. A fresh pool is used if None.

    Returns:
        ViewTree: The view tree rooted at ``node``.

    Raises:
        InputError: If the node index is invalid or depth is negative.
    """
    graph.check_node(node)
    if depth < 0:
        raise InputError(f"View depth must be non-negative, got {depth}")
    pool = {} if pool is None else pool
    memo: dict[tuple[int, int], ViewTree] = {}

    def expand(current: int, remaining: int) -> ViewTree:
        cached = memo.get((current, remaining))
        if cached is not None:
            return cached
        if remaining == 0:
            children: tuple = ()
        else:
            children = tuple(
                (entry.port, entry.neighbor_port, expand(entry.neighbor, remaining - 1))
                for entry in graph.adjacency[current]
            )
        key = (remaining, tuple((p, q, id(child)) for p, q, child in children))
        tree = pool.get(key)
        if tree is None:
            tree = ViewTree(remaining, children)
            pool[key] = tree
        memo[(current, remaining)] = tree
        return tree

    return expand(node, depth)


def view_classes(graph: PortLabeledGraph, depth: int | None = None) -> tuple[int, ...]:
    """
    Labels each node with its view-equivalence class at the given depth (n-1 by default).

    Classes are refined round by round; once a round splits nothing the
    partition is final, so the loop stops early.

    Args:
        graph (PortLabeledGraph): The graph to partition.
        depth (int | None): Refinement rounds. Defaults to n - 1, which separates every pair of
                            nodes with different views.

    Returns:
        tuple[int, ...]: The class label of each node, numbered in order of first appearance.
    """
    n = graph.node_count
    depth = n - 1 if depth is None else depth
    colors = [0] * n
    for _ in range(depth):
        index: dict[tuple, int] = {}
        refined = [
            index.setdefault(
                tuple((entry.port, entry.neighbor_port, colors[entry.neighbor]) for entry in graph.adjacency[node]),
                len(index),
            )
            for node in range(n)
        ]
        stable = len(index) == len(set(colors))
        colors = refined
        if stable:
            break
    return tuple(colors)


@dataclasses.dataclass(
    frozen=True,
    slots=True,
)
class QuotientGraph:
    classes: tuple[frozenset[int], ...]
    class_of: tuple[int, ...]
    adjacency: tuple[tuple[Port, ...], ...]

    @property
    def edges(self) -> tuple[tuple[int, int, int, int], ...]:
        """Labeled edges (X, p, Y, q), each undirected edge listed once."""
        return tuple(
            (cls, entry.port, entry.neighbor, entry.neighbor_port)
            for cls, row in enumerate(self.adjacency)
            for entry in row
            if (cls, entry.port) <= (entry.neighbor, entry.neighbor_port)
        )

    def as_graph(self) -> PortLabeledGraph:
        return PortLabeledGraph(self.adjacency)


def quotient_graph(graph: PortLabeledGraph) -> QuotientGraph:
    """
    Collapses every view-equivalence class into a single node.

    Nodes of one class have the same ports leading to the same classes, so the class's
    first member stands in for all of them.

    Args:
        graph (PortLabeledGraph): A connected graph.

    Returns:
        QuotientGraph: The classes ordered by their smallest member, each node's class, and the
                       port-labeled edges between classes.

    Raises:
        InputError: If the graph is invalid or disconnected.
    """
    graph.validate()
    colors = view_classes(graph)
    members: dict[int, list[int]] = {}
    for node, color in enumerate(colors):
        members.setdefault(color, []).append(node)
    ordered = sorted(members.values(), key=lambda nodes: nodes[0])
    class_of = [0] * graph.node_count
    for cls, nodes in enumerate(ordered):
        for node in nodes:
            class_of[node] = cls
    adjacency = tuple(
        tuple(
            Port(entry.port, class_of[entry.neighbor], entry.neighbor_port) for entry in graph.adjacency[nodes[0]]
        )
        for nodes in ordered
    )
    return QuotientGraph(
        classes=tuple(frozenset(nodes) for nodes in ordered),
        class_of=tuple(class_of),
        adjacency=adjacency,
    )


@dataclasses.dataclass(
    frozen=True,
    slots=True,
)
class RootedMap:
    graph: PortLabeledGraph
    root: int = 0

    @property
    def node_count(self) -> int:
        return self.graph.node_count

    @property
    def key(self) -> tuple[tuple[tuple[int, int, int], ...], ...]:
        """Plain-tuple canonical form; equal keys mean port-preserving isomorphic maps."""
        canonical = canonicalize_map(self)
        return tuple(tuple(tuple(entry) for entry in row) for row in canonical.graph.adjacency)

    @classmethod
    def from_key(cls, key: tuple[tuple[tuple[int, int, int], ...], ...]) -> "RootedMap":
        graph = PortLabeledGraph(tuple(tuple(Port(*entry) for entry in row) for row in key))
        graph.validate()
        return cls(graph, 0)

    def shortest_route(self, target: int) -> tuple[int, ...]:
        """Ports leading from the root to ``target`` along a breadth-first tree."""
        self.graph.check_node(target)
        parent: dict[int, tuple[int, int]] = {self.root: (-1, 0)}
        queue = deque([self.root])
        while queue:
            node = queue.popleft()
            for entry in self.graph.adjacency[node]:
                if entry.neighbor not in parent:
                    parent[entry.neighbor] = (node, entry.port)
                    queue.append(entry.neighbor)
        if target not in parent:
            raise InputError(f"Node {target} is unreachable from the root")
        route = []
        node = target
        while node != self.root:
            node, port = parent[node]
            route.append(port)
        return tuple(reversed(route))


def canonicalize_map(rooted_map: RootedMap) -> RootedMap:
    """
    Renumbers a map breadth-first from its root, ports in ascending order.

    Port order leaves no ties, so two maps are root- and port-preserving
    isomorphic exactly when their canonical forms are identical.

    Args:
        rooted_map (RootedMap): The map to renumber.

    Returns:
        RootedMap: The same map with the root as node 0 and the other nodes in BFS order.

    Raises:
        InputError: If the root is invalid or some node cannot be reached from it.
    """
    graph = rooted_map.graph
    graph.check_node(rooted_map.root)
    order = graph.reachable(rooted_map.root)
    if len(order) != graph.node_count:
        raise InputError("Map is not connected from its root")
    position = {node: index for index, node in enumerate(order)}
    adjacency = tuple(
        tuple(Port(entry.port, position[entry.neighbor], entry.neighbor_port) for entry in graph.adjacency[node])
        for node in order
    )
    return RootedMap(PortLabeledGraph(adjacency), 0)


def is_graph_quotient_isomorphic(graph: PortLabeledGraph) -> bool:
    """
    Tells whether every node has a distinct view, which makes a graph isomorphic to its own quotient.

    Args:
        graph (PortLabeledGraph): A connected graph.

    Returns:
        bool: True when robots can build the exact map from views alone.
    """
    quotient = quotient_graph(graph)
    if len(quotient.classes) != graph.node_count:
        return False
    own = canonicalize_map(RootedMap(graph, 0))
    projected = canonicalize_map(RootedMap(quotient.as_graph(), quotient.class_of[0]))
    return own == projected


@dataclasses.dataclass(
    frozen=True,
    slots=True,
)
class GraphSpec:
    family: str
    size: int
    seed: int = 0
    consistent: bool = False

    @classmethod
    def parse(cls, text: str, seed: int = 0) -> "GraphSpec":
        """Parses ``family:size[:consistent]``."""
        parts = text.strip().split(":")
        if len(parts) not in (2, 3) or (len(parts) == 3 and parts[2] != "consistent"):
            raise InputError(f"Graph spec '{text}' is not family:size[:consistent]")
        try:
            size = int(parts[1])
        except ValueError as e:
            raise InputError(f"Graph size '{parts[1]}' is not an integer") from e
        return cls(parts[0], size, seed, len(parts) == 3)


def generate_graph(spec: GraphSpec) -> PortLabeledGraph:
    """
    Generates a connected port-labeled graph, deterministic per spec and seed.

    Ports are shuffled per node from the seed; a consistent ring instead gets
    port 1 clockwise and port 2 counter-clockwise at every node.

    Args:
        spec (GraphSpec): Family, size, seed and whether ring labels are consistent.

    Returns:
        PortLabeledGraph: A connected graph of ``spec.size`` nodes.

    Raises:
        InputError: If the family is unknown, the size is below 1, or
                    consistent labels are requested for a family other than ring.
    """
    if spec.family not in FAMILIES:
        raise InputError(f"Unknown graph family '{spec.family}', expected one of {FAMILIES}")
    if spec.size < 1:
        raise InputError(f"Graph size must be at least 1, got {spec.size}")
    if spec.consistent and spec.family != "ring":
        raise InputError("Consistent port labels are only defined for rings")
    rng = random.Random(f"{spec.family}:{spec.size}:{spec.seed}")
    if spec.family == "ring" and spec.consistent and spec.size >= 3:
        n = spec.size
        return PortLabeledGraph.from_lists(
            [[(1, (node + 1) % n, 2), (2, (node - 1) % n, 1)] for node in range(n)],
        )
    shape = _shape(spec, rng)
    return from_networkx(shape, None if spec.consistent else rng)


def _shape(spec: GraphSpec, rng: random.Random) -> nx.Graph:
    n = spec.size
    if n <= 2 or spec.family == "path":
        return nx.path_graph(n)
    if spec.family == "ring":
        return nx.cycle_graph(n)
    if spec.family == "complete":
        return nx.complete_graph(n)
    tree = nx.from_prufer_sequence([rng.randrange(n) for _ in range(n - 2)])
    if spec.family == "random-connected":
        for u, v in itertools.combinations(range(n), 2):
            if not tree.has_edge(u, v) and rng.random() < EXTRA_EDGE_PROBABILITY:
                tree.add_edge(u, v)
    return tree


def from_networkx(shape: nx.Graph, rng: random.Random | None = None) -> PortLabeledGraph:
    """
    Assigns ports 1..deg at each node, in neighbor order or shuffled by ``rng``.

    Args:
        shape (nx.Graph): A simple undirected graph. Nodes are renumbered in sorted order.
        rng (random.Random | None): Shuffles each node's ports when given.

    Returns:
        PortLabeledGraph: The port-labeled version of ``shape``.
    """
    nodes = sorted(shape.nodes)
    index = {node: position for position, node in enumerate(nodes)}
    port_of: dict[tuple[int, int], int] = {}
    for node in nodes:
        neighbors = sorted(index[other] for other in shape.neighbors(node))
        if rng is not None:
            rng.shuffle(neighbors)
        for port, other in enumerate(neighbors, start=1):
            port_of[(index[node], other)] = port
    rows = [
        [(port_of[(u, v)], v, port_of[(v, u)]) for (a, v) in port_of if a == u]
        for u in range(len(nodes))
    ]
    return PortLabeledGraph.from_lists(rows)


def to_networkx(graph: PortLabeledGraph, root: int | None = None) -> nx.MultiDiGraph:
    """One arc per edge end, labeled with its ports; used as an independent isomorphism oracle."""
    digraph = nx.MultiDiGraph()
    for node in range(graph.node_count):
        digraph.add_node(node, root=node == root)
    for node, row in enumerate(graph.adjacency):
        for entry in row:
            digraph.add_edge(node, entry.neighbor, key=entry.port, port=(entry.port, entry.neighbor_port))
    return digraph


def format_graph(graph: PortLabeledGraph) -> str:
    lines = [f"{graph.node_count} {graph.edge_count}"]
    lines.extend(" ".join(f"{e.port}:{e.neighbor}:{e.neighbor_port}" for e in row) for row in graph.adjacency)
    return "\n".join(lines) + "\n"


def parse_graph(text: str) -> PortLabeledGraph:
    """
    Parses the adjacency text format: header ``n m``, then one line per node of
    ``port:neighbor:neighbor_port`` entries.

    Args:
        text (str): The graph text, as written by ``format_graph``.

    Returns:
        PortLabeledGraph: The parsed graph.

    Raises:
        InputError: If the text is malformed or describes an invalid graph.
    """
    lines = text.splitlines()
    if not lines:
        raise InputError("Graph text is empty")
    try:
        n, m = (int(token) for token in lines[0].split())
        rows = [
            [tuple(int(part) for part in token.split(":")) for token in line.split()]
            for line in (lines[1 : n + 1] + [""] * n)[:n]
        ]
    except ValueError as e:
        raise InputError(f"Malformed graph text: {e}") from e
    if any(len(entry) != 3 for row in rows for entry in row):
        raise InputError("Graph entries must be port:neighbor:neighbor_port")
    graph = PortLabeledGraph.from_lists(rows)
    if graph.edge_count != m:
        raise InputError(f"Header announces {m} edges, found {graph.edge_count}")
    return graph


def read_graph(path: Path) -> PortLabeledGraph:
    """Reads a graph file in the adjacency text format."""
    return parse_graph(Path(path).read_text(encoding="utf-8"))


def write_graph(graph: PortLabeledGraph, path: Path) -> None:
    Path(path).write_text(format_graph(graph), encoding="utf-8")
    logger.info(f"Wrote {graph.node_count}-node graph to {path}")
