import dataclasses
import enum
import logging
import sys
from collections.abc import Iterable, Mapping, Sequence

from commons import InputError, Status
from engine import Behavior, Heard, Tick, Utterance
from graphs import RootedMap, canonicalize_map

logger = logging.getLogger(__name__)

BEACON = "beacon"
NEVER = sys.maxsize
OBSERVING_RULES = ("2b", "3b")


def dfs_route(rooted_map: RootedMap) -> tuple[int, ...]:
    """
    Ports of a depth-first walk from the root, smallest port first, returning along each tree edge.

    Args:
        rooted_map (RootedMap): The map to walk.

    Returns:
        tuple[int, ...]: The ports to take in order. The walk visits every node and ends at the
                         root after 2(n-1) moves.
    """
    graph = rooted_map.graph
    visited = {rooted_map.root}
    route: list[int] = []

    def visit(node: int) -> None:
        for entry in graph.adjacency[node]:
            if entry.neighbor not in visited:
                visited.add(entry.neighbor)
                route.append(entry.port)
                visit(entry.neighbor)
                route.append(entry.neighbor_port)

    visit(rooted_map.root)
    return tuple(route)


def route_nodes(rooted_map: RootedMap, route: Sequence[int]) -> tuple[int, ...]:
    """Map node occupied after each prefix of ``route``, starting with the root."""
    nodes = [rooted_map.root]
    for port in route:
        nodes.append(rooted_map.graph.follow(nodes[-1], port)[0])
    return tuple(nodes)


@dataclasses.dataclass(
    frozen=True,
    slots=True,
)
class DispersionMemory:
    robot_id: int
    status: Status = Status.TOBE_SETTLED
    flag: int = 0
    settled_at: Mapping[int, frozenset[int]] = dataclasses.field(default_factory=dict)
    blacklist: frozenset[int] = frozenset()
    map: RootedMap | None = None
    route: tuple[int, ...] = ()
    position: int = 0
    node: int = 0

    def record(self, node: int, robots: Iterable[int]) -> "DispersionMemory":
        settled_at = dict(self.settled_at)
        settled_at[node] = settled_at.get(node, frozenset()) | frozenset(robots)
        return dataclasses.replace(self, settled_at=settled_at)


@dataclasses.dataclass(
    frozen=True,
    slots=True,
)
class NodeSnapshot:
    settled: frozenset[int] = frozenset()
    tobe: frozenset[int] = frozenset()
    flags: frozenset[int] = frozenset()

    @property
    def present(self) -> frozenset[int]:
        return self.settled | self.tobe

    @classmethod
    def from_beacons(cls, heard: Iterable[Heard]) -> "NodeSnapshot":
        settled, tobe, flags = set(), set(), set()
        for message in heard:
            if message.kind != BEACON or len(message.payload) != 2:
                continue
            status, flag = message.payload
            if status == Status.SETTLED:
                settled.add(message.claimed_sender)
            elif status == Status.TOBE_SETTLED:
                tobe.add(message.claimed_sender)
            else:
                continue
            if flag == 1:
                flags.add(message.claimed_sender)
        return cls(frozenset(settled), frozenset(tobe), frozenset(flags))


class ActionKind(enum.StrEnum):
    SETTLE = "settle"
    ADVANCE = "advance"
    WAIT = "wait"


@dataclasses.dataclass(
    frozen=True,
    slots=True,
)
class Action:
    kind: ActionKind
    rule: str
    recorded: frozenset[int] = frozenset()


def _rank(robot_id: int, roll_call: NodeSnapshot) -> int:
    return 1 + sum(1 for other in roll_call.present if other < robot_id)


def _observe(watch: frozenset[int], later: Sequence[NodeSnapshot], rule: str) -> Action:
    """Advance behind any watched robot that settled in a later sub-round, otherwise settle."""
    settled = frozenset(robot for robot in watch if any(robot in snapshot.settled for snapshot in later))
    if settled:
        return Action(ActionKind.ADVANCE, rule, settled)
    return Action(ActionKind.SETTLE, rule)


def decide_at_node(
    memory: DispersionMemory,
    roll_call: NodeSnapshot,
    later: Sequence[NodeSnapshot],
    last_sub_round: int | None = None,
) -> Action:
    """
    Decides what a tobeSettled robot does at the node it just reached.

    ``roll_call`` is what was heard in sub-round 1 and ``later`` what was heard
    in sub-rounds 2, 3, ... of the same round. A robot of rank Y (1 + the number
    of present robots with smaller IDs) decides only once sub-round Y has been
    heard, so every smaller robot has already settled or not. ``last_sub_round``
    caps Y when more robots share a node than there are sub-rounds.

    Args:
        memory (DispersionMemory): The deciding robot's memory, blacklist included.
        roll_call (NodeSnapshot): Beacons heard in sub-round 1.
        later (Sequence[NodeSnapshot]): Beacons heard in each later sub-round so far.
        last_sub_round (int | None): The last sub-round this round will run, if known.

    Returns:
        Action: SETTLE, ADVANCE (with the settled IDs to record) or WAIT, each
                naming the rule that applies.
    """
    me = memory.robot_id
    blacklist = memory.blacklist
    settled = roll_call.settled - {me}
    tobe = roll_call.tobe | {me}
    others = tobe - {me}
    smaller = frozenset(robot for robot in others if robot < me)
    watch: frozenset[int] | None = None
    if not settled:
        if not smaller or others <= blacklist:
            verdict = Action(ActionKind.SETTLE, "1")
        elif smaller <= blacklist:
            verdict = Action(ActionKind.SETTLE, "2a")
        else:
            verdict, watch = Action(ActionKind.WAIT, "2b"), smaller - blacklist
    elif settled <= blacklist:
        candidates = tobe - blacklist
        if me == min(candidates):
            verdict = Action(ActionKind.SETTLE, "3a")
        else:
            verdict, watch = Action(ActionKind.WAIT, "3b"), frozenset(robot for robot in candidates if robot < me)
    else:
        verdict = Action(ActionKind.ADVANCE, "3c", settled - blacklist)

    rank = _rank(me, roll_call)
    if last_sub_round is not None:
        rank = min(rank, last_sub_round)
    if len(later) < rank - 1:
        return Action(ActionKind.WAIT, verdict.rule)
    if watch is not None:
        return _observe(watch, later[: rank - 1], verdict.rule)
    return verdict


def update_blacklist(
    memory: DispersionMemory,
    snapshot: NodeSnapshot,
    node: int,
    silent: Iterable[int] = (),
) -> DispersionMemory:
    """
    Blacklists every robot seen here that was recorded as settled at another
    node, plus every robot that stayed silent when it had to speak.

    Args:
        memory (DispersionMemory): The robot's memory, holding where it saw robots settled.
        snapshot (NodeSnapshot): The robots present at the current node.
        node (int): The current map node.
        silent (Iterable[int]): Robots heard at roll call that missed a later beacon.

    Returns:
        DispersionMemory: The memory with the grown blacklist, or ``memory`` itself when
                          nobody new was caught.
    """
    elsewhere = frozenset().union(*(robots for where, robots in memory.settled_at.items() if where != node))
    caught = ((snapshot.present & elsewhere) | frozenset(silent)) - {memory.robot_id}
    if caught <= memory.blacklist:
        return memory
    return dataclasses.replace(memory, blacklist=memory.blacklist | caught)


class DispersionPhase(Behavior):
    """
    Dispersion-Using-Map for one robot: walk the map depth first and stop at the
    first node where the settling rules allow it.

    Every robot at a node beacons (status, flag) in each sub-round that runs.
    A robot heard at roll call but silent later has missed a mandated message.
    """

    def __init__(self, robot_id: int, rooted_map: RootedMap | None, start: int) -> None:
        route = dfs_route(rooted_map) if rooted_map is not None else ()
        self.nodes = route_nodes(rooted_map, route) if rooted_map is not None else (0,)
        self.memory = DispersionMemory(robot_id, map=rooted_map, route=route, node=self.nodes[0])
        self.start = start
        self.exhausted = False
        self.settled_round: int | None = None
        self.steps = 0
        self._visited: set[int] = set()
        self._round = -1
        self._roll: NodeSnapshot | None = None
        self._later: list[NodeSnapshot] = []
        self._deciding = False

    @property
    def label(self) -> str:
        return "dispersion"

    @property
    def status(self) -> str:
        return str(self.memory.status)

    @property
    def finished(self) -> bool:
        return self.memory.status is Status.SETTLED or self.exhausted

    def wake_round(self, current: int) -> int:
        if current < self.start:
            return self.start
        return NEVER if self.finished else current

    def _sync(self, current: int) -> None:
        if current == self._round:
            return
        self._round = current
        self._roll = None
        self._later = []
        self._deciding = not self.finished and self.memory.node not in self._visited

    def wants(self, tick: Tick) -> bool:
        if tick.round < self.start or self.finished:
            return False
        self._sync(tick.round)
        return tick.sub_round == 1 or self._deciding

    def speak(self, tick: Tick) -> list[Utterance]:
        if tick.round < self.start:
            return []
        self._sync(tick.round)
        return [Utterance(BEACON, (str(self.memory.status), self.memory.flag))]

    def hear(self, tick: Tick, heard: tuple[Heard, ...]) -> None:
        if tick.round < self.start:
            return
        self._sync(tick.round)
        snapshot = NodeSnapshot.from_beacons(heard)
        silent: frozenset[int] = frozenset()
        if tick.sub_round == 1:
            self._roll = snapshot
        elif self._roll is not None:
            silent = self._roll.present - snapshot.present
            self._later.append(snapshot)
        updated = update_blacklist(self.memory, snapshot, self.memory.node, silent)
        for robot in sorted(updated.blacklist - self.memory.blacklist):
            tick.note("blacklist", f"{robot}")
        self.memory = updated
        if self._deciding and self._roll is not None:
            self._decide(tick, self._roll)

    def _decide(self, tick: Tick, roll_call: NodeSnapshot) -> None:
        action = decide_at_node(self.memory, roll_call, self._later, tick.n)
        if action.kind is ActionKind.WAIT:
            if action.rule in OBSERVING_RULES and self.memory.flag == 0:
                self.memory = dataclasses.replace(self.memory, flag=1)
            return
        node = self.memory.node
        self._deciding = False
        self._visited.add(node)
        if action.kind is ActionKind.SETTLE:
            self.memory = dataclasses.replace(self.memory, status=Status.SETTLED)
            self.settled_round = tick.round
            tick.note("settle", f"rule {action.rule} node {node}")
            return
        self.memory = self.memory.record(node, action.recorded)
        recorded = ",".join(str(robot) for robot in sorted(action.recorded))
        tick.note("advance", f"rule {action.rule} node {node} record {recorded}")

    def move(self, tick: Tick) -> int | None:
        if tick.round < self.start or self.finished:
            return None
        self._sync(tick.round)
        if self._deciding:
            return None
        if self.memory.position >= len(self.memory.route):
            self.exhausted = True
            tick.note("exhausted", f"{len(self.memory.route)} steps")
            return None
        port = self.memory.route[self.memory.position]
        position = self.memory.position + 1
        self.memory = dataclasses.replace(self.memory, position=position, node=self.nodes[position], flag=0)
        self.steps += 1
        return port


def assign_by_rank(rooted_map: RootedMap, rank: int, wrap: bool = False) -> int:
    """
    Returns the rank-th node (1-based) of the map's canonical numbering.

    With ``wrap`` a rank beyond the node count cycles back to the first node.

    Args:
        rooted_map (RootedMap): The canonical map.
        rank (int): The robot's 1-based rank among the mustered IDs.
        wrap (bool): Whether ranks beyond the node count cycle.

    Returns:
        int: The map node to settle at.

    Raises:
        InputError: If rank is below 1, or beyond the node count without ``wrap``.
    """
    count = rooted_map.node_count
    if rank < 1 or (rank > count and not wrap):
        raise InputError(f"Rank {rank} outside [1, {count}]")
    return (rank - 1) % count


class RankSettlementPhase(Behavior):
    """Walks to the node matching the robot's rank along a shortest map route and settles there."""

    def __init__(self, robot_id: int, rooted_map: RootedMap | None, rank: int, start: int, wrap: bool = False) -> None:
        self.robot_id = robot_id
        self.start = start
        self.settled = False
        self.exhausted = rooted_map is None
        self.route: tuple[int, ...] = ()
        self.position = 0
        self.target = -1
        if rooted_map is not None:
            canonical = canonicalize_map(rooted_map)
            self.target = assign_by_rank(canonical, rank, wrap)
            self.route = canonical.shortest_route(self.target)

    @property
    def label(self) -> str:
        return "rank-settlement"

    @property
    def status(self) -> str:
        return str(Status.SETTLED if self.settled else Status.TOBE_SETTLED)

    @property
    def finished(self) -> bool:
        return self.settled or self.exhausted

    def wake_round(self, current: int) -> int:
        if current < self.start:
            return self.start
        return NEVER if self.finished else current

    def move(self, tick: Tick) -> int | None:
        if tick.round < self.start or self.finished:
            return None
        if self.position < len(self.route):
            self.position += 1
            return self.route[self.position - 1]
        self.settled = True
        tick.note("settle", f"rank node {self.target}")
        return None
