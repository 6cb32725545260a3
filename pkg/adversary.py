import dataclasses
import functools
import logging
import random
from collections import deque
from typing import ClassVar

from commons import ConfigError, Honesty, Status, ceil_div, is_dispersion_feasible
from dispersion import BEACON, RankSettlementPhase
from engine import Interceptor, Outcome, Robot, SimState, Tick, Utterance, run
from graphs import GraphSpec, PortLabeledGraph, RootedMap, generate_graph
from mapping import AGENT_ROLE, INSTRUCT, MAP, TOKEN, TOKEN_ROLE

logger = logging.getLogger(__name__)

DISPERSION = "dispersion"
MAP_FINDING = "map-finding"


@dataclasses.dataclass(
    frozen=True,
    slots=True,
)
class Arena:
    """What the colluding Byzantine robots know about a run."""

    seed: int
    n: int
    ids: tuple[int, ...]
    byzantine_ids: tuple[int, ...]

    @property
    def honest_ids(self) -> tuple[int, ...]:
        return tuple(robot_id for robot_id in self.ids if robot_id not in self.byzantine_ids)


@functools.cache
def garbage_key(n: int) -> tuple:
    """The wrong map every liar agrees on: a path one node longer than the graph."""
    return RootedMap(generate_graph(GraphSpec("path", n + 1))).key


class AdversaryStrategy(Interceptor):
    """
    A Byzantine behavior. The robot's inner program is the honest one; the
    strategy rewrites what it says, overrides where it goes and picks where
    it stands when the honest robots are gathered.
    """

    name: ClassVar[str] = "passive"
    strong_only: ClassVar[bool] = False
    description: ClassVar[str] = "follows the protocol"

    def __init__(self) -> None:
        self.rng = random.Random(0)
        self.arena = Arena(0, 1, (), ())
        self.robot_id = 0
        self.robot: Robot | None = None
        self.phase = ""

    @property
    def applicability(self) -> str:
        return "strong" if self.strong_only else "weak"

    def bind(self, robot: Robot, arena: Arena) -> "AdversaryStrategy":
        self.rng = random.Random(f"{arena.seed}:{robot.handle}:{self.name}")
        self.arena = arena
        self.robot_id = robot.robot_id
        self.robot = robot
        return self

    def random_port(self, tick: Tick) -> int | None:
        return self.rng.randint(1, tick.degree) if tick.degree else None

    def wants(self, tick: Tick, inner: bool) -> bool:
        self.phase = tick.phase
        return inner


class Silent(AdversaryStrategy):
    name = "silent"
    description = "answers the roll call, then withholds every mandated message"

    def rewrite(self, tick: Tick, utterances: list[Utterance]) -> list[Utterance]:
        if tick.phase == DISPERSION and tick.sub_round == 1:
            return utterances
        return []


class FakeSettle(AdversaryStrategy):
    name = "fake-settle"
    description = "claims Settled at every node while wandering"

    def wake(self, tick_round: int, inner: int) -> int:
        return tick_round if self.phase == DISPERSION else inner

    def rewrite(self, tick: Tick, utterances: list[Utterance]) -> list[Utterance]:
        self.phase = tick.phase
        return [Utterance(BEACON, (str(Status.SETTLED), 0)) if u.kind == BEACON else u for u in utterances]

    def override_move(self, tick: Tick, port: int | None) -> int | None:
        self.phase = tick.phase
        return self.random_port(tick) if tick.phase == DISPERSION else port


class RelocateAfterSettle(AdversaryStrategy):
    name = "relocate-after-settle"
    description = "settles like an honest robot, then keeps moving"

    def _settled(self) -> bool:
        return self.robot is not None and self.robot.program.status == Status.SETTLED

    def wake(self, tick_round: int, inner: int) -> int:
        return tick_round if self._settled() else inner

    def override_move(self, tick: Tick, port: int | None) -> int | None:
        if self._settled() and tick.phase == DISPERSION:
            return self.random_port(tick)
        return port


class MapLiar(AdversaryStrategy):
    name = "map-liar"
    description = "shares the agreed garbage map and never shows up as a token"

    def rewrite(self, tick: Tick, utterances: list[Utterance]) -> list[Utterance]:
        lied = []
        for utterance in utterances:
            if utterance.kind == TOKEN:
                continue
            if utterance.kind == MAP:
                utterance = Utterance(MAP, (*utterance.payload[:2], garbage_key(self.arena.n)))
            lied.append(utterance)
        return lied


class TokenSaboteur(AdversaryStrategy):
    name = "token-saboteur"
    description = "issues wrong token instructions and never moves while exploring"

    def rewrite(self, tick: Tick, utterances: list[Utterance]) -> list[Utterance]:
        sabotaged = []
        for utterance in utterances:
            if utterance.kind == INSTRUCT and len(utterance.payload) == 3:
                tag, role, port = utterance.payload
                wrong = port % tick.degree + 1 if tick.degree else port
                utterance = Utterance(INSTRUCT, (tag, role, wrong))
            sabotaged.append(utterance)
        return sabotaged

    def override_move(self, tick: Tick, port: int | None) -> int | None:
        return None if tick.phase == MAP_FINDING else port


class GroupDefector(AdversaryStrategy):
    name = "group-defector"
    description = "speaks for the other party in every agent/token run"

    def rewrite(self, tick: Tick, utterances: list[Utterance]) -> list[Utterance]:
        flipped = {AGENT_ROLE: TOKEN_ROLE, TOKEN_ROLE: AGENT_ROLE}
        defected = []
        for utterance in utterances:
            payload = utterance.payload
            if utterance.kind in (INSTRUCT, TOKEN, MAP) and len(payload) >= 2 and payload[1] in flipped:
                utterance = Utterance(utterance.kind, (payload[0], flipped[payload[1]], *payload[2:]))
            defected.append(utterance)
        return defected


class IdSpoof(AdversaryStrategy):
    name = "id-spoof"
    strong_only = True
    description = "hides behind honest IDs and sends false instructions under them"

    def _victim(self, pool: tuple[int, ...]) -> int:
        return self.rng.choice(pool) if pool else self.robot_id

    def wants(self, tick: Tick, inner: bool) -> bool:
        self.phase = tick.phase
        return inner or (tick.phase == MAP_FINDING and tick.sub_round <= 2)

    def rewrite(self, tick: Tick, utterances: list[Utterance]) -> list[Utterance]:
        honest = self.arena.honest_ids
        agents, tokens = honest[: len(honest) // 2], honest[len(honest) // 2 :]
        spoofed = [
            Utterance(u.kind, u.payload, self._victim(honest)) for u in utterances if u.kind not in (TOKEN, INSTRUCT)
        ]
        if tick.phase == MAP_FINDING and tick.sub_round == 1:
            spoofed.append(Utterance(TOKEN, (0, TOKEN_ROLE), self._victim(tokens)))
        if tick.phase == MAP_FINDING and tick.sub_round == 2:
            spoofed.append(Utterance(INSTRUCT, (0, AGENT_ROLE, self.random_port(tick) or 1), self._victim(agents)))
        return spoofed


class Outsider(AdversaryStrategy):
    name = "outsider"
    description = "skips the muster, walks in and issues orders under an ID nobody mustered"

    def __init__(self) -> None:
        super().__init__()
        self.route: deque[int] = deque()
        self.noisy_rounds = 0
        self.first_round: int | None = None

    def placement(self, graph: PortLabeledGraph, gather_node: int, location: int) -> int:
        distance = {gather_node: 0}
        queue = deque([gather_node])
        while queue:
            node = queue.popleft()
            for entry in graph.adjacency[node]:
                if entry.neighbor not in distance:
                    distance[entry.neighbor] = distance[node] + 1
                    queue.append(entry.neighbor)
        far = max(distance, key=lambda node: (distance[node], -node))
        self.route = deque(RootedMap(graph, far).shortest_route(gather_node))
        self.noisy_rounds = len(self.route) + 2 * graph.node_count
        return far

    def _active(self, tick_round: int) -> bool:
        return self.first_round is not None and tick_round < self.first_round + self.noisy_rounds

    def wake(self, tick_round: int, inner: int) -> int:
        return tick_round if self._active(tick_round) else inner

    def wants(self, tick: Tick, inner: bool) -> bool:
        self.phase = tick.phase
        if tick.phase == MAP_FINDING and self.first_round is None:
            self.first_round = tick.round
        return inner or (self._active(tick.round) and tick.sub_round <= 2)

    def rewrite(self, tick: Tick, utterances: list[Utterance]) -> list[Utterance]:
        if not self._active(tick.round):
            return utterances
        if tick.sub_round == 1:
            return [Utterance(TOKEN, (0, TOKEN_ROLE))]
        if tick.sub_round == 2:
            return [Utterance(INSTRUCT, (0, AGENT_ROLE, self.random_port(tick) or 1))]
        return []

    def override_move(self, tick: Tick, port: int | None) -> int | None:
        if not self._active(tick.round):
            return port
        return self.route.popleft() if self.route else None


class Replay(AdversaryStrategy):
    """Repeats, round by round, the moves a robot made in an earlier run."""

    name = "replay"
    description = "acts exactly like an honest robot of a baseline run"

    def __init__(self, moves: dict[int, int]) -> None:
        super().__init__()
        self.moves = moves

    def override_move(self, tick: Tick, port: int | None) -> int | None:
        return self.moves.get(tick.round)


STRATEGIES: tuple[type[AdversaryStrategy], ...] = (
    AdversaryStrategy,
    Silent,
    FakeSettle,
    RelocateAfterSettle,
    MapLiar,
    TokenSaboteur,
    GroupDefector,
    IdSpoof,
    Outsider,
)


def strategy_catalog() -> list[AdversaryStrategy]:
    return [strategy() for strategy in STRATEGIES]


def get_strategy(name: str, honesty: Honesty) -> AdversaryStrategy:
    """
    Creates a fresh strategy by name for one Byzantine robot.

    Raises:
        ConfigError: If the name is unknown, the robot is honest, or a strong-only
                     strategy is requested for a weak Byzantine robot.
    """
    by_name = {strategy.name: strategy for strategy in STRATEGIES}
    if name not in by_name:
        raise ConfigError(f"Unknown strategy '{name}', expected one of {sorted(by_name)}")
    if not honesty.byzantine:
        raise ConfigError(f"Strategy '{name}' cannot be given to an honest robot")
    strategy = by_name[name]
    if strategy.strong_only and honesty is not Honesty.STRONG:
        raise ConfigError(f"Strategy '{name}' needs a strong Byzantine robot, got {honesty}")
    return strategy()


@dataclasses.dataclass(
    frozen=True,
    slots=True,
)
class ImpossibilityDemo:
    baseline: Outcome
    replay: Outcome
    honest_ids: tuple[int, ...]
    byzantine_ids: tuple[int, ...]
    crowded_node: int


def _rank_settlement_state(graph: PortLabeledGraph, ids: tuple[int, ...]) -> SimState:
    rooted = RootedMap(graph, 0)
    robots = []
    for handle, robot_id in enumerate(ids):
        robot = Robot(handle, robot_id, Honesty.HONEST, 0)
        robot.program = RankSettlementPhase(robot_id, rooted, handle + 1, 0, wrap=True)
        robots.append(robot)
    return SimState(graph, robots)


def replay_impossibility_demo(k: int, n: int, f: int, graph: PortLabeledGraph | None = None) -> ImpossibilityDemo:
    """
    Builds an executable witness that k robots cannot disperse on n nodes when
    f of them are weak Byzantine and ceil(k/n) > ceil((k-f)/n).

    A baseline run with no Byzantine robots settles robots by rank, ceil(k/n)
    of them on node 0. The replay keeps those co-settlers honest and lets f
    robots from elsewhere turn Byzantine while copying their baseline moves, so
    honest robots see exactly the baseline and crowd node 0 again.

    Raises:
        ConfigError: If the ceiling condition does not hold, or too few honest
                     robots remain to crowd a node.
    """
    if is_dispersion_feasible(k, n, f):
        raise ConfigError(f"ceil({k}/{n}) <= ceil({k - f}/{n}): nothing to demonstrate")
    crowd = min(ceil_div(k, n), k - f)
    if crowd <= ceil_div(k - f, n):
        raise ConfigError(f"Only {k - f} honest robots remain, too few to crowd a node")
    graph = graph if graph is not None else generate_graph(GraphSpec("ring", n, consistent=n >= 3))
    if graph.node_count != n:
        raise ConfigError(f"Graph has {graph.node_count} nodes, expected {n}")
    ids = tuple(range(1, k + 1))
    budget = 2 * n + 2

    baseline = run(_rank_settlement_state(graph, ids), budget)
    crowded = sorted(robot.handle for robot in baseline.state.robots if robot.location == 0)
    elsewhere = sorted(robot.handle for robot in baseline.state.robots if robot.location != 0)
    byzantine = set(elsewhere[:f])
    if len(byzantine) < f:
        byzantine |= set(crowded[crowd:][: f - len(byzantine)])
    moves: dict[int, dict[int, int]] = {}
    for record in baseline.trace.records:
        if record.event == "move":
            handle = int(record.robot[1:])
            moves.setdefault(handle, {})[record.round] = int(record.detail.split(">")[0])

    replay_state = _rank_settlement_state(graph, ids)
    arena = Arena(0, n, ids, tuple(ids[h] for h in sorted(byzantine)))
    for robot in replay_state.robots:
        if robot.handle in byzantine:
            robot.honesty = Honesty.WEAK
            robot.strategy = Replay(moves.get(robot.handle, {})).bind(robot, arena)
    replay = run(replay_state, budget)
    logger.info(f"Impossibility replay for k={k} n={n} f={f}: {crowd} honest robots crowd node 0")
    return ImpossibilityDemo(
        baseline=baseline,
        replay=replay,
        honest_ids=tuple(robot.robot_id for robot in replay.state.honest()),
        byzantine_ids=arena.byzantine_ids,
        crowded_node=0,
    )
