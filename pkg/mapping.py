import dataclasses
import enum
import logging
from collections import deque
from collections.abc import Generator, Iterable

from commons import ExplorationError, InputError, NoMajorityError, ceil_div, digest
from engine import Behavior, Heard, SimState, Tick, Utterance, run
from graphs import Port, PortLabeledGraph, RootedMap

logger = logging.getLogger(__name__)

MUSTER = "muster"
TOKEN = "token"
INSTRUCT = "instruct"
MAP = "map"
AGENT_ROLE = "agent"
TOKEN_ROLE = "token"
DONE_PORT = 0

type MapKey = tuple[tuple[tuple[int, int, int], ...], ...]


@dataclasses.dataclass(
    frozen=True,
    slots=True,
)
class Thresholds:
    """
    How much agreement a party needs before it is believed.

    ``instruction`` is the number of distinct agent-party IDs a token needs behind a move;
    ``recognition`` the number of distinct token-party IDs an agent needs to see the token.
    """

    instruction: int
    recognition: int

    @classmethod
    def pairs(cls) -> "Thresholds":
        return cls(1, 1)

    @classmethod
    def three_group(cls, k: int) -> "Thresholds":
        return cls(k // 6 + 1, k // 3 + 1)

    @classmethod
    def majority(cls, agents: int, tokens: int) -> "Thresholds":
        return cls(agents // 2 + 1, tokens // 2 + 1)

    @classmethod
    def strong(cls, n: int) -> "Thresholds":
        quarter = max(1, n // 4)
        return cls(quarter, quarter)


@dataclasses.dataclass(
    frozen=True,
    slots=True,
)
class GroupAssignment:
    ids: tuple[int, ...]
    groups: tuple[tuple[int, ...], ...]

    @classmethod
    def three(cls, ids: Iterable[int]) -> "GroupAssignment":
        ordered = tuple(sorted(set(ids)))
        third = len(ordered) // 3
        if third == 0:
            raise InputError(f"Three groups need at least 3 robots, got {len(ordered)}")
        return cls(ordered, (ordered[:third], ordered[third : 2 * third], ordered[2 * third :]))

    @classmethod
    def two(cls, ids: Iterable[int]) -> "GroupAssignment":
        ordered = tuple(sorted(set(ids)))
        half = len(ordered) // 2
        if half == 0:
            raise InputError(f"Two groups need at least 2 robots, got {len(ordered)}")
        return cls(ordered, (ordered[:half], ordered[half:]))

    def rank(self, robot_id: int) -> int:
        return self.ids.index(robot_id) + 1

    def group_of(self, robot_id: int) -> int:
        for index, members in enumerate(self.groups):
            if robot_id in members:
                return index
        raise InputError(f"ID {robot_id} is not in the assignment")


@dataclasses.dataclass(
    frozen=True,
    slots=True,
)
class ScheduleStage:
    halves: tuple[tuple[tuple[int, ...], tuple[int, ...]], ...]
    slots: tuple[tuple[tuple[int, int], ...], ...]


@dataclasses.dataclass(
    frozen=True,
    slots=True,
)
class PairingSchedule:
    stages: tuple[ScheduleStage, ...]

    @property
    def slot_count(self) -> int:
        return sum(len(stage.slots) for stage in self.stages)

    def slots(self) -> list[tuple[tuple[int, int], ...]]:
        return [slot for stage in self.stages for slot in stage.slots]

    def pairs(self) -> set[frozenset[int]]:
        return {frozenset(pair) for slot in self.slots() for pair in slot}


def pairing_schedule(ids: Iterable[int]) -> PairingSchedule:
    """
    Builds the recursive-halving schedule in which every two IDs meet once.

    Each stage splits every group G into G0 (the larger half, ceil(|G|/2) IDs)
    and G1 (padded with dummies to the same size). In slot j the x-th member of
    G0 is the agent of the (x+j mod |G0|)-th member of G1; dummy pairings are idle.

    Raises:
        InputError: If ids is empty or holds duplicates.
    """
    ordered = sorted(ids)
    if not ordered:
        raise InputError("A pairing schedule needs at least one ID")
    if len(set(ordered)) != len(ordered):
        raise InputError("Robot IDs must be distinct")
    stages: list[ScheduleStage] = []
    groups = [tuple(ordered)]
    while any(len(group) > 1 for group in groups):
        halves = tuple(
            (group[: ceil_div(len(group), 2)], group[ceil_div(len(group), 2) :]) for group in groups if len(group) > 1
        )
        slot_count = max(len(low) for low, _ in halves)
        slots = []
        for j in range(slot_count):
            pairs = []
            for low, high in halves:
                if j >= len(low):
                    continue
                for x, agent in enumerate(low):
                    y = (x + j) % len(low)
                    if y < len(high):
                        pairs.append((agent, high[y]))
            slots.append(tuple(pairs))
        stages.append(ScheduleStage(halves, tuple(slots)))
        groups = [half for pair in halves for half in pair]
    return PairingSchedule(tuple(stages))


@dataclasses.dataclass(slots=True)
class MapBallot:
    tallies: dict[MapKey, int] = dataclasses.field(default_factory=dict)
    failures: int = 0

    @property
    def runs(self) -> int:
        return sum(self.tallies.values()) + self.failures

    def add(self, key: MapKey | None) -> None:
        if key is None:
            self.failures += 1
        else:
            self.tallies[key] = self.tallies.get(key, 0) + 1

    def summary(self) -> str:
        entries = sorted(f"{digest(key)}:{count}" for key, count in self.tallies.items())
        return ",".join([*entries, f"failure:{self.failures}"])


def majority_map(ballot: MapBallot) -> RootedMap:
    """
    Returns the map backed by strictly more than half of the runs, failures included.

    Raises:
        NoMajorityError: If the ballot is empty or no map has a strict majority.
    """
    if ballot.runs == 0:
        raise NoMajorityError("Ballot is empty")
    key, count = max(ballot.tallies.items(), key=lambda item: item[1], default=(None, 0))
    if key is None or 2 * count <= ballot.runs:
        raise NoMajorityError(f"No strict majority in ballot {ballot.summary()}")
    return RootedMap.from_key(key)


@dataclasses.dataclass(
    frozen=True,
    slots=True,
)
class Order:
    move: int | None
    escort: bool = False


@dataclasses.dataclass(
    frozen=True,
    slots=True,
)
class Sight:
    token_seen: bool
    entry_port: int | None
    degree: int


type Steps = Generator[Order, Sight, Sight]


def _walk(ports: Iterable[int], escort: bool, sight: Sight) -> Steps:
    for port in ports:
        sight = yield Order(port, escort)
    return sight


def _tour(children: list[list[tuple[int, int, int]]], node: int, sight: Sight, seen: list[int]) -> Steps:
    if sight.token_seen:
        seen.append(node)
    for port, child, back in children[node]:
        sight = yield Order(port)
        sight = yield from _tour(children, child, sight, seen)
        sight = yield Order(back)
    return sight


def token_exploration(n: int, root_degree: int) -> Generator[Order, Sight, RootedMap]:
    """
    Agent side of map construction with a movable token.

    Every unresolved (node, port) pair is settled the same way: escort the token
    through it, walk home alone, tour the known tree looking for the token, then
    fetch it. A sighting at a known node closes a cycle; no sighting means a new node.
    Between resolutions agent and token both stand on the start node.

    The generator is primed with ``next`` and then sent one Sight per round,
    answering with that round's Order.

    Raises:
        ExplorationError: If sightings contradict each other or more than n nodes turn up.
    """
    sight = yield Order(None)
    degrees = [root_degree]
    paths: list[tuple[int, ...]] = [()]
    backs: list[tuple[int, ...]] = [()]
    children: list[list[tuple[int, int, int]]] = [[]]
    links: dict[tuple[int, int], tuple[int, int]] = {}
    frontier = deque((0, port) for port in range(1, root_degree + 1))
    while frontier:
        node, port = frontier.popleft()
        sight = yield from _walk((*paths[node], port), True, sight)
        entry, degree = sight.entry_port, sight.degree
        if entry is None:
            raise ExplorationError("Escort ended without an entry port")
        sight = yield from _walk((entry, *backs[node]), False, sight)
        seen: list[int] = []
        sight = yield from _tour(children, 0, sight, seen)
        if len(seen) > 1:
            raise ExplorationError(f"Token seen at {len(seen)} known nodes at once")
        if seen:
            target = seen[0]
            if degrees[target] != degree or (target, entry) not in frontier:
                raise ExplorationError(f"Token sighting at node {target} contradicts port {entry}")
            frontier.remove((target, entry))
        else:
            target = len(degrees)
            if target + 1 > n:
                raise ExplorationError(f"Exploration found more than {n} nodes")
            degrees.append(degree)
            paths.append((*paths[node], port))
            backs.append((entry, *backs[node]))
            children[node].append((port, target, entry))
            children.append([])
            frontier.extend((target, other) for other in range(1, degree + 1) if other != entry)
        links[(node, port)] = (target, entry)
        links[(target, entry)] = (node, port)
        sight = yield from _walk(paths[target], False, sight)
        if not sight.token_seen:
            raise ExplorationError(f"Token missing when fetched from node {target}")
        sight = yield from _walk(backs[target], True, sight)
    adjacency = tuple(
        tuple(Port(port, *links[(node, port)]) for port in range(1, degree + 1)) for node, degree in enumerate(degrees)
    )
    graph = PortLabeledGraph(adjacency)
    try:
        graph.validate()
    except InputError as e:
        raise ExplorationError(f"Explored map is inconsistent: {e}") from e
    return RootedMap(graph, 0)


class TokenExplorer:
    def __init__(self, n: int, root_degree: int) -> None:
        self._steps = token_exploration(n, root_degree)
        next(self._steps)
        self.result: RootedMap | None = None

    def step(self, sight: Sight) -> Order | None:
        """Returns this round's order, or None once the map is complete."""
        try:
            return self._steps.send(sight)
        except StopIteration as stop:
            self.result = stop.value
            return None


@dataclasses.dataclass(
    frozen=True,
    slots=True,
)
class RunSpec:
    tag: int
    agents: frozenset[int]
    tokens: frozenset[int]
    thresholds: Thresholds

    def role_of(self, robot_id: int) -> str | None:
        if robot_id in self.agents:
            return AGENT_ROLE
        if robot_id in self.tokens:
            return TOKEN_ROLE
        return None


class Plan:
    """Which agent/token runs happen in which window, derived from the mustered IDs."""

    name = "plan"

    def windows(self, ids: tuple[int, ...], n: int) -> list[list[RunSpec]]:
        raise NotImplementedError

    def window_length(self, t2: int) -> int:
        """Rounds per window: T2 to explore, T2 to walk home and one to share."""
        return 2 * t2 + 1


class PairwisePlan(Plan):
    name = "pairwise"

    def window_length(self, t2: int) -> int:
        """Pairing slots last exactly T2 rounds."""
        return t2

    def windows(self, ids: tuple[int, ...], n: int) -> list[list[RunSpec]]:
        result: list[list[RunSpec]] = []
        tag = 0
        for slot in pairing_schedule(ids).slots():
            runs = []
            for agent, token in slot:
                runs.append(RunSpec(tag, frozenset({agent}), frozenset({token}), Thresholds.pairs()))
                tag += 1
            result.append(runs)
        return result


class ThreeGroupPlan(Plan):
    name = "three-group"

    def windows(self, ids: tuple[int, ...], n: int) -> list[list[RunSpec]]:
        assignment = GroupAssignment.three(ids)
        thresholds = Thresholds.three_group(len(assignment.ids))
        everyone = frozenset(assignment.ids)
        return [
            [RunSpec(index, frozenset(group), everyone - frozenset(group), thresholds)]
            for index, group in enumerate(assignment.groups)
        ]


class TwoGroupPlan(Plan):
    def __init__(self, strong: bool = False) -> None:
        self.strong = strong
        self.name = "strong-two-group" if strong else "two-group"

    def windows(self, ids: tuple[int, ...], n: int) -> list[list[RunSpec]]:
        assignment = GroupAssignment.two(ids)
        agents, tokens = assignment.groups
        thresholds = Thresholds.strong(n) if self.strong else Thresholds.majority(len(agents), len(tokens))
        return [[RunSpec(0, frozenset(agents), frozenset(tokens), thresholds)]]


class SingleRunPlan(Plan):
    name = "single-run"

    def __init__(self, agents: Iterable[int], tokens: Iterable[int], thresholds: Thresholds) -> None:
        self.run = RunSpec(0, frozenset(agents), frozenset(tokens), thresholds)

    def windows(self, ids: tuple[int, ...], n: int) -> list[list[RunSpec]]:
        return [[self.run]]


class Role(enum.StrEnum):
    AGENT = AGENT_ROLE
    TOKEN = TOKEN_ROLE
    IDLE = "idle"


class Moment(enum.Enum):
    BEFORE = enum.auto()
    MUSTER = enum.auto()
    EXPLORE = enum.auto()
    RETURN = enum.auto()
    SHARE = enum.auto()
    AFTER = enum.auto()


class MapFindingPhase(Behavior):
    """
    One robot's part in a map-finding phase.

    Round 0 is the muster in which the gathered robots learn each other's IDs.
    Then every window of the plan's length runs its agent/token pairings: the
    first half (rounded down) explores, the walk home retraces the rest, and the
    last round is the one in which agents share their maps. Window 0 loses its
    first round to the muster.
    """

    def __init__(self, robot_id: int, n: int, plan: Plan, t2: int, start: int) -> None:
        if t2 < 1:
            raise InputError(f"T2 must be positive, got {t2}")
        if plan.window_length(t2) < 3:
            raise InputError(f"A {plan.name} window of {plan.window_length(t2)} rounds leaves no time to explore")
        self.robot_id = robot_id
        self.n = n
        self.plan = plan
        self.t2 = t2
        self.start = start
        self.ids: tuple[int, ...] | None = None
        self.runs: list[list[RunSpec]] = []
        self.ballot = MapBallot()
        self.result: RootedMap | None = None
        self.flagged: set[int] = set()
        self.closed = False
        self._window = -1
        self._run: RunSpec | None = None
        self._role = Role.IDLE
        self._explorer: TokenExplorer | None = None
        self._exploring = False
        self._shared = False
        self._outcome: MapKey | None = None
        self._order: Order | None = None
        self._announce_done = False
        self._stack: list[int] = []
        self._last_port: int | None = None
        self._last_entry: int | None = None
        self._instructions: dict[int, set[int]] = {}

    @property
    def label(self) -> str:
        return "map-finding"

    @property
    def finished(self) -> bool:
        return self.closed

    @property
    def window_length(self) -> int:
        return self.plan.window_length(self.t2)

    @property
    def explore_rounds(self) -> int:
        return (self.window_length - 1) // 2

    @property
    def end(self) -> int:
        return self.start + max(1, len(self.runs) * self.window_length)

    def poll(self, current: int) -> None:
        """Closes the phase once its last window is over, for robots idle at the final share."""
        self._sync(current)

    def _moment(self, current: int) -> Moment:
        relative = current - self.start
        if relative < 0:
            return Moment.BEFORE
        if relative == 0:
            return Moment.MUSTER
        if self.ids is None:
            return Moment.AFTER
        window, offset = divmod(relative, self.window_length)
        if window >= len(self.runs):
            return Moment.AFTER
        if offset == self.window_length - 1:
            return Moment.SHARE
        return Moment.EXPLORE if offset < self.explore_rounds else Moment.RETURN

    def _sync(self, current: int) -> Moment:
        moment = self._moment(current)
        if moment in (Moment.EXPLORE, Moment.RETURN, Moment.SHARE):
            window = (current - self.start) // self.window_length
            if window != self._window:
                self._begin(window)
        if moment is not Moment.EXPLORE and self._exploring:
            self._stop(None)
        if moment is Moment.AFTER and not self.closed:
            self._close()
        return moment

    def _begin(self, window: int) -> None:
        self._window = window
        self._run = next((spec for spec in self.runs[window] if spec.role_of(self.robot_id)), None)
        self._role = Role(self._run.role_of(self.robot_id)) if self._run else Role.IDLE
        self._explorer = None
        self._exploring = self._role is not Role.IDLE
        self._shared = False
        self._outcome = None
        self._order = None
        self._announce_done = False

    def _stop(self, outcome: MapKey | None) -> None:
        self._exploring = False
        self._order = None
        self._outcome = outcome

    def _close(self) -> None:
        self.closed = True
        if self.ballot.runs == 0:
            return
        try:
            self.result = majority_map(self.ballot)
        except NoMajorityError as e:
            logger.info(f"Robot {self.robot_id} found no majority map: {e}")

    def _trusted(self, tick: Tick, heard: tuple[Heard, ...]) -> list[Heard]:
        if self.ids is None:
            return list(heard)
        trusted = []
        for message in heard:
            if message.claimed_sender not in self.ids:
                if message.claimed_sender not in self.flagged:
                    self.flagged.add(message.claimed_sender)
                    tick.note("flag", f"{message.claimed_sender} outsider")
                continue
            trusted.append(message)
        return trusted

    def _from_party(self, tick: Tick, message: Heard, kind: str) -> bool:
        """True for a message of ``kind`` tagged with the current run and sent by the right party."""
        run = self._run
        if run is None or message.kind != kind or not message.payload or message.payload[0] != run.tag:
            return False
        role = AGENT_ROLE if kind in (INSTRUCT, MAP) else TOKEN_ROLE
        party = run.agents if role == AGENT_ROLE else run.tokens
        if len(message.payload) < 2 or message.payload[1] != role or message.claimed_sender not in party:
            tick.note("flag", f"{message.claimed_sender} defector")
            return False
        return True

    def wake_round(self, current: int) -> int:
        moment = self._sync(current)
        if moment is Moment.BEFORE:
            return self.start
        if moment in (Moment.MUSTER, Moment.AFTER, Moment.SHARE) or self._exploring or self._stack:
            return current
        window_start = self.start + self._window * self.window_length
        share = window_start + self.window_length - 1
        if self._role is not Role.IDLE and not self._shared and current <= share:
            return share
        return window_start + self.window_length

    def wants(self, tick: Tick) -> bool:
        moment = self._sync(tick.round)
        if moment is Moment.MUSTER:
            return tick.sub_round == 1
        if moment is Moment.EXPLORE:
            return (self._exploring or self._announce_done) and tick.sub_round <= 2
        if moment is Moment.SHARE:
            return self._role is not Role.IDLE and tick.sub_round == 1
        return False

    def speak(self, tick: Tick) -> list[Utterance]:
        moment = self._sync(tick.round)
        run = self._run
        if moment is Moment.MUSTER and tick.sub_round == 1:
            return [Utterance(MUSTER, ())]
        if moment is Moment.EXPLORE and run is not None:
            if self._role is Role.TOKEN and self._exploring and tick.sub_round == 1:
                return [Utterance(TOKEN, (run.tag, TOKEN_ROLE))]
            if self._role is Role.AGENT and tick.sub_round == 2:
                if self._announce_done:
                    self._announce_done = False
                    return [Utterance(INSTRUCT, (run.tag, AGENT_ROLE, DONE_PORT))]
                if self._order is not None and self._order.escort:
                    return [Utterance(INSTRUCT, (run.tag, AGENT_ROLE, self._order.move))]
        if moment is Moment.SHARE and run is not None and self._role is Role.AGENT and tick.sub_round == 1:
            return [Utterance(MAP, (run.tag, AGENT_ROLE, self._outcome or ()))]
        return []

    def hear(self, tick: Tick, heard: tuple[Heard, ...]) -> None:
        moment = self._sync(tick.round)
        if moment is Moment.MUSTER:
            self._muster(tick, heard)
            return
        trusted = self._trusted(tick, heard)
        if moment is Moment.EXPLORE and self._exploring:
            if self._role is Role.AGENT and tick.sub_round == 1:
                self._explore(tick, trusted)
            elif self._role is Role.TOKEN and tick.sub_round == 2:
                for message in trusted:
                    if self._from_party(tick, message, INSTRUCT) and len(message.payload) == 3:
                        self._instructions.setdefault(message.payload[2], set()).add(message.claimed_sender)
        elif moment is Moment.SHARE and tick.sub_round == 1 and self._role is not Role.IDLE and not self._shared:
            self._share(tick, trusted)

    def _muster(self, tick: Tick, heard: tuple[Heard, ...]) -> None:
        if self.ids is not None:
            return
        self.ids = tuple(sorted({self.robot_id} | {m.claimed_sender for m in heard if m.kind == MUSTER}))
        try:
            self.runs = self.plan.windows(self.ids, self.n)
        except InputError as e:
            logger.info(f"Robot {self.robot_id} cannot run {self.plan.name} with {len(self.ids)} robots: {e}")
            self.runs = []
        tick.note("muster", f"{len(self.ids)} {len(self.runs)}")

    def _explore(self, tick: Tick, trusted: list[Heard]) -> None:
        run = self._run
        if run is None:
            return
        if self._explorer is None:
            self._explorer = TokenExplorer(self.n, tick.degree)
        support = {m.claimed_sender for m in trusted if self._from_party(tick, m, TOKEN)}
        sight = Sight(len(support) >= run.thresholds.recognition, self._last_entry, tick.degree)
        try:
            self._order = self._explorer.step(sight)
        except ExplorationError as e:
            tick.note("exploration-failed", str(e))
            self._stop(None)
            self._announce_done = True
            return
        if self._order is None:
            result = self._explorer.result
            self._stop(result.key if result is not None else None)
            self._announce_done = True

    def _share(self, tick: Tick, trusted: list[Heard]) -> None:
        run = self._run
        if run is None:
            return
        self._shared = True
        if self._role is Role.AGENT:
            key = self._outcome
        else:
            backers: dict[MapKey, set[int]] = {}
            for message in trusted:
                if self._from_party(tick, message, MAP) and len(message.payload) == 3 and message.payload[2]:
                    backers.setdefault(message.payload[2], set()).add(message.claimed_sender)
            adopted = [k for k, ids in backers.items() if len(ids) >= run.thresholds.instruction]
            key = adopted[0] if len(adopted) == 1 else None
        self.ballot.add(key)
        tick.note("ballot", f"{run.tag} {digest(key) if key else 'failure'}")
        if self._window == len(self.runs) - 1:
            self._close()
            tick.note("map", digest(self.result.key) if self.result else "no-majority")

    def _token_port(self, tick: Tick) -> int | None:
        run = self._run
        tally, self._instructions = self._instructions, {}
        if run is None:
            return None
        backed = [(port, len(ids)) for port, ids in tally.items() if len(ids) >= run.thresholds.instruction]
        if len(backed) != 1:
            if backed:
                tick.note("token-conflict", " ".join(f"{port}:{support}" for port, support in sorted(backed)))
            return None
        port, support = backed[0]
        if port == DONE_PORT:
            self._stop(None)
            return None
        if not isinstance(port, int) or not 1 <= port <= tick.degree:
            tick.note("token-ignore", f"port {port}")
            return None
        tick.note("token-move", f"{port} {support} {run.thresholds.instruction}")
        return port

    def move(self, tick: Tick) -> int | None:
        moment = self._sync(tick.round)
        port: int | None = None
        if moment is Moment.EXPLORE and self._exploring:
            if self._role is Role.AGENT and self._order is not None:
                port = self._order.move
            elif self._role is Role.TOKEN:
                port = self._token_port(tick)
        elif moment in (Moment.EXPLORE, Moment.RETURN) and self._stack:
            port = self._stack[-1]
        self._last_port = port
        return port

    def arrive(self, tick: Tick, entry_port: int | None, degree: int) -> None:
        if self._last_port is not None and entry_port is not None:
            if self._stack and self._stack[-1] == self._last_port:
                self._stack.pop()
            else:
                self._stack.append(entry_port)
        self._last_entry = entry_port
        self._last_port = None


@dataclasses.dataclass(
    frozen=True,
    slots=True,
)
class MapFindingResult:
    maps: dict[int, RootedMap | None]
    ballots: dict[int, MapBallot]
    rounds: int
    timed_out: bool


def run_mapfinding(state: SimState, plan: Plan, t2: int, budget: int | None = None) -> MapFindingResult:
    """
    Runs one map-finding phase for every robot in ``state``, all starting now.

    Byzantine robots keep whatever strategy they carry; their inner program is
    the same phase. Honest results are keyed by robot ID.

    Raises:
        NoMajorityError: If an honest robot ends without a strict majority map.
    """
    start = state.round
    phases = {}
    for robot in state.robots:
        robot.program = MapFindingPhase(robot.robot_id, state.n, plan, t2, start)
        phases[robot.handle] = robot.program
    windows = state.n + 2 * max(1, state.n).bit_length() + 4
    bound = budget if budget is not None else start + windows * plan.window_length(t2)
    outcome = run(state, bound)
    honest = {robot.handle for robot in state.honest()}
    maps = {phases[h].robot_id: phases[h].result for h in sorted(honest)}
    ballots = {phases[h].robot_id: phases[h].ballot for h in sorted(honest)}
    logger.info(f"{plan.name} map finding took {outcome.round_count - start} rounds")
    missing = sorted(robot_id for robot_id, found in maps.items() if found is None)
    if missing and not outcome.timed_out:
        raise NoMajorityError(f"Honest robots {missing} have no majority map")
    return MapFindingResult(maps, ballots, outcome.round_count - start, outcome.timed_out)


def explore_with_token(state: SimState, agents: Iterable[int], tokens: Iterable[int], thresholds: Thresholds,
                       t2: int) -> dict[int, RootedMap | None]:
    """Runs a single agent/token exploration; participants not in either party idle."""
    plan = SingleRunPlan(agents, tokens, thresholds)
    start = state.round
    for robot in state.robots:
        robot.program = MapFindingPhase(robot.robot_id, state.n, plan, t2, start)
    outcome = run(state, start + 2 * plan.window_length(t2))
    return {
        robot.robot_id: robot.program.result if isinstance(robot.program, MapFindingPhase) else None
        for robot in outcome.state.honest()
    }


def run_pairwise_mapfinding(state: SimState, t2: int) -> MapFindingResult:
    return run_mapfinding(state, PairwisePlan(), t2)


def run_three_group_mapfinding(state: SimState, t2: int) -> MapFindingResult:
    return run_mapfinding(state, ThreeGroupPlan(), t2)


def run_two_group_mapfinding(state: SimState, t2: int, strong: bool = False) -> MapFindingResult:
    return run_mapfinding(state, TwoGroupPlan(strong), t2)
