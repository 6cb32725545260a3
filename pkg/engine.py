import dataclasses
import enum
import logging
from collections.abc import Callable, Iterable
from pathlib import Path

from commons import Honesty, InputError, ProtocolViolation, digest
from graphs import PortLabeledGraph

logger = logging.getLogger(__name__)

NO_NODE = -1
NO_ROBOT = "-"


class Stage(enum.StrEnum):
    COMMUNICATE = "communicate-compute"
    MOVE = "move"


@dataclasses.dataclass(
    frozen=True,
    slots=True,
)
class Tick:
    """What a robot is told about the current instant; never its node index."""

    round: int
    sub_round: int
    stage: Stage
    degree: int
    robot_id: int
    n: int
    phase: str
    note: Callable[[str, str], None]


@dataclasses.dataclass(
    frozen=True,
    slots=True,
)
class Utterance:
    kind: str
    payload: tuple
    claimed_sender: int | None = None


@dataclasses.dataclass(
    frozen=True,
    slots=True,
)
class Heard:
    claimed_sender: int
    kind: str
    payload: tuple


@dataclasses.dataclass(
    frozen=True,
    slots=True,
)
class Message:
    claimed_sender: int
    kind: str
    payload: tuple
    sub_round: int
    true_sender: int

    def heard(self) -> Heard:
        return Heard(self.claimed_sender, self.kind, self.payload)


@dataclasses.dataclass(
    frozen=True,
    slots=True,
)
class TraceRecord:
    round: int
    sub_round: int
    node: int
    robot: str
    event: str
    detail: str

    def line(self) -> str:
        return f"{self.round}\t{self.sub_round}\t{self.node}\t{self.robot}\t{self.event}\t{self.detail}"

    @classmethod
    def parse(cls, line: str) -> "TraceRecord":
        parts = line.rstrip("\n").split("\t", 5)
        if len(parts) != 6:
            raise InputError(f"Trace line has {len(parts)} fields, expected 6: {line!r}")
        try:
            return cls(int(parts[0]), int(parts[1]), int(parts[2]), parts[3], parts[4], parts[5])
        except ValueError as e:
            raise InputError(f"Malformed trace line {line!r}") from e


@dataclasses.dataclass(slots=True)
class Trace:
    records: list[TraceRecord] = dataclasses.field(default_factory=list)

    def append(self, record: TraceRecord) -> None:
        self.records.append(record)

    def lines(self) -> list[str]:
        return [record.line() for record in self.records]

    def write(self, path: Path) -> None:
        Path(path).write_text("".join(f"{line}\n" for line in self.lines()), encoding="utf-8")
        logger.info(f"Wrote {len(self.records)} trace records to {path}")

    @staticmethod
    def read(path: Path) -> list[TraceRecord]:
        text = Path(path).read_text(encoding="utf-8")
        return [TraceRecord.parse(line) for line in text.splitlines() if line.strip()]


class Behavior:
    """
    A robot program as the engine drives it.

    The defaults describe a robot that never speaks, never moves and has
    nothing left to do; protocol phases override what they need.
    """

    @property
    def label(self) -> str:
        return "idle"

    @property
    def finished(self) -> bool:
        return True

    @property
    def status(self) -> str:
        return "none"

    def wake_round(self, current: int) -> int:
        """Earliest round >= ``current`` in which this program wants to speak or move."""
        return current

    def wants(self, tick: Tick) -> bool:
        return False

    def speak(self, tick: Tick) -> Iterable[Utterance]:
        return ()

    def hear(self, tick: Tick, heard: tuple[Heard, ...]) -> None:
        return None

    def move(self, tick: Tick) -> int | None:
        return None

    def arrive(self, tick: Tick, entry_port: int | None, degree: int) -> None:
        return None


class Interceptor:
    """Interception points the engine offers to Byzantine robots; the base passes everything through."""

    def wake(self, tick_round: int, inner: int) -> int:
        return inner

    def wants(self, tick: Tick, inner: bool) -> bool:
        return inner

    def rewrite(self, tick: Tick, utterances: list[Utterance]) -> list[Utterance]:
        return utterances

    def override_move(self, tick: Tick, port: int | None) -> int | None:
        return port

    def placement(self, graph: PortLabeledGraph, gather_node: int, location: int) -> int:
        return gather_node


@dataclasses.dataclass(slots=True)
class Robot:
    handle: int
    robot_id: int
    honesty: Honesty
    location: int
    program: Behavior = dataclasses.field(default_factory=Behavior)
    strategy: Interceptor | None = None

    @property
    def name(self) -> str:
        return f"r{self.handle}"


@dataclasses.dataclass(slots=True)
class SimState:
    graph: PortLabeledGraph
    robots: list[Robot]
    round: int = 0
    trace: Trace = dataclasses.field(default_factory=Trace)

    @property
    def n(self) -> int:
        return self.graph.node_count

    def honest(self) -> list[Robot]:
        return [robot for robot in self.robots if not robot.honesty.byzantine]

    def record(self, sub_round: int, node: int, robot: str, event: str, detail: str) -> None:
        self.trace.append(TraceRecord(self.round, sub_round, node, robot, event, detail))


@dataclasses.dataclass(
    frozen=True,
    slots=True,
)
class Outcome:
    state: SimState
    trace: Trace
    round_count: int
    timed_out: bool


def _guarded[T](robot: Robot, call: Callable[[], T], fallback: T) -> T:
    """Runs a program hook; a Byzantine robot's own program may fail on the lies it tells."""
    if robot.strategy is None:
        return call()
    try:
        return call()
    except Exception as e:
        logger.debug(f"Byzantine robot {robot.name} program raised {e!r}, continuing")
        return fallback


def _tick(state: SimState, robot: Robot, sub_round: int, stage: Stage) -> Tick:
    node = robot.location

    def note(event: str, detail: str) -> None:
        state.record(sub_round, node, robot.name, event, detail)

    return Tick(
        round=state.round,
        sub_round=sub_round,
        stage=stage,
        degree=state.graph.degree(node),
        robot_id=robot.robot_id,
        n=state.n,
        phase=robot.program.label,
        note=note,
    )


def _wants(robot: Robot, tick: Tick) -> bool:
    inner = _guarded(robot, lambda: robot.program.wants(tick), False)
    return inner if robot.strategy is None else robot.strategy.wants(tick, inner)


def _speak(state: SimState, robot: Robot, tick: Tick) -> list[Message]:
    utterances = _guarded(robot, lambda: list(robot.program.speak(tick)), [])
    if robot.strategy is not None:
        utterances = robot.strategy.rewrite(tick, utterances)
    messages: list[Message] = []
    kinds: set[str] = set()
    for utterance in utterances:
        claimed = robot.robot_id if utterance.claimed_sender is None else utterance.claimed_sender
        if claimed != robot.robot_id and robot.honesty is not Honesty.STRONG:
            raise ProtocolViolation(f"{robot.honesty} robot {robot.name} claimed ID {claimed}")
        if utterance.kind in kinds:
            if not robot.honesty.byzantine:
                raise ProtocolViolation(f"Honest robot {robot.name} sent two {utterance.kind} messages")
            tick.note("drop", f"{claimed} {utterance.kind}")
            continue
        kinds.add(utterance.kind)
        tick.note("say", f"{claimed} {utterance.kind} {digest(utterance.payload)}")
        messages.append(Message(claimed, utterance.kind, utterance.payload, tick.sub_round, robot.handle))
    return messages


def _communicate(state: SimState, node: int, present: list[Robot]) -> None:
    for sub_round in range(1, state.n + 1):
        ticks = {robot.handle: _tick(state, robot, sub_round, Stage.COMMUNICATE) for robot in present}
        if not any(_wants(robot, ticks[robot.handle]) for robot in present):
            return
        outgoing = [message for robot in present for message in _speak(state, robot, ticks[robot.handle])]
        for robot in present:
            heard = tuple(message.heard() for message in outgoing if message.true_sender != robot.handle)
            tick = ticks[robot.handle]
            _guarded(robot, lambda robot=robot, tick=tick, heard=heard: robot.program.hear(tick, heard), None)


def _requested_port(state: SimState, robot: Robot) -> int | None:
    tick = _tick(state, robot, 0, Stage.MOVE)
    port = _guarded(robot, lambda: robot.program.move(tick), None)
    if robot.strategy is not None:
        port = robot.strategy.override_move(tick, port)
    if port is None or 1 <= port <= tick.degree:
        return port
    if not robot.honesty.byzantine:
        raise ProtocolViolation(f"Honest robot {robot.name} asked for port {port} at a degree-{tick.degree} node")
    tick.note("stay", f"invalid port {port}")
    return None


def _arrive(state: SimState, robot: Robot, entry: int | None) -> None:
    tick = _tick(state, robot, 0, Stage.MOVE)
    degree = state.graph.degree(robot.location)
    _guarded(robot, lambda: robot.program.arrive(tick, entry, degree), None)


def step_round(state: SimState) -> SimState:
    """
    Runs one synchronous round: up to n communicate-compute sub-rounds per node,
    then every queued move at once.

    Sub-rounds at a node continue while some robot there still wants one, so
    rounds in which nobody talks stay cheap.

    Raises:
        ProtocolViolation: If an honest robot breaks the model.
    """
    by_node: dict[int, list[Robot]] = {}
    for robot in sorted(state.robots, key=lambda r: r.handle):
        by_node.setdefault(robot.location, []).append(robot)
    for node in sorted(by_node):
        _communicate(state, node, by_node[node])

    requested = [(robot, _requested_port(state, robot)) for robot in sorted(state.robots, key=lambda r: r.handle)]
    for robot, port in requested:
        entry: int | None = None
        if port is not None:
            origin = robot.location
            robot.location, entry = state.graph.follow(origin, port)
            state.record(0, origin, robot.name, "move", f"{port}>{entry}")
        _arrive(state, robot, entry)
    state.round += 1
    return state


def _wake(robot: Robot, current: int) -> int:
    inner = _guarded(robot, lambda: robot.program.wake_round(current), current)
    return inner if robot.strategy is None else robot.strategy.wake(current, inner)


def honest_finished(state: SimState) -> bool:
    return all(robot.program.finished for robot in state.honest())


def charge(state: SimState, rounds: int, label: str) -> SimState:
    """Advances the clock for work done outside the simulation, e.g. a black-box subroutine."""
    if rounds < 0:
        raise InputError(f"Cannot charge a negative number of rounds ({rounds})")
    state.record(0, NO_NODE, NO_ROBOT, "charge", f"{label} {rounds}")
    state.round += rounds
    return state


def oracle_gather(state: SimState, cost: int, node: int = 0) -> SimState:
    """
    Teleports every honest robot to ``node`` and charges ``cost`` rounds.

    Byzantine robots go wherever their strategy places them.
    """
    state.graph.check_node(node)
    honest = state.honest()
    logger.info(f"Gathering {len(honest)} honest robots at node {node}")
    for robot in sorted(state.robots, key=lambda r: r.handle):
        target = node
        if robot.strategy is not None:
            target = robot.strategy.placement(state.graph, node, robot.location)
            state.graph.check_node(target)
        if target != robot.location:
            state.record(0, robot.location, robot.name, "teleport", f"{robot.location}>{target}")
        robot.location = target
    return charge(state, cost, "gather")


def finalize(state: SimState) -> None:
    for robot in sorted(state.robots, key=lambda r: r.handle):
        status = robot.program.status
        state.record(0, robot.location, robot.name, "final", f"{robot.honesty} {robot.robot_id} {status}")


def run(state: SimState, budget: int) -> Outcome:
    """
    Executes rounds until every honest program has finished or the round counter reaches ``budget``.

    When every robot declares it has nothing to do before some later round,
    the clock jumps there and the trace records the skip.

    Returns:
        Outcome: The final state, its trace, the rounds elapsed and whether the budget ran out.
    """
    if budget <= 0:
        raise InputError(f"Round budget must be positive, got {budget}")
    timed_out = False
    while not honest_finished(state):
        if state.round >= budget:
            timed_out = True
            break
        wake = min((_wake(robot, state.round) for robot in state.robots), default=state.round)
        if wake > state.round:
            target = min(wake, budget)
            state.record(0, NO_NODE, NO_ROBOT, "skip", f"{state.round}>{target}")
            state.round = target
            continue
        step_round(state)
    if timed_out:
        logger.warning(f"Round budget {budget} exhausted before every honest robot finished")
    finalize(state)
    return Outcome(state, state.trace, state.round, timed_out)
