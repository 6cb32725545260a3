import dataclasses
import enum
import json
import logging
import math
import random
from collections import Counter
from collections.abc import Callable, Iterable
from pathlib import Path

from adversary import Arena, AdversaryStrategy, get_strategy
from commons import (
    ConfigError,
    Honesty,
    InputError,
    Status,
    ceil_div,
    get_find_map_cost,
    get_gather_cost,
    get_t2_factor,
    get_trace_dir,
    id_space,
    is_dispersion_feasible,
    log2_ceil,
)
from dispersion import DispersionPhase, RankSettlementPhase
from engine import NO_NODE, NO_ROBOT, Behavior, Heard, Robot, SimState, Tick, Trace, TraceRecord, Utterance
from engine import charge, oracle_gather, run
from graphs import (
    GraphSpec,
    PortLabeledGraph,
    RootedMap,
    generate_graph,
    is_graph_quotient_isomorphic,
    quotient_graph,
    read_graph,
)
from mapping import MapFindingPhase, PairwisePlan, Plan, ThreeGroupPlan, TwoGroupPlan

logger = logging.getLogger(__name__)

GATHER_NODE = 0


class Protocol(enum.StrEnum):
    QUOTIENT = "quotient-n1"
    PAIRWISE = "pairwise-half"
    THREE_GROUP = "three-group-third"
    TWO_GROUP = "two-group-sqrt"
    STRONG = "strong-quarter"

    @property
    def finds_map(self) -> bool:
        return self is not Protocol.QUOTIENT

    @property
    def min_robots(self) -> int:
        return {Protocol.THREE_GROUP: 3, Protocol.TWO_GROUP: 2, Protocol.STRONG: 2}.get(self, 1)

    def plan(self) -> Plan:
        match self:
            case Protocol.PAIRWISE:
                return PairwisePlan()
            case Protocol.THREE_GROUP:
                return ThreeGroupPlan()
            case Protocol.TWO_GROUP:
                return TwoGroupPlan()
            case Protocol.STRONG:
                return TwoGroupPlan(strong=True)
        raise ConfigError(f"Protocol {self} does not find a map")


class Placement(enum.StrEnum):
    GATHERED = "gathered"
    SEEDED_RANDOM = "seeded-random"
    ARBITRARY = "arbitrary"


class Gathering(enum.StrEnum):
    NONE = "none"
    ORACLE = "oracle"


class Feasibility(enum.StrEnum):
    FEASIBLE = "feasible"
    INFEASIBLE = "infeasible"


def tolerance(protocol: Protocol, n: int, k: int) -> int:
    """
    Most Byzantine robots the protocol is proven to withstand on n nodes with k robots.

    The map-finding protocols count the robots that take part, min(n, k).

    Args:
        protocol (Protocol): The dispersion protocol.
        n (int): The node count.
        k (int): The robot count.

    Returns:
        int: The largest tolerated f, never below 0.
    """
    m = min(n, k)
    match protocol:
        case Protocol.QUOTIENT:
            bound = n - 1
        case Protocol.PAIRWISE:
            bound = m // 2 - 1
        case Protocol.THREE_GROUP:
            bound = m // 3 - 1
        case Protocol.TWO_GROUP:
            bound = min(math.isqrt(m), (m // 2 - 1) // 2)
        case Protocol.STRONG:
            bound = n // 4 - 1
    return max(0, bound)


def feasibility_guard(k: int, n: int, f: int) -> Feasibility:
    """
    Tells whether any algorithm can disperse k robots on n nodes when f of them are Byzantine.

    Byzantine robots that copy honest ones exactly make ceil(k/n) honest robots share a node,
    which breaks the ceil((k - f)/n) cap unless the two are equal.

    Args:
        k (int): The robot count.
        n (int): The node count.
        f (int): The Byzantine robot count.

    Returns:
        Feasibility: FEASIBLE when ceil(k/n) <= ceil((k - f)/n), INFEASIBLE otherwise.
    """
    return Feasibility.FEASIBLE if is_dispersion_feasible(k, n, f) else Feasibility.INFEASIBLE


@dataclasses.dataclass(
    frozen=True,
    slots=True,
)
class ExperimentConfig:
    k: int
    protocol: Protocol
    graph: GraphSpec | None = None
    graph_file: Path | None = None
    n: int | None = None
    f: int = 0
    byzantine: tuple[int, ...] | None = None
    strategies: tuple[str, ...] = ("passive",)
    honesty: Honesty | None = None
    placement: Placement = Placement.GATHERED
    arbitrary: tuple[int, ...] = ()
    gathering: Gathering = Gathering.NONE
    gather_cost: int | None = None
    seed: int = 0
    budget: int | None = None
    t2_factor: int | None = None
    find_map_rounds: int | None = None
    ids: tuple[int, ...] | None = None
    allow_out_of_tolerance: bool = False
    trace: Path | None = None

    @property
    def byzantine_honesty(self) -> Honesty:
        if self.honesty is not None:
            return self.honesty
        return Honesty.STRONG if self.protocol is Protocol.STRONG else Honesty.WEAK


def _ints(value: str) -> tuple[int, ...]:
    return tuple(int(part) for part in value.split(",") if part.strip())


def _flag(value: str) -> bool:
    if value.lower() in ("1", "true", "yes", "on"):
        return True
    if value.lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"'{value}' is not a boolean")


def parse_config(text: str) -> ExperimentConfig:
    """
    Parses a flat ``key = value`` experiment document. Blank lines and ``#`` comments are skipped.

    Args:
        text (str): The config document.

    Returns:
        ExperimentConfig: The parsed config, not yet checked against its graph.

    Raises:
        ConfigError: If a line is malformed, a key is unknown or repeated, or a value has the wrong type.
    """
    entries: dict[str, str] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"Line {number} is not 'key = value': {raw!r}")
        if key in entries:
            raise ConfigError(f"Key '{key}' repeated on line {number}")
        entries[key] = value

    fields: dict[str, object] = {}
    graph_seed = 0
    try:
        for key, value in entries.items():
            match key:
                case "graph" | "graph_seed":
                    pass
                case "graph_file" | "trace":
                    fields[key] = Path(value)
                case "n" | "k" | "f" | "seed" | "budget" | "t2_factor" | "find_map_rounds":
                    fields[key] = int(value)
                case "byzantine" | "ids":
                    fields[key] = _ints(value)
                case "strategy":
                    fields["strategies"] = tuple(part.strip() for part in value.split(",") if part.strip())
                case "honesty":
                    fields["honesty"] = Honesty(value)
                case "protocol":
                    fields["protocol"] = Protocol(value)
                case "placement":
                    kind, _, nodes = value.partition(":")
                    fields["placement"] = Placement(kind)
                    fields["arbitrary"] = _ints(nodes)
                case "gathering":
                    kind, _, cost = value.partition(":")
                    fields["gathering"] = Gathering(kind)
                    if cost:
                        fields["gather_cost"] = int(cost)
                case "allow_out_of_tolerance":
                    fields[key] = _flag(value)
                case _:
                    raise ConfigError(f"Unknown config key '{key}'")
        if "graph_seed" in entries:
            graph_seed = int(entries["graph_seed"])
        if "graph" in entries:
            fields["graph"] = GraphSpec.parse(entries["graph"], graph_seed)
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError(f"Bad config value: {e}") from e
    for required in ("k", "protocol"):
        if required not in fields:
            raise ConfigError(f"Config is missing '{required}'")
    return ExperimentConfig(**fields)  # type: ignore[arg-type]


def load_config(path: Path) -> ExperimentConfig:
    """Reads and parses a config file; see ``parse_config``."""
    return parse_config(Path(path).read_text(encoding="utf-8"))


def load_graph(config: ExperimentConfig) -> PortLabeledGraph:
    """
    Builds the graph a config names, either generated from its spec or read from its file.

    Args:
        config (ExperimentConfig): A config with exactly one of ``graph`` and ``graph_file``.

    Returns:
        PortLabeledGraph: The graph to run on.

    Raises:
        ConfigError: If both or neither of the graph sources are set.
        InputError: If the spec or the file does not describe a valid graph.
    """
    if (config.graph is None) == (config.graph_file is None):
        raise ConfigError("Exactly one of 'graph' and 'graph_file' must be set")
    if config.graph is not None:
        return generate_graph(config.graph)
    return read_graph(config.graph_file)  # type: ignore[arg-type]


def validate_config(config: ExperimentConfig, graph: PortLabeledGraph) -> None:
    """
    Checks a config against its graph, logging every problem before giving up.

    Args:
        config (ExperimentConfig): The parsed config.
        graph (PortLabeledGraph): The graph the config runs on.

    Raises:
        ConfigError: If at least one problem was found.
    """
    problems: list[str] = []
    n, k, f = graph.node_count, config.k, config.f
    override = config.allow_out_of_tolerance
    protocol = config.protocol
    if config.n is not None and config.n != n:
        problems.append(f"n is {config.n} but the graph has {n} nodes")
    if k < protocol.min_robots:
        problems.append(f"{protocol} needs at least {protocol.min_robots} robots, got k={k}")
    if not 0 <= f < max(k, 1):
        problems.append(f"f must satisfy 0 <= f < k, got f={f} k={k}")
    elif k >= 1 and feasibility_guard(k, n, f) is Feasibility.INFEASIBLE and not override:
        problems.append(f"ceil({k}/{n}) > ceil({k - f}/{n}): dispersion is impossible")
    if k > n and protocol is not Protocol.STRONG and not override:
        problems.append(f"{protocol} settles at most one robot per node, but k={k} > n={n}")
    if f > tolerance(protocol, n, k) and not override:
        problems.append(f"f={f} exceeds the {protocol} tolerance of {tolerance(protocol, n, k)}")

    honesty = config.byzantine_honesty
    if honesty is Honesty.HONEST:
        problems.append("honesty must name a Byzantine kind")
    elif honesty is Honesty.STRONG and protocol is not Protocol.STRONG and not override:
        problems.append(f"strong Byzantine robots are only tolerated by {Protocol.STRONG}")
    if len(config.strategies) not in (1, f) and f > 0:
        problems.append(f"{len(config.strategies)} strategies given for {f} Byzantine robots")
    for name in sorted(set(config.strategies)):
        try:
            get_strategy(name, honesty if honesty.byzantine else Honesty.WEAK)
        except ConfigError as e:
            problems.append(str(e))
    if config.byzantine is not None:
        if len(config.byzantine) != f or len(set(config.byzantine)) != f:
            problems.append(f"byzantine must list {f} distinct robot indices")
        if any(not 0 <= handle < k for handle in config.byzantine):
            problems.append(f"byzantine indices must lie in [0, {k})")
    if config.ids is not None and (
        len(config.ids) != k or len(set(config.ids)) != k or min(config.ids, default=1) < 1
    ):
        problems.append(f"ids must list {k} distinct positive IDs")

    if config.placement is Placement.ARBITRARY:
        if len(config.arbitrary) != k:
            problems.append(f"arbitrary placement lists {len(config.arbitrary)} nodes for {k} robots")
        if any(not 0 <= node < n for node in config.arbitrary):
            problems.append(f"arbitrary placement nodes must lie in [0, {n})")
    if protocol.finds_map and config.placement is not Placement.GATHERED and config.gathering is Gathering.NONE:
        problems.append(f"{protocol} starts gathered; use placement=gathered or gathering=oracle")
    if protocol is Protocol.QUOTIENT and not override and not is_graph_quotient_isomorphic(graph):
        problems.append("quotient-n1 needs a graph isomorphic to its quotient")
    if protocol is Protocol.STRONG and (k - f) // 2 < max(1, n // 4):
        problems.append(f"{k - f} honest robots cannot back the {max(1, n // 4)}-strong thresholds")
    for value, name in ((config.budget, "budget"), (config.t2_factor, "t2_factor")):
        if value is not None and value < 1:
            problems.append(f"{name} must be positive, got {value}")

    for problem in problems:
        logger.error(f"Invalid config: {problem}")
    if problems:
        raise ConfigError(f"{len(problems)} config problem(s): {'; '.join(problems)}")


class Pipeline(Behavior):
    """
    Runs one robot's phases back to back.

    The next phase is built from the finished one, so whatever it learned (a
    map, the mustered IDs) flows forward. A map-finding phase hands over only
    once its last window is over, which keeps every robot on the same clock.
    """

    def __init__(self, first: Behavior, start: int, then: Callable[[Behavior, int], Behavior] | None = None) -> None:
        self.phase = first
        self.phases = [first]
        self.switches = [(first.label, start)]
        self._then = then

    def _advance(self, current: int) -> None:
        if self._then is None:
            return
        if isinstance(self.phase, MapFindingPhase):
            self.phase.poll(current)
            if current < self.phase.end:
                return
        if not self.phase.finished:
            return
        then, self._then = self._then, None
        self.phase = then(self.phase, current)
        self.phases.append(self.phase)
        self.switches.append((self.phase.label, current))

    @property
    def label(self) -> str:
        return self.phase.label

    @property
    def status(self) -> str:
        return self.phase.status

    @property
    def finished(self) -> bool:
        return self._then is None and self.phase.finished

    def wake_round(self, current: int) -> int:
        self._advance(current)
        return self.phase.wake_round(current)

    def wants(self, tick: Tick) -> bool:
        self._advance(tick.round)
        return self.phase.wants(tick)

    def speak(self, tick: Tick) -> Iterable[Utterance]:
        self._advance(tick.round)
        return self.phase.speak(tick)

    def hear(self, tick: Tick, heard: tuple[Heard, ...]) -> None:
        self.phase.hear(tick, heard)

    def move(self, tick: Tick) -> int | None:
        self._advance(tick.round)
        return self.phase.move(tick)

    def arrive(self, tick: Tick, entry_port: int | None, degree: int) -> None:
        self.phase.arrive(tick, entry_port, degree)


def _settle_with_map(robot_id: int, rank_based: bool) -> Callable[[Behavior, int], Behavior]:
    def then(finished: Behavior, current: int) -> Behavior:
        found = finished.result if isinstance(finished, MapFindingPhase) else None
        if not rank_based:
            return DispersionPhase(robot_id, found, current)
        ids = finished.ids if isinstance(finished, MapFindingPhase) and finished.ids else (robot_id,)
        rank = ids.index(robot_id) + 1 if robot_id in ids else 1
        return RankSettlementPhase(robot_id, found, rank, current, wrap=True)

    return then


@dataclasses.dataclass(
    frozen=True,
    slots=True,
)
class Simulation:
    state: SimState
    pipelines: dict[int, Pipeline]
    start: int
    t2: int
    timed_out: bool


def _robot_ids(config: ExperimentConfig, n: int, rng: random.Random) -> tuple[int, ...]:
    if config.ids is not None:
        return config.ids
    return tuple(rng.sample(range(1, max(id_space(n), config.k) + 1), config.k))


def _placements(config: ExperimentConfig, n: int, rng: random.Random) -> list[int]:
    match config.placement:
        case Placement.ARBITRARY:
            return list(config.arbitrary)
        case Placement.SEEDED_RANDOM:
            return [rng.randrange(n) for _ in range(config.k)]
    return [GATHER_NODE] * config.k


def build_state(config: ExperimentConfig, graph: PortLabeledGraph) -> SimState:
    """
    Places the robots, hands strategies to the Byzantine ones and gathers if asked.

    IDs, Byzantine handles and seeded placements all come from one stream seeded by the config.

    Args:
        config (ExperimentConfig): A validated config.
        graph (PortLabeledGraph): The graph to place the robots on.

    Returns:
        SimState: The starting state, after oracle gathering when the config asks for it.
    """
    n = graph.node_count
    rng = random.Random(f"{config.seed}:experiment")
    ids = _robot_ids(config, n, rng)
    byzantine = config.byzantine
    if byzantine is None:
        byzantine = tuple(sorted(rng.sample(range(config.k), config.f)))
    locations = _placements(config, n, rng)
    arena = Arena(config.seed, n, tuple(sorted(ids)), tuple(sorted(ids[h] for h in byzantine)))
    honesty = config.byzantine_honesty
    robots = []
    for handle, (robot_id, location) in enumerate(zip(ids, locations, strict=True)):
        robot = Robot(handle, robot_id, Honesty.HONEST, location)
        if handle in byzantine:
            name = config.strategies[0] if len(config.strategies) == 1 else config.strategies[byzantine.index(handle)]
            strategy: AdversaryStrategy = get_strategy(name, honesty)
            robot.honesty = honesty
            robot.strategy = strategy.bind(robot, arena)
            if config.placement is Placement.GATHERED and config.gathering is Gathering.NONE:
                robot.location = strategy.placement(graph, GATHER_NODE, location)
        robots.append(robot)
    state = SimState(graph, robots)
    if config.gathering is Gathering.ORACLE:
        cost = config.gather_cost if config.gather_cost is not None else get_gather_cost(n)
        oracle_gather(state, cost, GATHER_NODE)
    return state


def _default_budget(config: ExperimentConfig, n: int, t2: int) -> int:
    m = max(n, config.k)
    windows = {
        Protocol.QUOTIENT: 0,
        Protocol.PAIRWISE: m + 2 * log2_ceil(m),
        Protocol.THREE_GROUP: 3,
        Protocol.TWO_GROUP: 1,
        Protocol.STRONG: 1,
    }[config.protocol]
    window = config.protocol.plan().window_length(t2) if windows else 0
    return 1 + windows * window + 4 * n + 8


def simulate(config: ExperimentConfig, graph: PortLabeledGraph) -> Simulation:
    """
    Builds the robots for a validated config and runs its protocol to completion or budget.

    Args:
        config (ExperimentConfig): A validated config.
        graph (PortLabeledGraph): The graph to run on.

    Returns:
        Simulation: The final state, every robot's phase pipeline, T2 and whether the budget ran out.
    """
    n = graph.node_count
    t2 = (config.t2_factor if config.t2_factor is not None else get_t2_factor()) * n**3
    state = build_state(config, graph)
    if config.protocol is Protocol.QUOTIENT:
        cost = config.find_map_rounds if config.find_map_rounds is not None else get_find_map_cost(n)
        charge(state, cost, "find-map")
        quotient = quotient_graph(graph)
    start = state.round
    pipelines = {}
    for robot in state.robots:
        if config.protocol is Protocol.QUOTIENT:
            rooted = RootedMap(quotient.as_graph(), quotient.class_of[robot.location])
            pipeline = Pipeline(DispersionPhase(robot.robot_id, rooted, start), start)
        else:
            first = MapFindingPhase(robot.robot_id, n, config.protocol.plan(), t2, start)
            then = _settle_with_map(robot.robot_id, config.protocol is Protocol.STRONG)
            pipeline = Pipeline(first, start, then)
        robot.program = pipeline
        pipelines[robot.handle] = pipeline
    budget = start + (config.budget if config.budget is not None else _default_budget(config, n, t2))
    logger.info(f"Running {config.protocol} with k={config.k} f={config.f} on {n} nodes, budget {budget}")
    outcome = run(state, budget)
    return Simulation(outcome.state, pipelines, start, t2, outcome.timed_out)


@dataclasses.dataclass(
    frozen=True,
    slots=True,
)
class Verdict:
    dispersed: bool
    violating_nodes: tuple[int, ...]
    rounds_used: int
    invariants: dict[str, bool]
    unsettled: tuple[int, ...] = ()
    timed_out: bool = False


@dataclasses.dataclass(
    frozen=True,
    slots=True,
)
class _Member:
    honest: bool
    robot_id: int
    status: str
    node: int


def _members(records: Iterable[TraceRecord]) -> dict[str, _Member]:
    members = {}
    for record in records:
        if record.event == "final":
            honesty, robot_id, status = record.detail.split()
            members[record.robot] = _Member(honesty == Honesty.HONEST, int(robot_id), status, record.node)
    return members


def check_trace_invariants(records: list[TraceRecord], k: int, n: int, f: int) -> dict[str, bool]:
    """
    Audits what honest robots did, read from the trace alone.

    blacklist-purity: no honest robot blacklists an honest ID.
    no-co-settlement: no node sees more honest settlements than the dispersion cap.
    settled-monotonic: an honest robot never moves after settling.
    threshold-backed-token-moves: every honest token move had at least threshold support.

    Args:
        records (list[TraceRecord]): The trace of a run.
        k (int): The robot count.
        n (int): The node count.
        f (int): The Byzantine robot count.

    Returns:
        dict[str, bool]: Each invariant name mapped to whether it held.
    """
    members = _members(records)
    honest = {name for name, member in members.items() if member.honest}
    honest_ids = {members[name].robot_id for name in honest}
    cap = ceil_div(k - f, n) if 0 <= f < k else 1
    settles: Counter[int] = Counter()
    settled_round: dict[str, int] = {}
    purity = monotonic = backed = True
    for record in records:
        if record.robot not in honest:
            continue
        match record.event:
            case "blacklist":
                purity = purity and int(record.detail) not in honest_ids
            case "settle":
                settles[record.node] += 1
                settled_round.setdefault(record.robot, record.round)
            case "move" | "teleport":
                if record.robot in settled_round and record.round >= settled_round[record.robot]:
                    monotonic = False
            case "token-move":
                _, support, threshold = (int(part) for part in record.detail.split())
                backed = backed and support >= threshold
    return {
        "blacklist-purity": purity,
        "no-co-settlement": all(count <= cap for count in settles.values()),
        "settled-monotonic": monotonic,
        "threshold-backed-token-moves": backed,
    }


def check_dispersion(records: list[TraceRecord], k: int, n: int, f: int) -> Verdict:
    """
    Judges a finished run from the robots' final records only.

    Byzantine robots may stand anywhere. Every honest robot must be Settled,
    and no node may hold more than ceil((k-f)/n) of them (one when k = n).

    Args:
        records (list[TraceRecord]): The trace of a run.
        k (int): The robot count.
        n (int): The node count.
        f (int): The Byzantine robot count.

    Returns:
        Verdict: Whether the run dispersed, any crowded nodes and unsettled honest robots,
                 the rounds used and the trace invariants.
    """
    members = _members(records)
    cap = ceil_div(k - f, n) if 0 <= f < k else 1
    honest = [member for member in members.values() if member.honest]
    per_node = Counter(member.node for member in honest)
    violating = tuple(sorted(node for node, count in per_node.items() if count > cap))
    unsettled = tuple(sorted(member.robot_id for member in honest if member.status != Status.SETTLED))
    rounds = max((record.round for record in records if record.event == "final"), default=0)
    return Verdict(
        dispersed=not violating and not unsettled,
        violating_nodes=violating,
        rounds_used=rounds,
        invariants=check_trace_invariants(records, k, n, f),
        unsettled=unsettled,
    )


def check_trace(path: Path, n: int | None = None) -> Verdict:
    """
    Re-judges a trace file. k and f come from its final records, n from its
    summary record unless given.

    Args:
        path (Path): The trace file.
        n (int | None): The node count, when the trace has no summary record.

    Returns:
        Verdict: The same verdict ``check_dispersion`` gives.

    Raises:
        InputError: If the trace has no final records, or n is neither given nor recorded.
    """
    records = Trace.read(path)
    members = _members(records)
    if not members:
        raise InputError(f"Trace {path} has no final records")
    if n is None:
        summary = next((record for record in reversed(records) if record.event == "summary"), None)
        if summary is None:
            raise InputError(f"Trace {path} has no summary record; pass n")
        n = int(json.loads(summary.detail)["n"])
    k = len(members)
    f = sum(1 for member in members.values() if not member.honest)
    return check_dispersion(records, k, n, f)


@dataclasses.dataclass(
    frozen=True,
    slots=True,
)
class Report:
    verdict: Verdict
    metrics: dict[str, object]
    trace_path: Path | None


def _phase_rounds(simulation: Simulation, records: list[TraceRecord]) -> dict[str, int]:
    honest = {robot.handle for robot in simulation.state.honest()}
    switches = [simulation.pipelines[h].switches for h in sorted(honest)]
    rounds: dict[str, int] = {}
    settle_start = simulation.start
    if switches and len(switches[0]) > 1:
        settle_start = max(s[1][1] for s in switches if len(s) > 1)
        rounds[switches[0][0][0]] = settle_start - simulation.start
    names = {f"r{h}" for h in honest}
    last_settle = max((r.round for r in records if r.event == "settle" and r.robot in names), default=None)
    final_label = switches[0][-1][0] if switches else "dispersion"
    rounds[final_label] = (last_settle - settle_start + 1) if last_settle is not None else 0
    return rounds


def _bounds(config: ExperimentConfig, simulation: Simulation, rounds: dict[str, int]) -> dict[str, dict[str, int]]:
    n, t2 = simulation.state.n, simulation.t2
    bounds: dict[str, dict[str, int]] = {}
    if "map-finding" in rounds:
        m = max(n, config.k)
        limit = {
            Protocol.PAIRWISE: (m + 2 * log2_ceil(m)) * t2,
            Protocol.THREE_GROUP: 6 * t2 + 3,
        }.get(config.protocol, 2 * t2 + 1)
        bounds["map-finding"] = {"rounds": rounds["map-finding"], "limit": limit}
    if "dispersion" in rounds:
        bounds["dispersion"] = {"rounds": rounds["dispersion"], "limit": 2 * n - 1}
    if "rank-settlement" in rounds:
        bounds["rank-settlement"] = {"rounds": rounds["rank-settlement"], "limit": n}
    return bounds


def _metrics(config: ExperimentConfig, simulation: Simulation, records: list[TraceRecord]) -> dict[str, object]:
    rounds = _phase_rounds(simulation, records)
    blacklists: dict[str, int] = {}
    ballots: dict[str, str] = {}
    steps: dict[str, int] = {}
    for robot in simulation.state.honest():
        for phase in simulation.pipelines[robot.handle].phases:
            if isinstance(phase, MapFindingPhase):
                ballots[str(robot.robot_id)] = phase.ballot.summary()
            elif isinstance(phase, DispersionPhase):
                blacklists[str(robot.robot_id)] = len(phase.memory.blacklist)
                steps[str(robot.robot_id)] = phase.steps
    return {
        "protocol": str(config.protocol),
        "n": simulation.state.n,
        "k": config.k,
        "f": config.f,
        "seed": config.seed,
        "t2": simulation.t2,
        "rounds": simulation.state.round,
        "phase_rounds": rounds,
        "bounds": _bounds(config, simulation, rounds),
        "blacklist_sizes": blacklists,
        "ballots": ballots,
        "dispersion_steps": steps,
        "timed_out": simulation.timed_out,
    }


def _trace_path(config: ExperimentConfig) -> Path:
    if config.trace is not None:
        return config.trace
    return Path(get_trace_dir()) / f"{config.protocol}-k{config.k}-f{config.f}-s{config.seed}.trace"


def run_experiment(config: ExperimentConfig, trace_path: Path | None = None) -> Report:
    """
    Validates a config, runs it and judges the result.

    The trace ends with a summary record carrying the metrics as JSON.

    Returns:
        Report: The verdict, the metrics and where the trace was written.

    Raises:
        ConfigError: If the config is invalid for its graph.
    """
    graph = load_graph(config)
    validate_config(config, graph)
    simulation = simulate(config, graph)
    records = simulation.state.trace.records
    verdict = check_dispersion(records, config.k, graph.node_count, config.f)
    verdict = dataclasses.replace(verdict, timed_out=simulation.timed_out)
    metrics = _metrics(config, simulation, records)
    metrics["dispersed"] = verdict.dispersed
    simulation.state.trace.append(
        TraceRecord(simulation.state.round, 0, NO_NODE, NO_ROBOT, "summary", json.dumps(metrics, sort_keys=True))
    )
    path = trace_path if trace_path is not None else _trace_path(config)
    simulation.state.trace.write(path)
    outcome = "dispersed" if verdict.dispersed else "did not disperse"
    logger.info(f"{config.protocol} run (seed {config.seed}) {outcome} in {verdict.rounds_used} rounds")
    return Report(verdict, metrics, path)
