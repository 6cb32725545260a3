import itertools
import json
import math
import random

import networkx as nx
import pytest

from adversary import STRATEGIES
from commons import ConfigError, Honesty, InputError
from engine import NO_NODE, NO_ROBOT, Trace, TraceRecord
from graphs import GraphSpec, from_networkx, generate_graph, is_graph_quotient_isomorphic, write_graph
from harness import (
    ExperimentConfig,
    Feasibility,
    Gathering,
    Placement,
    Protocol,
    build_state,
    check_dispersion,
    check_trace,
    check_trace_invariants,
    feasibility_guard,
    load_config,
    load_graph,
    parse_config,
    run_experiment,
    tolerance,
    validate_config,
)

CONFIG_TEXT = """
# three groups on a small random graph
graph = random-connected:6
graph_seed = 4
k = 6
f = 1
protocol = three-group-third
strategy = map-liar
placement = arbitrary:0,1,2,3,4,5
gathering = oracle:12
allow_out_of_tolerance = yes
ids = 3, 9, 27, 81, 243, 729
"""


@pytest.fixture
def path4(tmp_path):
    """A four-node path with ports in neighbor order, which is rigid."""
    graph_file = tmp_path / "path4.graph"
    write_graph(from_networkx(nx.path_graph(4)), graph_file)
    return graph_file


def final(handle, honest, robot_id, node, status="Settled"):
    honesty = Honesty.HONEST if honest else Honesty.WEAK
    return TraceRecord(9, 0, node, f"r{handle}", "final", f"{honesty} {robot_id} {status}")


def test_parse_config():
    # Act
    config = parse_config(CONFIG_TEXT)

    # Assert
    assert config.graph == GraphSpec("random-connected", 6, 4)
    assert config.k == 6 and config.f == 1
    assert config.protocol is Protocol.THREE_GROUP
    assert config.strategies == ("map-liar",)
    assert config.placement is Placement.ARBITRARY
    assert config.arbitrary == (0, 1, 2, 3, 4, 5)
    assert config.gathering is Gathering.ORACLE
    assert config.gather_cost == 12
    assert config.allow_out_of_tolerance
    assert config.ids == (3, 9, 27, 81, 243, 729)
    assert config.byzantine_honesty is Honesty.WEAK


def test_load_config_reads_a_file(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text(CONFIG_TEXT, encoding="utf-8")
    assert load_config(path) == parse_config(CONFIG_TEXT)


def test_strong_protocol_defaults_to_strong_byzantine_robots():
    config = parse_config("k = 8\nprotocol = strong-quarter\n")
    assert config.byzantine_honesty is Honesty.STRONG
    assert parse_config("k = 8\nprotocol = strong-quarter\nhonesty = weak-byz\n").byzantine_honesty is Honesty.WEAK


@pytest.mark.parametrize(
    "text",
    [
        "k = 4\nprotocol = pairwise-half\ncolor = red\n",
        "k = 4\nk = 5\nprotocol = pairwise-half\n",
        "protocol = pairwise-half\n",
        "k = 4\n",
        "k = many\nprotocol = pairwise-half\n",
        "k = 4\nprotocol = fastest\n",
        "k = 4\nprotocol = pairwise-half\njust words\n",
        "k = 4\nprotocol = pairwise-half\nallow_out_of_tolerance = maybe\n",
        "k = 4\nprotocol = pairwise-half\ngraph = ring\n",
    ],
)
def test_parse_config_rejects(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_load_graph_needs_exactly_one_source(path4):
    with pytest.raises(ConfigError):
        load_graph(ExperimentConfig(k=4, protocol=Protocol.PAIRWISE))
    with pytest.raises(ConfigError):
        load_graph(ExperimentConfig(k=4, protocol=Protocol.PAIRWISE, graph=GraphSpec("ring", 4), graph_file=path4))
    assert load_graph(ExperimentConfig(k=4, protocol=Protocol.PAIRWISE, graph_file=path4)).node_count == 4


@pytest.mark.parametrize(
    ("protocol", "n", "k", "expected"),
    [
        (Protocol.QUOTIENT, 5, 5, 4),
        (Protocol.PAIRWISE, 10, 10, 4),
        (Protocol.PAIRWISE, 10, 6, 2),
        (Protocol.PAIRWISE, 1, 1, 0),
        (Protocol.THREE_GROUP, 9, 9, 2),
        (Protocol.TWO_GROUP, 16, 16, 3),
        (Protocol.TWO_GROUP, 100, 100, 10),
        (Protocol.STRONG, 8, 8, 1),
        (Protocol.STRONG, 3, 9, 0),
    ],
)
def test_tolerance(protocol, n, k, expected):
    assert tolerance(protocol, n, k) == expected


def test_feasibility_guard_matches_the_ceiling_condition():
    rng = random.Random(7)
    for _ in range(10_000):
        n = rng.randint(1, 30)
        k = rng.randint(1, 120)
        f = rng.randrange(k)
        expected = Feasibility.FEASIBLE if math.ceil(k / n) <= math.ceil((k - f) / n) else Feasibility.INFEASIBLE
        assert feasibility_guard(k, n, f) is expected


def test_protocol_properties():
    assert not Protocol.QUOTIENT.finds_map
    assert Protocol.STRONG.plan().name == "strong-two-group"
    assert Protocol.THREE_GROUP.min_robots == 3
    with pytest.raises(ConfigError):
        Protocol.QUOTIENT.plan()


def test_validate_config_accepts_a_sound_config():
    config = ExperimentConfig(k=4, protocol=Protocol.PAIRWISE, graph=GraphSpec("ring", 4), f=1, strategies=("silent",))
    validate_config(config, load_graph(config))


def test_validate_config_reports_every_problem():
    """
    Test that an infeasible, over-tolerance, over-full config is refused with all three reasons.
    """
    # Arrange
    config = ExperimentConfig(k=5, protocol=Protocol.PAIRWISE, graph=GraphSpec("ring", 4), f=3)

    # Act
    with pytest.raises(ConfigError) as raised:
        validate_config(config, load_graph(config))

    # Assert
    message = str(raised.value)
    assert message.startswith("3 config problem(s)")
    assert "dispersion is impossible" in message
    assert "k=5 > n=4" in message
    assert "tolerance of 1" in message


def test_validate_config_override_lifts_the_proven_limits():
    config = ExperimentConfig(
        k=5, protocol=Protocol.PAIRWISE, graph=GraphSpec("ring", 4), f=3, allow_out_of_tolerance=True
    )
    validate_config(config, load_graph(config))


@pytest.mark.parametrize(
    ("fields", "fragment"),
    [
        ({"protocol": Protocol.QUOTIENT, "graph": GraphSpec("ring", 4, consistent=True)}, "quotient"),
        ({"n": 5}, "graph has 4 nodes"),
        ({"f": 1, "strategies": ("id-spoof",)}, "strong Byzantine"),
        ({"f": 1, "honesty": Honesty.STRONG}, "strong Byzantine robots are only tolerated"),
        ({"f": 1, "byzantine": (7,)}, "byzantine indices"),
        ({"ids": (1, 1, 2, 3)}, "distinct positive IDs"),
        ({"placement": Placement.SEEDED_RANDOM}, "starts gathered"),
        ({"placement": Placement.ARBITRARY, "arbitrary": (0, 1)}, "arbitrary placement"),
        ({"budget": 0}, "budget must be positive"),
        ({"k": 1, "protocol": Protocol.THREE_GROUP}, "at least 3 robots"),
        ({"k": 2, "protocol": Protocol.STRONG, "graph": GraphSpec("ring", 8)}, "strong thresholds"),
    ],
)
def test_validate_config_problems(fields, fragment):
    base = {"k": 4, "protocol": Protocol.PAIRWISE, "graph": GraphSpec("ring", 4)}
    config = ExperimentConfig(**(base | fields))
    with pytest.raises(ConfigError, match=fragment):
        validate_config(config, load_graph(config))


def test_build_state_with_oracle_gathering():
    # Arrange
    config = ExperimentConfig(
        k=4,
        protocol=Protocol.PAIRWISE,
        graph=GraphSpec("ring", 4),
        f=1,
        byzantine=(2,),
        strategies=("outsider",),
        placement=Placement.SEEDED_RANDOM,
        gathering=Gathering.ORACLE,
        gather_cost=7,
        ids=(10, 20, 30, 40),
    )

    # Act
    state = build_state(config, load_graph(config))

    # Assert
    assert state.round == 7
    assert [robot.robot_id for robot in state.robots] == [10, 20, 30, 40]
    assert [robot.honesty for robot in state.robots] == [Honesty.HONEST] * 2 + [Honesty.WEAK, Honesty.HONEST]
    assert all(robot.location == 0 for robot in state.honest())
    assert state.robots[2].location == 2


def test_build_state_draws_ids_from_the_seeded_id_space():
    config = ExperimentConfig(k=5, protocol=Protocol.PAIRWISE, graph=GraphSpec("ring", 5), seed=3)
    first = build_state(config, load_graph(config))
    second = build_state(config, load_graph(config))
    ids = [robot.robot_id for robot in first.robots]
    assert ids == [robot.robot_id for robot in second.robots]
    assert len(set(ids)) == 5
    assert all(1 <= robot_id <= 25 for robot_id in ids)


def test_check_dispersion_flags_honest_robots_sharing_a_node():
    records = [final(0, True, 4, 1), final(1, True, 7, 1), final(2, False, 9, 2)]
    verdict = check_dispersion(records, 3, 3, 1)
    assert not verdict.dispersed
    assert verdict.violating_nodes == (1,)


def test_check_dispersion_ignores_byzantine_robots():
    records = [final(0, True, 4, 0), final(1, True, 7, 1), final(2, False, 9, 0)]
    verdict = check_dispersion(records, 3, 3, 1)
    assert verdict.dispersed
    assert verdict.rounds_used == 9


def test_check_dispersion_allows_the_ceiling_when_robots_outnumber_nodes():
    records = [final(h, True, 10 + h, h % 2) for h in range(4)]
    assert check_dispersion(records, 4, 2, 0).dispersed
    assert not check_dispersion(records, 4, 4, 0).dispersed


def test_check_dispersion_requires_every_honest_robot_settled():
    records = [final(0, True, 4, 0), final(1, True, 7, 1, status="tobeSettled")]
    verdict = check_dispersion(records, 2, 2, 0)
    assert not verdict.dispersed
    assert verdict.unsettled == (7,)


def test_check_trace_invariants_catch_honest_misbehavior():
    # Arrange
    records = [
        TraceRecord(1, 1, 0, "r0", "blacklist", "7"),
        TraceRecord(2, 1, 0, "r0", "settle", "rule 1 node 0"),
        TraceRecord(3, 0, 0, "r0", "move", "1>2"),
        TraceRecord(3, 2, 0, "r1", "token-move", "4 1 2"),
        final(0, True, 4, 1),
        final(1, True, 7, 0),
    ]

    # Act
    invariants = check_trace_invariants(records, 2, 2, 0)

    # Assert
    assert invariants == {
        "blacklist-purity": False,
        "no-co-settlement": True,
        "settled-monotonic": False,
        "threshold-backed-token-moves": False,
    }


def test_check_trace_needs_finals_and_a_node_count(tmp_path):
    # Arrange
    empty, bare = tmp_path / "empty.trace", tmp_path / "bare.trace"
    Trace([TraceRecord(0, 0, NO_NODE, NO_ROBOT, "charge", "gather 3")]).write(empty)
    Trace([final(0, True, 4, 0), final(1, True, 7, 1)]).write(bare)

    # Act / Assert
    with pytest.raises(InputError):
        check_trace(empty)
    with pytest.raises(InputError):
        check_trace(bare)
    assert check_trace(bare, n=2).dispersed


def test_quotient_run_outlasts_a_fake_settler(path4, tmp_path):
    # Arrange
    config = ExperimentConfig(k=4, protocol=Protocol.QUOTIENT, graph_file=path4, f=1, strategies=("fake-settle",))
    trace_path = tmp_path / "quotient.trace"

    # Act
    report = run_experiment(config, trace_path)

    # Assert
    assert report.verdict.dispersed
    assert all(report.verdict.invariants.values())
    assert report.trace_path == trace_path
    assert report.metrics["bounds"]["dispersion"]["rounds"] <= report.metrics["bounds"]["dispersion"]["limit"]
    assert check_trace(trace_path).dispersed
    summary = Trace.read(trace_path)[-1]
    assert summary.event == "summary"
    assert json.loads(summary.detail)["dispersed"] is True


def test_run_experiment_writes_to_the_trace_directory(path4, tmp_path, mocker):
    mocker.patch.dict("os.environ", {"BYZDISP_TRACE_DIR": str(tmp_path)})
    config = ExperimentConfig(k=4, protocol=Protocol.QUOTIENT, graph_file=path4, seed=5)

    report = run_experiment(config)

    assert report.trace_path == tmp_path / "quotient-n1-k4-f0-s5.trace"
    assert report.trace_path.exists()


def test_pairwise_run_outvotes_a_map_liar(path4, tmp_path):
    # Arrange
    config = ExperimentConfig(k=4, protocol=Protocol.PAIRWISE, graph_file=path4, f=1, strategies=("map-liar",))

    # Act
    report = run_experiment(config, tmp_path / "pairwise.trace")

    # Assert
    assert report.verdict.dispersed
    assert not report.verdict.timed_out
    assert all(report.verdict.invariants.values())
    bounds = report.metrics["bounds"]
    assert set(report.metrics["phase_rounds"]) == {"map-finding", "dispersion"}
    assert bounds["map-finding"]["rounds"] <= bounds["map-finding"]["limit"]
    assert bounds["map-finding"]["limit"] == (4 + 2 * 2) * report.metrics["t2"]
    assert bounds["dispersion"]["rounds"] <= bounds["dispersion"]["limit"]
    assert len(report.metrics["ballots"]) == 3


def test_strong_run_withstands_an_id_spoofer(tmp_path):
    """
    Test that rank settlement after a two-group map still disperses when a strong robot speaks under honest IDs.
    """
    # Arrange
    config = ExperimentConfig(
        k=8,
        protocol=Protocol.STRONG,
        graph=GraphSpec("random-connected", 8, seed=2),
        f=1,
        strategies=("id-spoof",),
        seed=4,
    )

    # Act
    report = run_experiment(config, tmp_path / "strong.trace")

    # Assert
    assert report.verdict.dispersed
    assert set(report.metrics["phase_rounds"]) == {"map-finding", "rank-settlement"}
    assert report.metrics["bounds"]["rank-settlement"]["rounds"] <= 8


def test_run_experiment_refuses_an_invalid_config(path4, tmp_path):
    config = ExperimentConfig(k=4, protocol=Protocol.PAIRWISE, graph_file=path4, f=3)
    with pytest.raises(ConfigError):
        run_experiment(config, tmp_path / "never.trace")
    assert not (tmp_path / "never.trace").exists()


def test_same_config_gives_identical_traces(path4, tmp_path):
    config = ExperimentConfig(
        k=4, protocol=Protocol.QUOTIENT, graph_file=path4, f=1, strategies=("relocate-after-settle",)
    )
    first = run_experiment(config, tmp_path / "a.trace")
    second = run_experiment(config, tmp_path / "b.trace")
    assert first.trace_path.read_text() == second.trace_path.read_text()


def rigid_spec(n, index):
    """The index-th seeded random connected graph on n nodes whose views tell every node apart."""
    rigid = (
        spec
        for spec in (GraphSpec("random-connected", n, seed) for seed in itertools.count())
        if is_graph_quotient_isomorphic(generate_graph(spec))
    )
    return next(itertools.islice(rigid, index, None))


def graph_for(protocol, n, seed):
    return rigid_spec(n, seed) if protocol is Protocol.QUOTIENT else GraphSpec("random-connected", n, seed)


def assert_clean_run(report):
    assert report.verdict.dispersed
    assert not report.verdict.timed_out
    assert all(report.verdict.invariants.values())
    for phase, bound in report.metrics["bounds"].items():
        assert bound["rounds"] <= bound["limit"], phase


def every_tolerated_run():
    for protocol in Protocol:
        for n in (4, 6, 8, 10):
            f = tolerance(protocol, n, n)
            if f == 0:
                continue
            for strategy in STRATEGIES:
                if strategy.strong_only and protocol is not Protocol.STRONG:
                    continue
                for seed in (1, 2, 3):
                    label = f"{protocol}-n{n}-{strategy.name}-s{seed}"
                    yield pytest.param(protocol, n, f, strategy.name, seed, id=label)


@pytest.mark.slow
@pytest.mark.parametrize(("protocol", "n", "f", "strategy", "seed"), list(every_tolerated_run()))
def test_every_protocol_disperses_at_its_tolerance(protocol, n, f, strategy, seed, tmp_path):
    # Arrange
    config = ExperimentConfig(
        k=n, protocol=protocol, graph=graph_for(protocol, n, seed), f=f, strategies=(strategy,), seed=seed
    )

    # Act
    report = run_experiment(config, tmp_path / "run.trace")

    # Assert
    assert_clean_run(report)


@pytest.mark.slow
@pytest.mark.parametrize("index", range(8))
@pytest.mark.parametrize("n", range(4, 11))
def test_quotient_disperses_rigid_graphs_within_2n_minus_1_steps(n, index, tmp_path):
    """
    Test that quotient dispersion needs no map finding on rigid graphs, whatever share of the robots is Byzantine.
    """
    weak = [strategy.name for strategy in STRATEGIES if not strategy.strong_only]
    for f in sorted({0, n // 2, n - 1}):
        # Arrange
        config = ExperimentConfig(
            k=n,
            protocol=Protocol.QUOTIENT,
            graph=rigid_spec(n, index),
            f=f,
            strategies=(weak[(n + index + f) % len(weak)],),
            seed=index,
        )

        # Act
        report = run_experiment(config, tmp_path / f"quotient-f{f}.trace")

        # Assert
        assert_clean_run(report)
        assert set(report.metrics["phase_rounds"]) == {"dispersion"}
        assert max(report.metrics["dispersion_steps"].values()) <= 2 * n - 1


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(1, 21))
@pytest.mark.parametrize("n", [8, 12])
def test_strong_run_withstands_id_spoofers_across_seeds(n, seed, tmp_path):
    # Arrange
    config = ExperimentConfig(
        k=n,
        protocol=Protocol.STRONG,
        graph=GraphSpec("random-connected", n, seed),
        f=n // 4 - 1,
        strategies=("id-spoof",),
        seed=seed,
    )

    # Act
    report = run_experiment(config, tmp_path / "strong.trace")

    # Assert
    assert_clean_run(report)
    assert report.verdict.invariants["threshold-backed-token-moves"]
    assert report.metrics["bounds"]["map-finding"]["limit"] == 2 * report.metrics["t2"] + 1


@pytest.mark.slow
@pytest.mark.parametrize("index", range(20))
def test_random_configs_replay_identically(index, tmp_path):
    # Arrange
    rng = random.Random(index)
    protocol = rng.choice(list(Protocol))
    n = rng.choice([4, 5, 6, 8])
    f = rng.randint(0, tolerance(protocol, n, n))
    strategy = rng.choice([s.name for s in STRATEGIES if protocol is Protocol.STRONG or not s.strong_only])
    seed = rng.randint(0, 1000)
    config = ExperimentConfig(
        k=n, protocol=protocol, graph=graph_for(protocol, n, seed % 5), f=f, strategies=(strategy,), seed=seed
    )

    # Act
    first = run_experiment(config, tmp_path / "first.trace")
    second = run_experiment(config, tmp_path / "second.trace")

    # Assert
    assert first.trace_path.read_bytes() == second.trace_path.read_bytes()
    assert first.verdict == second.verdict
