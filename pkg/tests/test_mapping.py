import contextlib
import itertools
import random

import pytest

from adversary import GroupDefector, MapLiar, TokenSaboteur
from commons import ExplorationError, Honesty, InputError, NoMajorityError, log2_ceil
from engine import Interceptor, Robot, SimState
from graphs import GraphSpec, RootedMap, generate_graph
from mapping import (
    GroupAssignment,
    MapBallot,
    MapFindingPhase,
    Moment,
    PairwisePlan,
    Sight,
    ThreeGroupPlan,
    Thresholds,
    TokenExplorer,
    TwoGroupPlan,
    explore_with_token,
    majority_map,
    pairing_schedule,
    run_pairwise_mapfinding,
    run_three_group_mapfinding,
    run_two_group_mapfinding,
)


def t2_for(graph):
    return 4 * graph.node_count**3


def gathered(graph, ids, byzantine=(), strategy=None):
    robots = []
    for handle, robot_id in enumerate(ids):
        robot = Robot(handle, robot_id, Honesty.HONEST, 0)
        if robot_id in byzantine:
            robot.honesty = Honesty.WEAK
            robot.strategy = strategy() if strategy else Interceptor()
        robots.append(robot)
    return SimState(graph, robots)


def drive_exploration(graph, start, n, limit=20_000):
    """Plays agent and honest token by hand: the token moves exactly when escorted."""
    explorer = TokenExplorer(n, graph.degree(start))
    agent = token = start
    entry = None
    for _ in range(limit):
        order = explorer.step(Sight(agent == token, entry, graph.degree(agent)))
        if order is None:
            return explorer.result
        entry = None
        if order.move is not None:
            target, entry = graph.follow(agent, order.move)
            if order.escort:
                assert token == agent
                token = target
            agent = target
    raise AssertionError("exploration never finished")


class Mute(Interceptor):
    def rewrite(self, tick, utterances):
        return []


class MuteAfterMuster(Interceptor):
    def rewrite(self, tick, utterances):
        return [u for u in utterances if u.kind == "muster"]


def test_thresholds():
    assert Thresholds.pairs() == Thresholds(1, 1)
    assert Thresholds.three_group(12) == Thresholds(3, 5)
    assert Thresholds.majority(4, 5) == Thresholds(3, 3)
    assert Thresholds.strong(8) == Thresholds(2, 2)
    assert Thresholds.strong(3) == Thresholds(1, 1)


def test_group_assignment_splits_sorted_ids():
    # Arrange
    ids = [40, 3, 17, 8, 25, 11, 60]

    # Act
    three = GroupAssignment.three(ids)
    two = GroupAssignment.two(ids)

    # Assert
    assert three.groups == ((3, 8), (11, 17), (25, 40, 60))
    assert two.groups == ((3, 8, 11), (17, 25, 40, 60))
    assert three.rank(17) == 4
    assert three.group_of(60) == 2
    with pytest.raises(InputError):
        three.group_of(99)


def test_group_assignment_needs_enough_robots():
    with pytest.raises(InputError):
        GroupAssignment.three([1, 2])
    with pytest.raises(InputError):
        GroupAssignment.two([1])


def test_pairing_schedule_covers_every_pair_within_budget():
    """
    Test every size up to 64: all pairs meet, nobody is paired twice in a slot, and the slot budget holds.
    """
    for n in range(1, 65):
        ids = list(range(100, 100 + n))
        schedule = pairing_schedule(ids)
        assert schedule.pairs() == {frozenset(pair) for pair in itertools.combinations(ids, 2)}
        assert schedule.slot_count <= n + 2 * log2_ceil(n)
        for slot in schedule.slots():
            members = [robot for pair in slot for robot in pair]
            assert len(members) == len(set(members))


def test_pairing_schedule_first_stage_halves():
    schedule = pairing_schedule([5, 1, 4, 2, 3])
    assert schedule.stages[0].halves == (((1, 2, 3), (4, 5)),)
    assert schedule.stages[0].slots[0] == ((1, 4), (2, 5))


@pytest.mark.parametrize("ids", [[], [3, 3]])
def test_pairing_schedule_rejects_bad_ids(ids):
    with pytest.raises(InputError):
        pairing_schedule(ids)


def test_majority_map_needs_strict_majority_counting_failures():
    # Arrange
    right = RootedMap(generate_graph(GraphSpec("path", 3))).key
    wrong = RootedMap(generate_graph(GraphSpec("path", 4))).key
    ballot = MapBallot()
    for key in (right, right, wrong, None):
        ballot.add(key)

    # Act / Assert
    assert ballot.runs == 4
    with pytest.raises(NoMajorityError):
        majority_map(ballot)
    ballot.add(right)
    assert majority_map(ballot).key == right
    assert ballot.summary().endswith("failure:1")


def test_majority_map_rejects_empty_and_failure_only_ballots():
    ballot = MapBallot()
    with pytest.raises(NoMajorityError):
        majority_map(ballot)
    ballot.add(None)
    with pytest.raises(NoMajorityError):
        majority_map(ballot)


@pytest.mark.parametrize(
    "spec",
    [
        GraphSpec("ring", 5, consistent=True),
        GraphSpec("complete", 4),
        GraphSpec("random-connected", 7, seed=2),
        GraphSpec("random-tree", 6, seed=9),
        GraphSpec("path", 1),
    ],
)
def test_token_exploration_builds_the_rooted_map(spec):
    """
    Test that an agent with a faithful token maps even fully symmetric graphs, up to canonical form.
    """
    graph = generate_graph(spec)
    for start in range(graph.node_count):
        found = drive_exploration(graph, start, graph.node_count)
        assert found.key == RootedMap(graph, start).key


def test_token_exploration_detects_an_underestimated_size():
    graph = generate_graph(GraphSpec("ring", 5, consistent=True))
    with pytest.raises(ExplorationError):
        drive_exploration(graph, 0, 3)


def test_token_exploration_detects_a_vanished_token():
    # Arrange
    graph = generate_graph(GraphSpec("ring", 4, consistent=True))
    explorer = TokenExplorer(4, 2)
    explorer.step(Sight(True, None, 2))

    # Act / Assert: the token never shows up again, so the first fetch fails
    with pytest.raises(ExplorationError):
        for _ in range(100):
            explorer.step(Sight(False, 1, graph.degree(0)))


def test_map_finding_phase_timeline():
    phase = MapFindingPhase(7, 4, ThreeGroupPlan(), t2=10, start=100)
    assert phase.window_length == 21
    assert phase.explore_rounds == 10
    assert phase.label == "map-finding"
    assert not phase.finished
    assert phase.wake_round(0) == 100


def test_map_finding_phase_rejects_non_positive_t2():
    with pytest.raises(InputError):
        MapFindingPhase(1, 4, PairwisePlan(), t2=0, start=0)


def test_pairing_slots_last_exactly_t2_rounds():
    """
    Test that a pairing slot is T2 rounds long: the first half explores, the rest walks home, the last round shares.
    """
    # Arrange
    phase = MapFindingPhase(7, 4, PairwisePlan(), t2=10, start=100)
    phase.ids = (7, 9)
    phase.runs = PairwisePlan().windows(phase.ids, 4)

    # Act
    moments = [phase._moment(100 + offset) for offset in range(11)]

    # Assert
    assert phase.window_length == 10
    assert phase.end == 110
    assert moments[0] is Moment.MUSTER
    assert moments[1:4] == [Moment.EXPLORE] * 3
    assert moments[4:9] == [Moment.RETURN] * 5
    assert moments[9] is Moment.SHARE
    assert moments[10] is Moment.AFTER


def test_pairing_slots_need_room_to_explore():
    with pytest.raises(InputError):
        MapFindingPhase(1, 4, PairwisePlan(), t2=2, start=0)
    assert MapFindingPhase(1, 4, ThreeGroupPlan(), t2=2, start=0).window_length == 5


@pytest.mark.parametrize(
    "spec",
    [GraphSpec("ring", 4, consistent=True), GraphSpec("random-connected", 5, seed=4)],
)
def test_pairwise_map_finding_with_honest_robots(spec):
    # Arrange
    graph = generate_graph(spec)
    t2 = t2_for(graph)
    state = gathered(graph, (31, 7, 19, 4))

    # Act
    result = run_pairwise_mapfinding(state, t2)

    # Assert
    expected = RootedMap(graph, 0).key
    assert not result.timed_out
    assert all(found is not None and found.key == expected for found in result.maps.values())
    assert all(ballot.runs == 3 and ballot.failures == 0 for ballot in result.ballots.values())
    slots = pairing_schedule((31, 7, 19, 4)).slot_count
    assert result.rounds <= slots * t2 + 1
    assert result.rounds <= (4 + 2 * log2_ceil(4)) * t2


def test_pairwise_map_finding_outvotes_a_mute_robot():
    """
    Test that the one bad pair of each honest robot turns into a failure that the good pairs outvote.
    """
    # Arrange
    graph = generate_graph(GraphSpec("ring", 5, consistent=True))
    state = gathered(graph, (2, 3, 5, 8, 13), byzantine={5}, strategy=MuteAfterMuster)

    # Act
    result = run_pairwise_mapfinding(state, t2_for(graph))

    # Assert
    expected = RootedMap(graph, 0).key
    assert set(result.maps) == {2, 3, 8, 13}
    assert all(found.key == expected for found in result.maps.values())
    assert all(ballot.runs == 4 and ballot.failures == 1 for ballot in result.ballots.values())


def test_three_group_map_finding_with_honest_robots():
    # Arrange
    graph = generate_graph(GraphSpec("random-connected", 6, seed=1))
    t2 = t2_for(graph)
    state = gathered(graph, (11, 12, 13, 14, 15, 16))

    # Act
    result = run_three_group_mapfinding(state, t2)

    # Assert
    expected = RootedMap(graph, 0).key
    assert all(found.key == expected for found in result.maps.values())
    assert result.rounds <= 6 * t2 + 3
    moves = [r for r in state.trace.records if r.event == "token-move"]
    assert moves
    assert all(int(support) >= int(threshold) for _, support, threshold in (r.detail.split() for r in moves))


def test_three_group_survives_a_mute_agent_group_member():
    graph = generate_graph(GraphSpec("ring", 6, consistent=True))
    state = gathered(graph, (1, 2, 3, 4, 5, 6), byzantine={1}, strategy=MuteAfterMuster)

    result = run_three_group_mapfinding(state, t2_for(graph))

    expected = RootedMap(graph, 0).key
    assert all(found.key == expected for found in result.maps.values())


@pytest.mark.parametrize("strong", [False, True])
def test_two_group_map_finding_with_honest_robots(strong):
    graph = generate_graph(GraphSpec("complete", 4))
    state = gathered(graph, (9, 3, 6, 12))

    result = run_two_group_mapfinding(state, t2_for(graph), strong=strong)

    expected = RootedMap(graph, 0).key
    assert all(found.key == expected for found in result.maps.values())
    assert all(ballot.runs == 1 for ballot in result.ballots.values())


def test_map_finding_raises_when_honest_robots_lack_a_majority():
    graph = generate_graph(GraphSpec("ring", 4, consistent=True))
    state = gathered(graph, (1, 2), byzantine={2}, strategy=Mute)
    with pytest.raises(NoMajorityError):
        run_pairwise_mapfinding(state, t2_for(graph))


def test_explore_with_token_maps_for_both_parties():
    graph = generate_graph(GraphSpec("random-tree", 5, seed=3))
    state = gathered(graph, (4, 8, 15))

    maps = explore_with_token(state, agents={4}, tokens={8, 15}, thresholds=Thresholds(1, 2), t2=t2_for(graph))

    expected = RootedMap(graph, 0).key
    assert maps[4].key == expected
    assert maps[8].key == expected
    assert maps[15].key == expected


def test_map_finding_traces_are_deterministic():
    graph = generate_graph(GraphSpec("random-connected", 5, seed=8))

    def trace():
        state = gathered(graph, (5, 1, 3))
        run_pairwise_mapfinding(state, t2_for(graph))
        return state.trace.lines()

    assert trace() == trace()


def test_two_group_plan_names():
    assert TwoGroupPlan().name == "two-group"
    assert TwoGroupPlan(strong=True).name == "strong-two-group"


def sampled_ids(n, seed):
    return tuple(random.Random(seed).sample(range(1, 10 * n), n))


def honest_maps(state):
    return [robot.program.result for robot in state.robots if robot.honesty == Honesty.HONEST]


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(20))
def test_pairwise_tolerates_three_map_liars_among_eight(seed):
    # Arrange
    graph = generate_graph(GraphSpec("random-connected", 8, seed))
    ids = sampled_ids(8, seed)
    state = gathered(graph, ids, byzantine=set(ids[:3]), strategy=MapLiar)

    # Act
    result = run_pairwise_mapfinding(state, t2_for(graph))

    # Assert
    expected = RootedMap(graph, 0).key
    assert not result.timed_out
    assert len(result.maps) == 5
    assert all(found is not None and found.key == expected for found in result.maps.values())


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(20))
def test_pairwise_loses_the_map_to_four_map_liars_among_eight(seed):
    """
    Test that four liars leave every honest robot with at most three correct runs out of seven.
    """
    # Arrange
    graph = generate_graph(GraphSpec("random-connected", 8, seed))
    ids = sampled_ids(8, seed)
    state = gathered(graph, ids, byzantine=set(ids[:4]), strategy=MapLiar)

    # Act
    with contextlib.suppress(NoMajorityError):
        run_pairwise_mapfinding(state, t2_for(graph))

    # Assert
    expected = RootedMap(graph, 0).key
    found = honest_maps(state)
    assert len(found) == 4
    assert all(result is None or result.key != expected for result in found)


@pytest.mark.slow
@pytest.mark.parametrize("strategy", [MapLiar, TokenSaboteur, GroupDefector, MuteAfterMuster])
@pytest.mark.parametrize("group", [0, 1, 2])
@pytest.mark.parametrize("n", [6, 9, 12])
def test_three_group_survives_byzantine_robots_packed_into_one_group(n, group, strategy):
    # Arrange
    graph = generate_graph(GraphSpec("random-connected", n, n))
    t2 = t2_for(graph)
    ids = sampled_ids(n, n + group)
    packed = GroupAssignment.three(ids).groups[group][: n // 3 - 1]
    state = gathered(graph, ids, byzantine=set(packed), strategy=strategy)

    # Act
    result = run_three_group_mapfinding(state, t2)

    # Assert
    expected = RootedMap(graph, 0).key
    assert not result.timed_out
    assert len(result.maps) == n - len(packed)
    assert all(found is not None and found.key == expected for found in result.maps.values())
    assert result.rounds <= 6 * t2 + 3
