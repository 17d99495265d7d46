import math
import random
from itertools import combinations

import pytest

from btlearn import bt, lfd
from btlearn.assets import resolve_scenario
from btlearn.bt import BehaviorTree, Status
from btlearn.errors import InconsistentDemos, InvalidAction, NoAchievingAction
from btlearn.lfd import (
    ActionCluster,
    DemoAction,
    DemoRecorder,
    Demonstration,
    backchain,
    cluster,
    infer_goals,
    plan_from_demos,
    record,
    replay_matches,
)
from btlearn.pool import Registry, ppa_expansion
from btlearn.world import GoalTarget, ScenarioConfig, reset
from btlearn import run_episode


@pytest.fixture(scope="module")
def exp1():
    return resolve_scenario("exp1")


def spread_world(seed=0):
    sc = ScenarioConfig.from_dict(
        {
            "name": "spread",
            "objects": [
                {"name": "KittingBox", "kind": "kitting_box", "place": {"at": [0.30, 0.0]}},
                {"name": "YellowBox", "kind": "movable_box", "place": {"at": [-0.30, 0.20]}},
                {"name": "GreenBox", "kind": "movable_box", "place": {"at": [-0.30, -0.20]}},
                {"name": "BlueBox", "kind": "movable_box", "place": {"at": [0.0, -0.30]}},
            ],
            "goal": {},
        }
    )
    return sc, reset(sc, seed)


# -- recording ---------------------------------------------------------------------


def test_record_captures_positions_in_all_candidate_frames():
    sc, st = spread_world()
    demo = record(
        st,
        [
            {"type": "pick", "object": "GreenBox"},
            {"type": "place", "release": [0.30, 0.0]},
        ],
    )
    assert len(demo.actions) == 2
    place = demo.actions[1]
    assert set(place.positions) == {"base", "YellowBox", "BlueBox", "KittingBox"}
    assert "GreenBox" not in place.positions  # own frame is degenerate
    # green landed in the kit: base position equals kit origin + kit-frame offset
    kb = place.positions["KittingBox"]
    assert kb == pytest.approx((0.0, 0.0, 0.025))


def test_record_pick_while_holding_invalid():
    _, st = spread_world()
    rec = DemoRecorder(st)
    rec.pick("GreenBox")
    with pytest.raises(InvalidAction):
        rec.pick("YellowBox")


def test_record_place_with_empty_gripper_invalid():
    _, st = spread_world()
    rec = DemoRecorder(st)
    with pytest.raises(InvalidAction):
        rec.place((0.0, 0.0, 0.0))


def test_record_empty_demo_invalid():
    _, st = spread_world()
    with pytest.raises(InvalidAction):
        DemoRecorder(st).finish()


def test_replay_reproduces_final_snapshot():
    sc, st = spread_world()
    demo = record(
        st,
        [
            {"type": "pick", "object": "YellowBox"},
            {"type": "place", "release": [0.30, 0.0]},
            {"type": "pick", "object": "GreenBox"},
            {"type": "place", "release": [0.30, 0.0]},
        ],
    )
    assert replay_matches(demo, sc)


def test_demo_document_round_trip(tmp_path):
    sc, st = spread_world()
    demo = record(
        st,
        [
            {"type": "pick", "object": "BlueBox"},
            {"type": "place", "release": [-0.1, -0.1]},
        ],
    )
    path = tmp_path / "demo.yaml"
    lfd.save_demo(demo, path)
    again = lfd.load_demo(path)
    assert again.to_dict() == demo.to_dict()
    assert replay_matches(again, sc)


# -- clustering ------------------------------------------------------------------------


def synthetic_place(obj, positions, order=0):
    return DemoAction("place", obj, order=order, positions=positions)


def make_demo(actions, scenario="synthetic", seed=0):
    return Demonstration(scenario=scenario, seed=seed, actions=actions)


def test_cluster_infers_frame_with_lowest_dispersion():
    rng = random.Random(1)
    demos = []
    ref_origins = [(-0.2, 0.1, 0.025), (0.1, -0.2, 0.025), (-0.1, -0.3, 0.025)]
    target_in_ref = (0.0, 0.0, 0.05)
    for o in ref_origins:
        noise = tuple(rng.gauss(0, 0.002) for _ in range(3))
        base_pos = tuple(o[i] + target_in_ref[i] + noise[i] for i in range(3))
        demos.append(
            make_demo(
                [
                    synthetic_place(
                        "GreenBox",
                        {
                            "base": base_pos,
                            "YellowBox": tuple(base_pos[i] - o[i] for i in range(3)),
                        },
                    )
                ]
            )
        )
    clusters = cluster(demos)
    assert len(clusters) == 1
    c = clusters[0]
    # brute-force dispersion check: max pairwise distance per frame
    base_pts = [d.actions[0].positions["base"] for d in demos]
    ref_pts = [d.actions[0].positions["YellowBox"] for d in demos]
    disp = lambda pts: max(math.dist(a, b) for a, b in combinations(pts, 2))
    assert disp(ref_pts) < 0.02 < disp(base_pts)
    assert c.frame == "YellowBox"
    assert c.dispersion == pytest.approx(disp(ref_pts))
    mean_ref = tuple(sum(p[i] for p in ref_pts) / 3 for i in range(3))
    assert c.representative == pytest.approx(mean_ref)


def test_cluster_two_demos_fall_back_to_base():
    demos = [
        make_demo([synthetic_place("GreenBox", {"base": (0.1, 0.0, 0.025), "YellowBox": (0.0, 0.0, 0.05)})]),
        make_demo([synthetic_place("GreenBox", {"base": (0.1, 0.0, 0.025), "YellowBox": (0.0, 0.0, 0.05)})]),
    ]
    c = cluster(demos)[0]
    assert c.frame == "base"


def test_cluster_all_ties_resolve_to_base():
    demos = [
        make_demo([synthetic_place("GreenBox", {"base": (0.1, 0.0, 0.025), "YellowBox": (0.0, 0.0, 0.05)})])
        for _ in range(3)
    ]
    c = cluster(demos)[0]
    assert c.dispersion == 0.0
    assert c.frame == "base"


def test_cluster_permutation_invariant():
    rng = random.Random(3)
    demos = []
    for k in range(4):
        o = (rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), 0.025)
        base_pos = (o[0], o[1], o[2] + 0.05)
        demos.append(
            make_demo(
                [
                    synthetic_place(
                        "GreenBox",
                        {"base": base_pos, "YellowBox": (0.0, 0.0, 0.05)},
                    )
                ],
                seed=k,
            )
        )
    a = cluster(demos)
    b = cluster(list(reversed(demos)))
    assert [(c.key, c.frame, c.representative) for c in a] == [
        (c.key, c.frame, c.representative) for c in b
    ]


def test_cluster_matches_by_occurrence_rank():
    # same object placed twice per demo: two clusters, rank 0 and 1
    demos = [
        make_demo(
            [
                synthetic_place("GreenBox", {"base": (0.1, 0.0, 0.025)}, order=0),
                synthetic_place("GreenBox", {"base": (0.2, 0.0, 0.025)}, order=1),
            ]
        )
        for _ in range(2)
    ]
    cs = cluster(demos)
    assert [(c.obj, c.rank) for c in cs] == [("GreenBox", 0), ("GreenBox", 1)]
    assert all(len(c.members) == 2 for c in cs)


def test_cluster_rejects_unknown_action_type():
    demos = [make_demo([DemoAction("wave", "GreenBox", 0)])]
    with pytest.raises(InconsistentDemos):
        cluster(demos)


# -- goal inference ---------------------------------------------------------------------


def stack_demo(seed=0):
    sc, st = spread_world(seed)
    return sc, record(
        st,
        [
            {"type": "pick", "object": "YellowBox"},
            {"type": "place", "release": [0.30, 0.0]},
            {"type": "pick", "object": "GreenBox"},
            {"type": "place", "release": [0.30, 0.0]},
        ],
    )


def test_single_demo_goals_in_base_frame_with_order():
    sc, demo = stack_demo()
    cons = infer_goals([demo])
    by = {g.obj: g for g in cons.goals}
    assert set(by) == {"YellowBox", "GreenBox"}
    assert by["YellowBox"].frame == "base"
    assert by["YellowBox"].position == pytest.approx((0.30, 0.0, 0.035))
    assert by["GreenBox"].position == pytest.approx((0.30, 0.0, 0.085))
    assert ("YellowBox", "GreenBox") in cons.order
    assert [g.obj for g in cons.ordered_goals()] == ["YellowBox", "GreenBox"]


def test_three_demos_infer_relational_frame():
    # yellow lands at a different table spot per demo; green always on yellow
    demos = []
    spots = [(-0.25, 0.2), (-0.1, -0.25), (0.05, 0.15)]
    sc = None
    for k, (x, y) in enumerate(spots):
        sc = ScenarioConfig.from_dict(
            {
                "name": "vary",
                "objects": [
                    {"name": "KittingBox", "kind": "kitting_box", "place": {"at": [0.30, 0.0]}},
                    {"name": "YellowBox", "kind": "movable_box", "place": {"at": [x, y]}},
                    {"name": "GreenBox", "kind": "movable_box", "place": {"at": [-0.35, -0.35]}},
                ],
                "goal": {},
            }
        )
        st = reset(sc, k)
        demos.append(
            record(
                st,
                [
                    {"type": "pick", "object": "GreenBox"},
                    {"type": "place", "release": [x, y]},  # on top of yellow
                ],
            )
        )
    cons = infer_goals(demos)
    (g,) = cons.goals
    assert g.obj == "GreenBox"
    assert g.frame == "YellowBox"
    assert g.position == pytest.approx((0.0, 0.0, 0.05), abs=1e-9)


def test_opposite_orders_drop_constraint():
    def demo(order):
        actions = []
        for i, obj in enumerate(order):
            actions.append(synthetic_place(obj, {"base": (0.1 * i, 0.0, 0.025)}, order=i))
        return make_demo(actions)

    cons = infer_goals([demo(["A", "B"]), demo(["B", "A"])])
    assert cons.order == []


def test_cyclic_orders_rejected():
    def demo(pairs):
        actions = []
        for i, obj in enumerate(pairs):
            actions.append(synthetic_place(obj, {"base": (0.1 * i, 0.0, 0.0)}, order=i))
        return make_demo(actions)

    cons = infer_goals([demo(["A", "B"]), demo(["B", "C"]), demo(["C", "A"])])
    with pytest.raises(InconsistentDemos):
        cons.ordered_goals()


# -- backchaining ------------------------------------------------------------------------


def test_backchain_single_goal_reproduces_ppa_node_for_node():
    cons = lfd.TaskConstraints(
        goals=[GoalTarget("GreenBox", (0.0, 0.0, 0.05), "YellowBox")],
        order=[],
        clusters=[],
    )
    tree = backchain(cons)
    assert tree.tokens() == ppa_expansion("GreenBox", (0.0, 0.0, 0.05), "YellowBox")
    assert tree.size() == 9
    assert tree.validate() == []


def test_backchain_goal_already_satisfied_runs_no_actions():
    sc, st = spread_world()
    pos = st.objects["GreenBox"].pose
    cons = lfd.TaskConstraints(
        goals=[GoalTarget("GreenBox", pos, "base")], order=[], clusters=[]
    )
    tree = backchain(cons)
    reg = Registry.for_scenario(sc)
    before = st.snapshot()
    res = run_episode(tree, st, reg)
    assert res.status is Status.SUCCESS
    assert res.ticks == 1
    assert st.snapshot() == before  # zero actions executed


def test_backchain_three_goals_in_stack_order():
    cons = lfd.TaskConstraints(
        goals=[
            GoalTarget("YellowBox", (0.0, 0.0, 0.025), "KittingBox"),
            GoalTarget("GreenBox", (0.0, 0.0, 0.05), "YellowBox"),
            GoalTarget("BlueBox", (0.0, 0.0, 0.05), "GreenBox"),
        ],
        order=[("YellowBox", "GreenBox"), ("GreenBox", "BlueBox")],
        clusters=[],
    )
    tree = backchain(cons)
    root = tree.root
    assert root.kind is bt.Kind.SEQUENCE
    assert len(root.children) == 3
    for child, obj in zip(root.children, ["YellowBox", "GreenBox", "BlueBox"]):
        assert bt.serialize(child)[1].startswith(f"at({obj}")
    assert tree.validate() == []


def test_backchain_without_goals_rejected():
    bad = lfd.TaskConstraints(goals=[], order=[], clusters=[])
    with pytest.raises(NoAchievingAction):
        backchain(bad)


def test_planner_soundness_from_demo_initial_state(exp1):
    sc, demo = stack_demo(seed=4)
    tree, cons = plan_from_demos([demo])
    state = lfd.demo_world(demo, sc)
    reg = Registry.for_scenario(sc)
    res = run_episode(tree, state, reg)
    assert res.status is Status.SUCCESS
    assert state.goal_reached(cons.goal_spec(sc.tolerance))


def test_frame_inference_synthetic_trials():
    """Known ground-truth frame recovered under mm noise, 30 seeded trials."""
    hits = 0
    for trial in range(30):
        rng = random.Random(1000 + trial)
        demos = []
        true_offset = (0.0, 0.05, 0.0)
        for _ in range(3):
            ref = (rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), 0.025)
            distractor = (rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), 0.025)
            placed = tuple(
                ref[i] + true_offset[i] + rng.gauss(0, 0.002) for i in range(3)
            )
            demos.append(
                make_demo(
                    [
                        synthetic_place(
                            "Box",
                            {
                                "base": placed,
                                "RefBox": tuple(placed[i] - ref[i] for i in range(3)),
                                "OtherBox": tuple(placed[i] - distractor[i] for i in range(3)),
                            },
                        )
                    ]
                )
            )
        spread = lambda pts: max(math.dist(a, b) for a, b in combinations(pts, 2))
        base_spread = spread([d.actions[0].positions["base"] for d in demos])
        other_spread = spread([d.actions[0].positions["OtherBox"] for d in demos])
        if base_spread < 0.05 or other_spread < 0.05:
            continue  # distractor-frame spread precondition not met; skip trial
        c = cluster(demos)[0]
        assert c.frame == "RefBox"
        hits += 1
    assert hits >= 20
