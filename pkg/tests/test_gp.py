import random
from collections import Counter

import pytest

from btlearn import bt, gp
from btlearn.assets import resolve_scenario
from btlearn.bt import BehaviorTree, EpisodeResult, Kind, Status
from btlearn.errors import InvalidBaseline
from btlearn.gp import (
    EvalContext,
    EvolutionState,
    FitnessParams,
    GpConfig,
    Individual,
    crossover,
    evaluate,
    fitness,
    init_state,
    mutate,
    seed_baseline,
    step_generation,
    tournament_select,
)
from btlearn.pool import Registry, ppa_token
from btlearn.world import GoalSpec, GoalTarget, ScenarioConfig, reset


@pytest.fixture(scope="module")
def exp1():
    return resolve_scenario("exp1")


@pytest.fixture(scope="module")
def exp1_registry(exp1):
    return Registry.for_scenario(exp1)


def make_ctx(scenario, goal=None, seed=0, tick_budget=300):
    return EvalContext(
        scenario=scenario,
        goal=goal if goal is not None else scenario.goal,
        params=FitnessParams(),
        tick_budget=tick_budget,
        scenario_seed=seed,
    )


def plain_world():
    sc = ScenarioConfig.from_dict(
        {
            "name": "plain",
            "objects": [
                {"name": "A", "kind": "movable_box", "place": {"at": [0.0, 0.0]}},
            ],
            "goal": {},
        }
    )
    return sc, reset(sc, 0)


def dummy_tree(n_leaves):
    leaves = [bt.behavior(f"x{i}!") for i in range(n_leaves)]
    return BehaviorTree(leaves[0] if n_leaves == 1 else bt.Node(Kind.SEQUENCE, children=leaves))


# -- fitness: the three substitution cases, tolerance 0 ------------------------------


def test_fitness_all_at_goal_success():
    _, st = plain_world()
    goal = GoalSpec(targets=(GoalTarget("A", st.objects["A"].pose, "base"),))
    tree = dummy_tree(4)  # root + 4 leaves = 5 nodes
    assert tree.size() == 5
    res = EpisodeResult(Status.SUCCESS, 1, False)
    assert fitness(st, goal, tree, res, FitnessParams()) == -50.0


def test_fitness_residual_and_timeout():
    _, st = plain_world()
    st.objects["A"].pose = (0.0, 0.0, 0.025)
    goal = GoalSpec(targets=(GoalTarget("A", (0.03, 0.0, 0.025), "base"),))
    tree = dummy_tree(6)  # 7 nodes
    res = EpisodeResult(Status.RUNNING, 300, True)
    assert fitness(st, goal, tree, res, FitnessParams()) == -130.0


def test_fitness_residual_and_failure():
    _, st = plain_world()
    st.objects["A"].pose = (0.0, 0.0, 0.025)
    goal = GoalSpec(targets=(GoalTarget("A", (0.1, 0.0, 0.025), "base"),))
    tree = dummy_tree(2)  # 3 nodes
    res = EpisodeResult(Status.FAILURE, 1, False)
    assert fitness(st, goal, tree, res, FitnessParams()) == -180.0


def test_fitness_subgoal_bonus_added():
    _, st = plain_world()
    from btlearn.world import Subgoal

    sub = Subgoal("parked", targets=(GoalTarget("A", st.objects["A"].pose, "base"),), bonus=100.0)
    goal = GoalSpec(targets=(GoalTarget("A", st.objects["A"].pose, "base"),), subgoals=(sub,))
    st.install_subgoals((sub,))
    st.apply_pick("A")
    st.apply_place((0.0, 0.0, 0.0), "base")  # back where it was: latches the subgoal
    tree = dummy_tree(1)
    res = EpisodeResult(Status.SUCCESS, 1, False)
    assert fitness(st, goal, tree, res, FitnessParams()) == pytest.approx(-10.0 + 100.0)


# -- mutation ------------------------------------------------------------------------


EMPTY_REG = Registry([], "toy")


def test_delete_collapses_emptied_control():
    rng = random.Random(0)
    # force deletion of the fallback's only child until it happens
    for _ in range(50):
        h = gp._Holder(bt.sequence(bt.fallback(bt.behavior("a!")), bt.behavior("b!")), EMPTY_REG)
        if gp._op_delete(h, rng) and bt.size(h.root) == 2:
            assert bt.validate(h.root) == []
            assert bt.serialize(h.root) == ["s(", "b!", ")"]
            return
    raise AssertionError("never sampled the collapsing deletion")


def test_delete_only_node_rejected():
    h = gp._Holder(bt.behavior("a!"), EMPTY_REG)
    assert gp._op_delete(h, random.Random(0)) is False


def test_change_can_swap_condition_for_action():
    rng = random.Random(1)
    cfg = GpConfig(control_node_prob=0.0)
    seen_kind_change = False
    for _ in range(50):
        h = gp._Holder(bt.sequence(bt.behavior("p?"), bt.behavior("a!")), EMPTY_REG)
        gp._op_change(h, [("z!",)], cfg, rng)
        kinds = [n.kind for n in bt.preorder(h.root)]
        if kinds.count(Kind.CONDITION) == 0 and bt.size(h.root) >= 2:
            seen_kind_change = True
            break
    assert seen_kind_change


def test_mutants_always_validate(exp1_registry):
    rng = random.Random(3)
    cfg = GpConfig()
    ind = gp.random_individual(exp1_registry, rng)
    for _ in range(300):
        ind = mutate(ind, exp1_registry, cfg, rng)
        assert ind.tree().validate() == []


def test_mutation_operator_frequencies(exp1_registry):
    rng = random.Random(0)
    cfg = GpConfig()
    stats = Counter()
    ind = gp.random_individual(exp1_registry, rng)
    while sum(stats.values()) < 1000:
        ind = mutate(ind, exp1_registry, cfg, rng, op_stats=stats)
    total = sum(stats.values())
    assert abs(stats["add"] / total - 0.10) < 0.05
    assert abs(stats["delete"] / total - 0.50) < 0.05
    assert abs(stats["change"] / total - 0.40) < 0.05


def test_mutate_exhaustion_returns_parent_unchanged():
    # a single-leaf tree with an empty gene list cannot be varied validly when
    # every op draw is 'add' of an execution node... use delete-only config
    cfg = GpConfig(mutation_probs={"add": 0.0, "delete": 1.0, "change": 0.0})
    ind = Individual(("solo!",))
    out = mutate(ind, EMPTY_REG, cfg, random.Random(0))
    assert out.genome == ind.genome
    assert out.provenance == "mutant"


# -- crossover -----------------------------------------------------------------------


def test_crossover_of_single_gene_trees_combines_both():
    a, b = Individual(("a!",)), Individual(("b!",))
    ca, cb = crossover(a, b, EMPTY_REG, random.Random(0))
    for child, expected in [(ca, {"a!", "b!"}), (cb, {"a!", "b!"})]:
        root = bt.deserialize(list(child.genome))
        assert root.is_control
        leaves = {n.behavior_id for n in bt.preorder(root) if not n.is_control}
        assert leaves == expected


def test_crossover_insertion_hint_first_child():
    a = Individual(tuple("s( x! y! )".split()))
    b = Individual(("donated!",))
    ca, _ = crossover(a, b, EMPTY_REG, random.Random(0), insertion_hint=gp.FIRST_CHILD_OF_ROOT)
    root = bt.deserialize(list(ca.genome))
    assert root.children[0].behavior_id == "donated!"


def test_crossover_children_validate(exp1_registry):
    rng = random.Random(5)
    pop = [gp.random_individual(exp1_registry, rng) for _ in range(20)]
    for _ in range(200):
        a, b = rng.sample(pop, 2)
        ca, cb = crossover(a, b, exp1_registry, rng)
        assert ca.tree().validate() == []
        assert cb.tree().validate() == []
        pop[rng.randrange(len(pop))] = ca


# -- evaluation -----------------------------------------------------------------------


def test_duplicate_genomes_share_one_episode(exp1, exp1_registry):
    ctx = make_ctx(exp1)
    cache = {}
    pop = [Individual(("gripper_empty?",)) for _ in range(5)]
    episodes = evaluate(pop, ctx, cache, exp1_registry)
    assert episodes == 1
    assert len({i.fitness for i in pop}) == 1


def test_empty_effect_tree_scores_initial_distance(exp1, exp1_registry):
    ctx = make_ctx(exp1, seed=0)
    st = reset(exp1, 0)
    d0 = st.goal_distance_mm(exp1.goal)
    pop = [Individual(("gripper_empty?",))]
    evaluate(pop, ctx, {}, exp1_registry)
    assert pop[0].fitness == pytest.approx(-d0 - 10.0)
    assert pop[0].status == "SUCCESS"


def test_known_solution_scores_length_only(exp1, exp1_registry):
    # canonical representation: the two pick&place genes expanded inline
    sol = tuple(
        ["s("]
        + exp1_registry.expand(ppa_token("YellowBox", (0.0, 0.0, 0.05), "KittingBox"))
        + exp1_registry.expand(ppa_token("GreenBox", (0.0, 0.0, 0.1), "YellowBox"))
        + [")"]
    )
    ctx = make_ctx(exp1, seed=0)
    pop = [Individual(sol)]
    evaluate(pop, ctx, {}, exp1_registry)
    # 19 nodes, zero distance (up to float noise in stacked heights), Success
    assert pop[0].fitness == pytest.approx(-190.0, abs=1e-9)
    assert pop[0].solved


def test_parallel_evaluation_matches_serial(exp1, exp1_registry):
    rng = random.Random(11)
    pop_a = [gp.random_individual(exp1_registry, rng) for _ in range(12)]
    pop_b = [Individual(p.genome) for p in pop_a]
    ctx = make_ctx(exp1)
    evaluate(pop_a, ctx, {}, exp1_registry, jobs=1)
    evaluate(pop_b, ctx, {}, exp1_registry, jobs=2)
    assert [i.fitness for i in pop_a] == [i.fitness for i in pop_b]


# -- selection ------------------------------------------------------------------------


def ind(fit, tag):
    return Individual((f"{tag}!",), fitness=fit)


def test_two_individuals_better_survives():
    rng = random.Random(0)
    pop = [ind(-10, "a"), ind(-20, "b")]
    assert tournament_select(pop, 1, rng)[0].fitness == -10


def test_ties_keep_survivor_count():
    rng = random.Random(0)
    pop = [ind(-5.0, f"t{i}") for i in range(9)]
    assert len(tournament_select(pop, 4, rng)) == 4


def test_best_always_survives_worst_never():
    for seed in range(300):
        rng = random.Random(seed)
        pop = [ind(-float(i * 3 + 7), f"i{i}") for i in range(20)]
        rng.shuffle(pop)
        survivors = tournament_select(pop, 7, rng)
        fits = [s.fitness for s in survivors]
        assert max(p.fitness for p in pop) in fits
        assert min(p.fitness for p in pop) not in fits
        assert len(survivors) == 7


# -- generation loop ---------------------------------------------------------------------


def test_step_generation_history_and_monotonic_best(exp1, exp1_registry):
    cfg = GpConfig(seed=4)
    state = init_state(exp1_registry, cfg)
    ctx = make_ctx(exp1, seed=4)
    best = []
    for g in range(8):
        step_generation(state, ctx, exp1_registry, cfg)
        assert state.generation == g + 1
        assert len(state.history) == state.generation + 1
        best.append(state.history[-1]["best_fitness"])
    assert best == sorted(best)  # elitism: non-decreasing
    assert all(len(state.population) == cfg.population_size for _ in [0])
    for i in state.population:
        assert i.tree().validate() == []


def test_run_determinism_and_resume(exp1, exp1_registry):
    cfg = GpConfig(seed=9)
    ctx = make_ctx(exp1, seed=9)

    full = init_state(exp1_registry, cfg)
    for _ in range(6):
        step_generation(full, ctx, exp1_registry, cfg)

    part = init_state(exp1_registry, cfg)
    for _ in range(3):
        step_generation(part, ctx, exp1_registry, cfg)
    rebuilt = EvolutionState.from_dict(part.to_dict())  # checkpoint round-trip
    for _ in range(3):
        step_generation(rebuilt, ctx, exp1_registry, cfg)

    assert rebuilt.history == full.history
    assert [i.text for i in rebuilt.population] == [i.text for i in full.population]


def test_seed_baseline_injects_copies(exp1, exp1_registry):
    cfg = GpConfig(seed=2)
    state = init_state(exp1_registry, cfg)
    ctx = make_ctx(exp1, seed=2)
    step_generation(state, ctx, exp1_registry, cfg)
    tree = BehaviorTree.from_tokens([ppa_token("BlueBox", (0.0, 0.0, 0.1), "GreenBox")])
    seed_baseline(state, tree, cfg)
    texts = [i.text for i in state.population]
    assert texts.count(tree.text()) >= 1
    assert len(state.population) == cfg.population_size
    assert tree.text() in state.baselines


def test_seed_baseline_rejects_invalid_tree(exp1_registry):
    cfg = GpConfig()
    state = init_state(exp1_registry, cfg)
    bad = BehaviorTree(bt.sequence(bt.behavior("a!"), bt.behavior("p?")))
    with pytest.raises(InvalidBaseline):
        seed_baseline(state, bad, cfg)


def test_goal_change_invalidates_and_drops_fitness(exp1, exp1_registry):
    cfg = GpConfig(seed=6)
    state = init_state(exp1_registry, cfg)
    ctx = make_ctx(exp1, seed=6)
    for _ in range(3):
        step_generation(state, ctx, exp1_registry, cfg)
    before = state.history[-1]["best_fitness"]
    harder = GoalSpec(
        targets=exp1.goal.targets
        + (GoalTarget("BlueBox", (0.30, 0.0, 0.26), "base"),)
    )
    state.invalidate_fitness()
    ctx2 = make_ctx(exp1, goal=harder, seed=6)
    step_generation(state, ctx2, exp1_registry, cfg)
    after = state.history[-1]["best_fitness"]
    assert after < before  # the characteristic drop at a target change
