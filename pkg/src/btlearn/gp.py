"""Genetic programming over behavior-tree genomes.

Constrained add/delete/change mutation and subtree-insertion crossover,
distance-based fitness with length/timeout/failure penalties and optional
subgoal bonuses, pairwise tournament survival with elitism, and a fully
serializable evolution state for pause/resume.

Every stochastic draw comes from one seeded ``random.Random`` owned by the
evolution state, so a run is reproducible bit-for-bit; episode evaluation is
deterministic and draws nothing.
"""

from __future__ import annotations

import random
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any

from . import bt
from .bt import BehaviorTree, Kind, Node, Status
from .errors import InvalidBaseline
from .pool import PoolConfig, Registry
from .world import GoalSpec, ScenarioConfig, WorldState, reset

CONTROL_CHOICES = (Kind.SEQUENCE, Kind.FALLBACK)
FIRST_CHILD_OF_ROOT = "first_child_of_root"
REPAIR_ATTEMPTS = 25


@dataclass
class GpConfig:
    population_size: int = 16
    mutation_parents: int = 12
    mutation_offspring_per_parent: int = 2
    max_mutations_per_individual: int = 3
    mutation_probs: dict[str, float] = field(
        default_factory=lambda: {"add": 0.10, "delete": 0.50, "change": 0.40}
    )
    crossover_parents: int = 4
    crossover_offspring_per_parent: int = 2
    elites: int = 2
    selection: str = "tournament"
    tick_budget: int = 300
    control_node_prob: float = 0.3  # add/change draw a control vs execution node
    baseline_donor_prob: float = 1.0  # crossover donor is a baseline when present
    baseline_copies: int = 2
    seed: int = 0

    def __post_init__(self) -> None:
        total = sum(self.mutation_probs.values())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"mutation probabilities must sum to 1, got {total}")
        if self.mutation_parents > self.population_size:
            raise ValueError("more mutation parents than population")
        if self.elites >= self.population_size:
            raise ValueError("elites must be fewer than the population")

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "GpConfig":
        return cls(**d)

    def to_dict(self) -> dict[str, Any]:
        return {
            "population_size": self.population_size,
            "mutation_parents": self.mutation_parents,
            "mutation_offspring_per_parent": self.mutation_offspring_per_parent,
            "max_mutations_per_individual": self.max_mutations_per_individual,
            "mutation_probs": dict(self.mutation_probs),
            "crossover_parents": self.crossover_parents,
            "crossover_offspring_per_parent": self.crossover_offspring_per_parent,
            "elites": self.elites,
            "selection": self.selection,
            "tick_budget": self.tick_budget,
            "control_node_prob": self.control_node_prob,
            "baseline_donor_prob": self.baseline_donor_prob,
            "baseline_copies": self.baseline_copies,
            "seed": self.seed,
        }


@dataclass
class FitnessParams:
    length_penalty: float = 10.0   # per node
    timeout_penalty: float = 30.0
    failure_penalty: float = 50.0

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "FitnessParams":
        return cls(
            length_penalty=float(d.get("length_penalty", 10.0)),
            timeout_penalty=float(d.get("timeout_penalty", 30.0)),
            failure_penalty=float(d.get("failure_penalty", 50.0)),
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "length_penalty": self.length_penalty,
            "timeout_penalty": self.timeout_penalty,
            "failure_penalty": self.failure_penalty,
        }


@dataclass
class Individual:
    genome: tuple[str, ...]
    fitness: float | None = None
    provenance: str = "random"
    status: str = ""
    distance_mm: float | None = None
    solved: bool = False  # episode ended Success with every goal target in tolerance

    @property
    def text(self) -> str:
        return " ".join(self.genome)

    def tree(self) -> BehaviorTree:
        return BehaviorTree.from_tokens(list(self.genome))


def fitness(state_after: WorldState, goal: GoalSpec, tree: BehaviorTree,
            run_result: bt.EpisodeResult, params: FitnessParams) -> float:
    """Distance error (mm) plus structural penalties, minus earned bonuses."""
    score = -state_after.goal_distance_mm(goal)
    score -= params.length_penalty * tree.size()
    if run_result.timed_out:
        score -= params.timeout_penalty
    if run_result.status is Status.FAILURE:
        score -= params.failure_penalty
    for sub in goal.subgoals:
        if sub.name in state_after.satisfied_subgoals:
            score += sub.bonus
    return score


# -- evaluation -----------------------------------------------------------------


@dataclass
class EvalContext:
    scenario: ScenarioConfig
    goal: GoalSpec
    params: FitnessParams
    tick_budget: int
    scenario_seed: int
    pool_config: PoolConfig | None = None


def evaluate_genome(genome: tuple[str, ...], ctx: EvalContext,
                    registry: Registry | None = None) -> dict[str, Any]:
    """One fresh episode; pure in (genome, ctx)."""
    if registry is None:
        registry = Registry.for_scenario(ctx.scenario, ctx.pool_config)
    state = reset(ctx.scenario, ctx.scenario_seed)
    state.install_subgoals(ctx.goal.subgoals)
    tree = BehaviorTree.from_tokens(list(genome))
    from .pool import run_episode

    result = run_episode(tree, state, registry, max_ticks=ctx.tick_budget)
    return {
        "fitness": fitness(state, ctx.goal, tree, result, ctx.params),
        "status": result.status.value,
        "ticks": result.ticks,
        "timed_out": result.timed_out,
        "distance_mm": state.goal_distance_mm(ctx.goal),
        "solved": result.status is Status.SUCCESS and state.goal_reached(ctx.goal),
    }


def _evaluate_batch(genomes: list[tuple[str, ...]], ctx: EvalContext) -> list[dict[str, Any]]:
    registry = Registry.for_scenario(ctx.scenario, ctx.pool_config)
    return [evaluate_genome(g, ctx, registry) for g in genomes]


def evaluate(population: list[Individual], ctx: EvalContext,
             cache: dict[str, dict[str, Any]], registry: Registry, jobs: int = 1) -> int:
    """Fill in missing fitnesses; returns the number of episodes simulated.

    Duplicate genomes share one episode through the cache; evaluation order
    cannot influence anything because episodes are independent and pure.
    """
    pending: list[Individual] = []
    for ind in population:
        if ind.fitness is not None:
            continue
        hit = cache.get(ind.text)
        if hit is not None:
            _assign(ind, hit)
        else:
            pending.append(ind)
    todo: dict[str, list[Individual]] = {}
    for ind in pending:
        todo.setdefault(ind.text, []).append(ind)
    genomes = [inds[0].genome for inds in todo.values()]
    if not genomes:
        return 0
    if jobs <= 1 or len(genomes) < 4:
        results = [evaluate_genome(g, ctx, registry) for g in genomes]
    else:
        chunks = [genomes[i::jobs] for i in range(jobs)]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_evaluate_batch, chunks, [ctx] * len(chunks)))
        results = [None] * len(genomes)
        for j, chunk in enumerate(chunks):
            for k, _ in enumerate(chunk):
                results[j + k * jobs] = parts[j][k]
    for (text, inds), res in zip(todo.items(), results):
        cache[text] = res
        for ind in inds:
            _assign(ind, res)
    return len(genomes)


def _assign(ind: Individual, res: dict[str, Any]) -> None:
    ind.fitness = res["fitness"]
    ind.status = res["status"]
    ind.distance_mm = res["distance_mm"]
    ind.solved = bool(res.get("solved", False))


# -- variation operators -----------------------------------------------------------


def _nodes_with_parent(root: Node) -> list[tuple[Node, Node | None, int]]:
    """All (node, parent, child-index) entries in preorder."""
    out: list[tuple[Node, Node | None, int]] = [(root, None, 0)]

    def walk(node: Node) -> None:
        for i, child in enumerate(node.children):
            out.append((child, node, i))
            walk(child)

    walk(root)
    return out


def _gene_boundaries(root: Node, registry: Registry) -> tuple[set[int], set[int]]:
    """Identify pool-gene subtrees inside a genome.

    Returns (gene_roots, interiors) as `id()` sets.  A subtree whose
    serialization matches a pool gene's fragment is that gene: mutation moves
    it as a whole and never edits inside it.  Demonstration-derived material
    never matches (its targets are not pool positions), so it stays open to
    every operator.
    """
    gene_roots: set[int] = set()
    interiors: set[int] = set()
    texts: dict[int, str] = {}

    def walk(node: Node) -> str:
        parts = [walk(c) for c in node.children]
        if node.kind is Kind.SEQUENCE:
            text = "s( " + " ".join(parts) + " )"
        elif node.kind is Kind.FALLBACK:
            text = "f( " + " ".join(parts) + " )"
        else:
            text = node.behavior_id
        texts[id(node)] = text
        return text

    walk(root)
    for node in bt.preorder(root):
        if texts[id(node)] in registry.fragment_index and id(node) not in interiors:
            gene_roots.add(id(node))
            for inner in bt.preorder(node):
                if inner is not node:
                    interiors.add(id(inner))
    return gene_roots, interiors


class _Holder:
    """Mutable root slot so operators can replace the root itself."""

    def __init__(self, root: Node, registry: Registry):
        self.root = root
        self.registry = registry

    def targets(self) -> list[tuple[Node, Node | None, int]]:
        """Nodes an operator may act on: everything except gene interiors."""
        _, interiors = _gene_boundaries(self.root, self.registry)
        return [(n, p, i) for n, p, i in _nodes_with_parent(self.root) if id(n) not in interiors]

    def insertion_parents(self) -> list[Node]:
        """Control nodes that may receive a new child (not part of a gene)."""
        gene_roots, interiors = _gene_boundaries(self.root, self.registry)
        return [
            n
            for n in bt.preorder(self.root)
            if n.is_control and id(n) not in interiors and id(n) not in gene_roots
        ]


def _fragment_node(fragment: tuple[str, ...]) -> Node:
    return bt.deserialize(list(fragment))


def _insert_subtree(holder: _Holder, new_node: Node, rng: random.Random) -> None:
    parents = holder.insertion_parents()
    if not parents:
        holder.root = Node(rng.choice(CONTROL_CHOICES), children=[holder.root])
        parents = [holder.root]
    parent = rng.choice(parents)
    idx = rng.randint(0, len(parent.children))
    parent.children.insert(idx, new_node)


def _op_add(holder: _Holder, fragments: list[tuple[str, ...]], config: GpConfig,
            rng: random.Random) -> bool:
    if rng.random() < config.control_node_prob:
        # a single-child wrapper would normalize away, so group ≥2 siblings
        parents = [p for p in holder.insertion_parents() if len(p.children) >= 2]
        if not parents:
            return False
        parent = rng.choice(parents)
        i = rng.randint(0, len(parent.children) - 2)
        j = rng.randint(i + 2, len(parent.children))
        group = Node(rng.choice(CONTROL_CHOICES), children=parent.children[i:j])
        parent.children[i:j] = [group]
    else:
        _insert_subtree(holder, _fragment_node(rng.choice(fragments)), rng)
    return True


def _op_delete(holder: _Holder, rng: random.Random) -> bool:
    candidates = [(n, p, i) for n, p, i in holder.targets() if p is not None]
    if not candidates:
        return False  # cannot delete the only node
    _, parent, idx = rng.choice(candidates)
    del parent.children[idx]
    # collapse now-childless ancestors instead of leaving invalid controls
    while not parent.children:
        entry = next(
            ((p, i) for n, p, i in _nodes_with_parent(holder.root) if n is parent), None
        )
        if entry is None or entry[0] is None:
            return False  # the root itself emptied out; reject this attempt
        grand, gidx = entry
        del grand.children[gidx]
        parent = grand
    return True


def _op_change(holder: _Holder, fragments: list[tuple[str, ...]], config: GpConfig,
               rng: random.Random) -> bool:
    gene_roots, _ = _gene_boundaries(holder.root, holder.registry)
    node, parent, idx = rng.choice(holder.targets())
    if rng.random() < config.control_node_prob and node.is_control and id(node) not in gene_roots:
        node.kind = Kind.FALLBACK if node.kind is Kind.SEQUENCE else Kind.SEQUENCE
    else:
        # leaves and whole genes swap for another gene fragment
        new = _fragment_node(rng.choice(fragments))
        if parent is None:
            holder.root = new
        else:
            parent.children[idx] = new
    return True


def mutate(ind: Individual, registry: Registry, config: GpConfig, rng: random.Random,
           op_stats: Counter | None = None) -> Individual:
    """1..N point mutations; resampled until the result passes validation.

    Pool genes are swapped/removed as whole subtrees; only material outside
    them (control structure, demonstration-derived nodes) is edited freely.
    After the attempt cap the parent is returned unchanged, which keeps the
    population size stable without biasing repairs.
    """
    fragments = registry.gene_fragments()
    # canonical op order: the draw->operator mapping must not depend on dict
    # insertion order or it would break resume determinism
    ops = sorted(config.mutation_probs)
    weights = [config.mutation_probs[o] for o in ops]
    for _ in range(REPAIR_ATTEMPTS):
        holder = _Holder(bt.deserialize(list(ind.genome)), registry)
        n = rng.randint(1, config.max_mutations_per_individual)
        drawn = rng.choices(ops, weights=weights, k=n)
        if op_stats is not None:
            op_stats.update(drawn)
        ok = True
        for op in drawn:
            if op == "add":
                ok = _op_add(holder, fragments, config, rng)
            elif op == "delete":
                ok = _op_delete(holder, rng)
            else:
                ok = _op_change(holder, fragments, config, rng)
            if not ok:
                break
        if ok:
            holder.root = bt.normalize(holder.root)
            if not bt.validate(holder.root):
                return Individual(tuple(bt.serialize(holder.root)), provenance="mutant")
    return Individual(ind.genome, provenance="mutant")


def crossover(a: Individual, b: Individual, registry: Registry, rng: random.Random,
              insertion_hint: str | None = None,
              hint_applies_to: str = "both") -> tuple[Individual, Individual]:
    """A random subtree of each parent is inserted into the other.

    Cut points respect gene boundaries (a gene is donated whole), but material
    inside demonstrated trees is fair game.  With the first-child hint the
    donated subtree lands as the first child of the recipient's root;
    ``hint_applies_to`` narrows that to one direction ("a" means material
    donated INTO a, i.e. when b is a demonstrated baseline).
    """
    hint_a = insertion_hint if hint_applies_to in ("a", "both") else None
    hint_b = insertion_hint if hint_applies_to in ("b", "both") else None
    child_a = _insert_donation(a, b, registry, rng, hint_a)
    child_b = _insert_donation(b, a, registry, rng, hint_b)
    return child_a, child_b


def _insert_donation(recipient: Individual, donor: Individual, registry: Registry,
                     rng: random.Random, insertion_hint: str | None) -> Individual:
    donor_root = bt.deserialize(list(donor.genome))
    _, donor_interiors = _gene_boundaries(donor_root, registry)
    # the hint donates the demonstrated tree whole; plain crossover cuts anywhere
    if insertion_hint == FIRST_CHILD_OF_ROOT:
        cut_points = [donor_root]
    else:
        cut_points = [n for n in bt.preorder(donor_root) if id(n) not in donor_interiors]
    for _ in range(REPAIR_ATTEMPTS):
        holder = _Holder(bt.deserialize(list(recipient.genome)), registry)
        donated = rng.choice(cut_points).clone()
        if insertion_hint == FIRST_CHILD_OF_ROOT:
            gene_roots, _ = _gene_boundaries(holder.root, registry)
            if holder.root.is_control and id(holder.root) not in gene_roots:
                holder.root.children.insert(0, donated)
            else:
                holder.root = Node(Kind.SEQUENCE, children=[donated, holder.root])
        else:
            _insert_subtree(holder, donated, rng)
        holder.root = bt.normalize(holder.root)
        if not bt.validate(holder.root):
            return Individual(tuple(bt.serialize(holder.root)), provenance="crossover")
    return Individual(recipient.genome, provenance="crossover")


# -- selection ------------------------------------------------------------------------


def tournament_pick(population: list[Individual], rng: random.Random) -> Individual:
    """Reproduction selection: the better of one random pair."""
    a, b = rng.sample(population, 2) if len(population) >= 2 else (population[0], population[0])
    if a.fitness == b.fitness:
        return a if rng.random() < 0.5 else b
    return a if a.fitness > b.fitness else b


def tournament_select(population: list[Individual], n_survivors: int,
                      rng: random.Random) -> list[Individual]:
    """Pairwise elimination until ``n_survivors`` remain.

    Each round pairs as many individuals as still need eliminating (up to
    half the pool); the current worst is always placed in a pair, so the
    globally worst individual can never survive, while the best never loses.
    """
    if n_survivors >= len(population):
        return list(population)
    pool = list(population)
    while len(pool) > n_survivors:
        k = min(len(pool) // 2, len(pool) - n_survivors)
        order = list(range(len(pool)))
        rng.shuffle(order)
        worst = min(range(len(pool)), key=lambda i: (pool[i].fitness, -i))
        pos = order.index(worst)
        if pos >= 2 * k:
            order[pos], order[0] = order[0], order[pos]
        winners: list[Individual] = []
        for i in range(0, 2 * k, 2):
            x, y = pool[order[i]], pool[order[i + 1]]
            if x.fitness == y.fitness:
                winners.append(x if rng.random() < 0.5 else y)
            else:
                winners.append(x if x.fitness > y.fitness else y)
        pool = winners + [pool[i] for i in order[2 * k:]]
    return pool


# -- evolution state ---------------------------------------------------------------------


@dataclass
class EvolutionState:
    population: list[Individual]
    rng: random.Random
    scenario_seed: int
    generation: int = 0
    episodes: int = 0
    history: list[dict[str, Any]] = field(default_factory=list)
    baselines: list[str] = field(default_factory=list)
    insertion_hint: str | None = None
    cache: dict[str, dict[str, Any]] = field(default_factory=dict)
    op_stats: Counter = field(default_factory=Counter)

    def best(self) -> Individual:
        return max(self.population, key=lambda i: (i.fitness if i.fitness is not None else -1e18))

    def invalidate_fitness(self) -> None:
        """Goal or scenario changed: cached scores no longer mean anything."""
        self.cache.clear()
        for ind in self.population:
            ind.fitness = None
            ind.status = ""
            ind.distance_mm = None

    def to_dict(self) -> dict[str, Any]:
        st = self.rng.getstate()
        return {
            "format_version": 1,
            "generation": self.generation,
            "episodes": self.episodes,
            "scenario_seed": self.scenario_seed,
            "population": [
                {
                    "genome": ind.text,
                    "fitness": ind.fitness,
                    "provenance": ind.provenance,
                    "status": ind.status,
                    "distance_mm": ind.distance_mm,
                    "solved": ind.solved,
                }
                for ind in self.population
            ],
            "rng_state": [st[0], list(st[1]), st[2]],
            "history": self.history,
            "baselines": self.baselines,
            "insertion_hint": self.insertion_hint,
            "cache": self.cache,
            "op_stats": dict(self.op_stats),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "EvolutionState":
        rng = random.Random()
        s = d["rng_state"]
        rng.setstate((s[0], tuple(s[1]), s[2]))
        return cls(
            population=[
                Individual(
                    genome=tuple(p["genome"].split()),
                    fitness=p["fitness"],
                    provenance=p["provenance"],
                    status=p.get("status", ""),
                    distance_mm=p.get("distance_mm"),
                    solved=bool(p.get("solved", False)),
                )
                for p in d["population"]
            ],
            rng=rng,
            scenario_seed=d["scenario_seed"],
            generation=d["generation"],
            episodes=d["episodes"],
            history=list(d["history"]),
            baselines=list(d["baselines"]),
            insertion_hint=d.get("insertion_hint"),
            cache=dict(d["cache"]),
            op_stats=Counter(d.get("op_stats", {})),
        )


def random_individual(registry: Registry, rng: random.Random) -> Individual:
    """1-4 pool genes under a random control root (a bare gene when single)."""
    fragments = registry.gene_fragments()
    for _ in range(REPAIR_ATTEMPTS):
        k = rng.randint(1, 4)
        chosen = [_fragment_node(rng.choice(fragments)) for _ in range(k)]
        if k == 1:
            root = chosen[0]
        else:
            root = Node(rng.choice(CONTROL_CHOICES), children=chosen)
        if not bt.validate(root):
            return Individual(tuple(bt.serialize(root)), provenance="random")
    return Individual(tuple(rng.choice(fragments)), provenance="random")


def init_state(registry: Registry, config: GpConfig, scenario_seed: int | None = None) -> EvolutionState:
    rng = random.Random(config.seed)
    population = [random_individual(registry, rng) for _ in range(config.population_size)]
    return EvolutionState(
        population=population,
        rng=rng,
        scenario_seed=config.seed if scenario_seed is None else scenario_seed,
    )


def seed_baseline(state: EvolutionState, tree: BehaviorTree, config: GpConfig) -> EvolutionState:
    """Register a demonstrated tree and inject copies over the worst individuals."""
    if tree.validate():
        raise InvalidBaseline(f"baseline violates constraints: {tree.validate()}")
    text = tree.text()
    state.baselines.append(text)
    copies = min(config.baseline_copies, len(state.population) - 1)
    order = sorted(
        range(len(state.population)),
        key=lambda i: (
            state.population[i].fitness if state.population[i].fitness is not None else -1e18,
            -i,
        ),
    )
    for slot in order[:copies]:
        state.population[slot] = Individual(tuple(text.split()), provenance="baseline")
    return state


def _history_entry(state: EvolutionState) -> dict[str, Any]:
    best = state.best()
    mean = sum(i.fitness for i in state.population) / len(state.population)
    return {
        "generation": state.generation,
        "best_fitness": best.fitness,
        "mean_fitness": mean,
        "best_genome": best.text,
        "best_status": best.status,
        "best_distance_mm": best.distance_mm,
        "best_solved": best.solved,
        "episodes": state.episodes,
    }


def ensure_initialized(state: EvolutionState, ctx: EvalContext, registry: Registry,
                       jobs: int = 1) -> None:
    state.episodes += evaluate(state.population, ctx, state.cache, registry, jobs)
    if not state.history:
        state.history.append(_history_entry(state))


def step_generation(state: EvolutionState, ctx: EvalContext, registry: Registry,
                    config: GpConfig, jobs: int = 1) -> EvolutionState:
    """One reproduction / evaluation / survival cycle.

    Offspring counts follow the configured parent numbers exactly (24 mutants
    plus 8 crossover children by default); survival is one pairwise
    elimination within each offspring group (24 -> 12, 8 -> 4), after which
    the two fittest individuals of the whole generation replace the two worst
    winners.  The sizes work out to the population size again, parents die
    unless they earn an elite slot, and the generational turnover keeps the
    gene diversity that plateau escapes need.
    """
    rng = state.rng
    ensure_initialized(state, ctx, registry, jobs)

    mutants: list[Individual] = []
    for _ in range(config.mutation_parents):
        parent = tournament_pick(state.population, rng)
        for _ in range(config.mutation_offspring_per_parent):
            mutants.append(mutate(parent, registry, config, rng, state.op_stats))

    crossed: list[Individual] = []
    n_pairs = max(1, config.crossover_parents // 2)
    for _ in range(n_pairs):
        p1 = tournament_pick(state.population, rng)
        if state.baselines and rng.random() < config.baseline_donor_prob:
            base = rng.choice(state.baselines)
            p2 = Individual(tuple(base.split()), provenance="baseline")
            # the demonstrated subtree goes in as first child of p1's root;
            # the reverse child inserts p1 material into the baseline normally
            hint_side = "a"
        else:
            p2 = tournament_pick(state.population, rng)
            hint_side = "both"
        for _ in range(config.crossover_offspring_per_parent):
            c1, c2 = crossover(p1, p2, registry, rng, state.insertion_hint, hint_side)
            crossed.extend([c1, c2])

    state.episodes += evaluate(mutants + crossed, ctx, state.cache, registry, jobs)

    combined = state.population + mutants + crossed
    ranked = sorted(range(len(combined)), key=lambda i: (-(combined[i].fitness), i))
    elites = [replace(combined[i], provenance="elite") for i in ranked[: config.elites]]
    need = config.population_size - config.elites
    winners = tournament_select(mutants, len(mutants) // 2, rng)
    winners += tournament_select(crossed, len(crossed) // 2, rng)
    if len(winners) >= need:
        worst = set(sorted(range(len(winners)), key=lambda i: (winners[i].fitness, i))[: len(winners) - need])
        survivors = [w for i, w in enumerate(winners) if i not in worst]
    else:
        # offspring cannot refill the population: the fittest of the whole
        # generation take the remaining slots
        survivors = list(winners)
        have = {id(combined[i]) for i in ranked[: config.elites]} | {id(w) for w in winners}
        for i in ranked:
            if len(survivors) >= need:
                break
            if id(combined[i]) not in have:
                survivors.append(combined[i])
                have.add(id(combined[i]))
    state.population = elites + survivors
    state.generation += 1
    state.history.append(_history_entry(state))
    return state
