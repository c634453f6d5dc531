"""Population management: initialization, GOM variation, IMS scheduling.

The gene-pool optimal mixing (GOM) operator clones each solution and lets it
inherit FOS subsets from random donors, evaluating only when the active part
of the expression changed and reverting strictly-worse results. Populations
are driven either for a fixed number of generations or by the interleaved
multistart scheme (IMS), which runs exponentially larger populations at
exponentially lower frequency.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .dataio import Dataset
from .evaluator import (
    BudgetExhaustedError,
    EvaluationBudget,
    FitnessValue,
    fitness,
)
from .linkage import (
    FOS,
    BinningRule,
    MeasureKind,
    MeasureState,
    build_linkage_tree,
    similarity_matrix,
    univariate_fos,
)
from .template import (
    DEFAULT_POLICY,
    GROW_OPERATOR_PROB,
    Alphabet,
    Genotype,
    ProtectionPolicy,
    Template,
    active_signature,
    compute_activity,
)

IMS_BASE_SIZE = 64
IMS_SUBGENERATIONS = 10
IMS_SIZE_MULTIPLIER = 2
UNLIMITED_BUDGET = 2**62


@dataclass
class TraceEvent:
    evaluations: int
    best_r2: float
    ms: float


class ImprovementTracker:
    """Records every strict improvement of the best training fitness."""

    def __init__(self):
        self.trace: list[TraceEvent] = []
        self.best_r2 = float("-inf")
        self.best_genotype: Genotype | None = None
        self.best_fitness: FitnessValue | None = None
        self._t0 = time.monotonic()

    def observe(self, evaluations: int, fit: FitnessValue, genotype: Genotype) -> None:
        if self.best_genotype is not None and not fit.r2 > self.best_r2:
            return
        self.best_r2 = fit.r2
        self.best_genotype = genotype.copy()
        self.best_fitness = fit
        ms = (time.monotonic() - self._t0) * 1000.0
        self.trace.append(TraceEvent(evaluations, fit.r2, ms))


@dataclass
class RunContext:
    """Static per-run configuration shared by all engine operations."""

    template: Template
    alphabet: Alphabet
    train: Dataset
    measure: MeasureKind
    binning: BinningRule = field(default_factory=BinningRule)
    linear_scaling: bool = False
    policy: ProtectionPolicy = DEFAULT_POLICY
    tracker: ImprovementTracker | None = None

    def __post_init__(self):
        # column-contiguous features speed up per-node vector ops
        self.X = np.asfortranarray(self.train.X, dtype=np.float64)
        self.y = np.ascontiguousarray(self.train.y, dtype=np.float64)
        self.erc_low = float(self.y.min())
        self.erc_high = float(self.y.max())


@dataclass
class Population:
    genotypes: list[Genotype]
    fitnesses: list[FitnessValue]
    masks: list[np.ndarray]
    generation: int
    rng: np.random.Generator
    state: MeasureState = field(default_factory=MeasureState)

    @property
    def size(self) -> int:
        return len(self.genotypes)

    @property
    def best_r2(self) -> float:
        return max(f.r2 for f in self.fitnesses)


def population_rng(run_seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(run_seed, spawn_key=(index,)))


def _random_genotype(
    ctx: RunContext,
    rng: np.random.Generator,
    method: str,
    ramp_depth: int,
    grow_operator_prob: float = GROW_OPERATOR_PROB,
) -> Genotype:
    """One Half-and-Half individual truncated at ramp_depth.

    The active expression is grown from the root: "full" places operators at
    every position shallower than ramp_depth, "grow" places them with
    probability 0.5. Positions the active expression never reaches are
    filled uniformly from the whole alphabet legal at their depth, so every
    genotype is fully specified.
    """
    t, alph = ctx.template, ctx.alphabet
    symbols = np.full(t.node_count, -1, dtype=np.int64)
    stack = [0]
    while stack:
        i = stack.pop()
        d = t.depth[i]
        if d < ramp_depth and (method == "full" or rng.random() < grow_operator_prob):
            code = int(rng.integers(alph.n_ops))
        else:
            code = alph.n_ops + int(rng.integers(alph.n_features + 1))
        symbols[i] = code
        for c in range(alph.arity_table[code]):
            stack.append(int(t.children[i, c]))
    unfilled = symbols < 0
    internal = unfilled & ~t.is_leaf
    leafs = unfilled & t.is_leaf
    symbols[internal] = rng.integers(alph.size, size=int(internal.sum()))
    symbols[leafs] = alph.n_ops + rng.integers(alph.n_features + 1, size=int(leafs.sum()))
    constants = rng.uniform(ctx.erc_low, ctx.erc_high, size=t.node_count)
    return Genotype(symbols, constants)


def init_half_and_half(
    P: int,
    ctx: RunContext,
    rng: np.random.Generator,
    budget: EvaluationBudget,
    grow_operator_prob: float = GROW_OPERATOR_PROB,
) -> Population:
    """Half full / half grow initialization, ramped uniformly over depths
    1..height, with every individual evaluated once."""
    if P < 2:
        raise ValueError("population size must be >= 2")
    genotypes, fitnesses, masks = [], [], []
    for i in range(P):
        method = "full" if i % 2 == 0 else "grow"
        ramp = int(rng.integers(1, ctx.template.height + 1))
        g = _random_genotype(ctx, rng, method, ramp, grow_operator_prob)
        mask = compute_activity(g, ctx.template, ctx.alphabet)
        fit = fitness(
            g, ctx.template, ctx.alphabet, ctx.X, ctx.y,
            linear_scaling=ctx.linear_scaling, budget=budget,
            policy=ctx.policy, mask=mask,
        )
        if ctx.tracker is not None:
            ctx.tracker.observe(budget.used, fit, g)
        genotypes.append(g)
        fitnesses.append(fit)
        masks.append(mask)
    return Population(genotypes, fitnesses, masks, generation=0, rng=rng)


@dataclass
class GomStats:
    applications: int = 0
    identical_copies: int = 0
    intron_only: int = 0
    active_changes: int = 0
    evaluations: int = 0
    accepted: int = 0
    reverts: int = 0
    budget_exhausted: bool = False


def gom_step(
    pop: Population, fos: FOS, budget: EvaluationBudget, ctx: RunContext
) -> tuple[Population, GomStats]:
    """One round of gene-pool optimal mixing over the whole population.

    Every solution is cloned; each FOS subset, in a fresh per-offspring
    shuffle, is overwritten from a uniformly chosen donor (never the solution
    itself). Only changes to the active part trigger an evaluation, and
    strictly worse offspring are reverted; equal fitness keeps the change.
    Offspring therefore never end a step worse than their parent. Donors
    always come from the frozen parent population.
    """
    t, alph = ctx.template, ctx.alphabet
    P = pop.size
    const_code = alph.constant_code
    stats = GomStats()
    streams = pop.rng.spawn(P)
    out_g: list[Genotype] = []
    out_f: list[FitnessValue] = []
    out_m: list[np.ndarray] = []
    for i in range(P):
        r = streams[i]
        off = pop.genotypes[i].copy()
        fit = pop.fitnesses[i]
        mask = pop.masks[i]
        for si in r.permutation(len(fos.subsets)):
            s = fos.subsets[si]
            donor_idx = int(r.integers(P - 1))
            if donor_idx >= i:
                donor_idx += 1
            donor = pop.genotypes[donor_idx]
            old_sym = off.symbols[s].copy()
            old_con = off.constants[s].copy()
            off.symbols[s] = donor.symbols[s]
            off.constants[s] = donor.constants[s]
            stats.applications += 1
            if np.array_equal(old_sym, donor.symbols[s]) and np.array_equal(
                old_con, donor.constants[s]
            ):
                stats.identical_copies += 1
                continue
            if not mask[s].any():
                # introns only: activity depends solely on active symbols,
                # so the active part cannot have changed
                stats.intron_only += 1
                continue
            new_mask = compute_activity(off, t, alph)
            if np.array_equal(new_mask, mask):
                act = mask[s]
                if np.array_equal(old_sym[act], donor.symbols[s][act]):
                    cslot = act & (donor.symbols[s] == const_code)
                    if np.array_equal(old_con[cslot], donor.constants[s][cslot]):
                        continue
            stats.active_changes += 1
            try:
                new_fit = fitness(
                    off, t, alph, ctx.X, ctx.y,
                    linear_scaling=ctx.linear_scaling, budget=budget,
                    policy=ctx.policy, mask=new_mask,
                )
            except BudgetExhaustedError:
                off.symbols[s] = old_sym
                off.constants[s] = old_con
                stats.active_changes -= 1
                stats.budget_exhausted = True
                break
            stats.evaluations += 1
            if ctx.tracker is not None:
                ctx.tracker.observe(budget.used, new_fit, off)
            if new_fit.r2 < fit.r2:
                off.symbols[s] = old_sym
                off.constants[s] = old_con
                stats.reverts += 1
            else:
                fit = new_fit
                mask = new_mask
                stats.accepted += 1
        out_g.append(off)
        out_f.append(fit)
        out_m.append(mask if mask is not pop.masks[i] else mask.copy())
        if stats.budget_exhausted:
            # commit remaining solutions unchanged; the run is over anyway
            for j in range(i + 1, P):
                out_g.append(pop.genotypes[j].copy())
                out_f.append(pop.fitnesses[j])
                out_m.append(pop.masks[j].copy())
            break
    new_pop = Population(
        out_g, out_f, out_m, generation=pop.generation + 1, rng=pop.rng, state=pop.state
    )
    return new_pop, stats


def prepare_generation(pop: Population, ctx: RunContext) -> tuple[np.ndarray | None, FOS]:
    """Similarity matrix and FOS for this generation's variation step."""
    S = similarity_matrix(
        ctx.measure, pop.genotypes, ctx.template, ctx.alphabet,
        ctx.binning, pop.masks, pop.rng, pop.state,
    )
    if ctx.measure is MeasureKind.UNIVARIATE:
        fos = univariate_fos(ctx.template.node_count)
    elif ctx.measure is MeasureKind.NODE_STATIC:
        if pop.state.static_fos is None:
            pop.state.static_fos = build_linkage_tree(S, pop.rng)
        fos = pop.state.static_fos
    else:
        fos = build_linkage_tree(S, pop.rng)
    return S, fos


@dataclass
class GenerationStats:
    matrix: np.ndarray | None
    fos: FOS
    gom: GomStats


def run_generation(
    pop: Population, ctx: RunContext, budget: EvaluationBudget
) -> tuple[Population, GenerationStats]:
    """Linkage learning followed by GOM; returns the offspring population."""
    S, fos = prepare_generation(pop, ctx)
    new_pop, gom_stats = gom_step(pop, fos, budget, ctx)
    return new_pop, GenerationStats(S, fos, gom_stats)


def has_converged(pop: Population, ctx: RunContext) -> bool:
    """True iff every individual expresses the same active part."""
    first = active_signature(
        pop.genotypes[0], ctx.template, ctx.alphabet, mask=pop.masks[0]
    )
    for g, m in zip(pop.genotypes[1:], pop.masks[1:]):
        if active_signature(g, ctx.template, ctx.alphabet, mask=m) != first:
            return False
    return True


@dataclass
class RunRecord:
    """Everything a finished run reports: trace, events, best solution."""

    seed: int
    trace: list[TraceEvent]
    events: list[dict]
    best_genotype: Genotype | None
    best_fitness: FitnessValue | None
    evaluations_used: int
    generations: int
    snapshots: list[tuple[int, np.ndarray]] | None = None


@dataclass
class _Slot:
    pop: Population
    index: int
    generations: int = 0
    alive: bool = True
    reason: str | None = None


def run_ims(
    ctx: RunContext,
    budget: EvaluationBudget,
    run_seed: int,
    base_size: int = IMS_BASE_SIZE,
    subgenerations: int = IMS_SUBGENERATIONS,
    size_multiplier: int = IMS_SIZE_MULTIPLIER,
) -> RunRecord:
    """Interleaved multistart scheme until the evaluation budget is spent.

    Population k has size base_size * size_multiplier**k and runs one
    generation for every `subgenerations` generations of population k-1; a
    new population starts right after the currently largest one finishes its
    `subgenerations`-th generation. Populations terminate once converged or
    once a larger active population's best fitness strictly exceeds theirs.
    """
    if ctx.tracker is None:
        ctx.tracker = ImprovementTracker()
    tracker = ctx.tracker
    events: list[dict] = []
    slots: list[_Slot] = []
    total_generations = 0

    def create(index: int, trigger: str, predecessor_generations: int | None) -> None:
        size = base_size * size_multiplier**index
        rng = population_rng(run_seed, index)
        pop = init_half_and_half(size, ctx, rng, budget)
        slots.append(_Slot(pop, index))
        events.append(
            {
                "event": "pop_created",
                "index": index,
                "size": size,
                "evaluations": budget.used,
                "trigger": trigger,
                "predecessor_generations": predecessor_generations,
            }
        )

    def terminate(slot: _Slot, reason: str, **extra) -> None:
        slot.alive = False
        slot.reason = reason
        events.append(
            {
                "event": "pop_terminated",
                "index": slot.index,
                "reason": reason,
                "generations": slot.generations,
                "best_r2": slot.pop.best_r2,
                "evaluations": budget.used,
                **extra,
            }
        )

    try:
        create(0, "start", None)
        base_step = 0
        while True:
            base_step += 1
            k = 0
            while k < len(slots):
                if base_step % (subgenerations**k) == 0:
                    slot = slots[k]
                    if slot.alive:
                        dominator = next(
                            (
                                s
                                for s in slots
                                if s.alive
                                and s.index > slot.index
                                and s.pop.best_r2 > slot.pop.best_r2
                            ),
                            None,
                        )
                        if dominator is not None:
                            terminate(
                                slot,
                                "dominated",
                                dominated_by=dominator.index,
                                dominated_by_best=dominator.pop.best_r2,
                            )
                        else:
                            slot.pop, gen_stats = run_generation(slot.pop, ctx, budget)
                            slot.generations += 1
                            total_generations += 1
                            if gen_stats.gom.budget_exhausted:
                                raise BudgetExhaustedError
                            if has_converged(slot.pop, ctx):
                                terminate(slot, "converged")
                            if (
                                slot is slots[-1]
                                and slot.generations == subgenerations
                            ):
                                create(slot.index + 1, "schedule", slot.generations)
                k += 1
            if not any(s.alive for s in slots):
                # every population finished; keep the scheme alive with the
                # next larger population
                create(slots[-1].index + 1, "restart", slots[-1].generations)
    except BudgetExhaustedError:
        pass
    return RunRecord(
        seed=run_seed,
        trace=tracker.trace,
        events=events,
        best_genotype=tracker.best_genotype,
        best_fitness=tracker.best_fitness,
        evaluations_used=budget.used,
        generations=total_generations,
    )


def run_fixed(
    ctx: RunContext,
    population_size: int,
    generations: int,
    run_seed: int,
    record_snapshots: bool = True,
) -> RunRecord:
    """Single population for a fixed generation count, without a budget.

    The similarity matrix in effect at each generation (including the final
    state) is snapshotted; a run that converges early stops and contributes
    no snapshots beyond its last generation.
    """
    if ctx.tracker is None:
        ctx.tracker = ImprovementTracker()
    tracker = ctx.tracker
    budget = EvaluationBudget(limit=UNLIMITED_BUDGET)
    rng = population_rng(run_seed, 0)
    pop = init_half_and_half(population_size, ctx, rng, budget)
    snapshots: list[tuple[int, np.ndarray]] = []
    events: list[dict] = []
    gens_done = 0
    for g in range(generations):
        S, fos = prepare_generation(pop, ctx)
        if record_snapshots and S is not None:
            snapshots.append((g, S))
        if has_converged(pop, ctx):
            events.append({"event": "converged", "generation": g})
            break
        pop, _ = gom_step(pop, fos, budget, ctx)
        gens_done += 1
    else:
        if record_snapshots:
            S = similarity_matrix(
                ctx.measure, pop.genotypes, ctx.template, ctx.alphabet,
                ctx.binning, pop.masks, pop.rng, pop.state,
            )
            if S is not None:
                snapshots.append((generations, S))
    return RunRecord(
        seed=run_seed,
        trace=tracker.trace,
        events=events,
        best_genotype=tracker.best_genotype,
        best_fitness=tracker.best_fitness,
        evaluations_used=budget.used,
        generations=gens_done,
        snapshots=snapshots if record_snapshots else None,
    )
