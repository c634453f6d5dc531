"""Pairwise similarity measures and FOS construction.

A similarity matrix over genotype positions is turned into a Family of
Subsets (FOS) by UPGMA hierarchical clustering: the linkage tree. Measures
either come from population statistics (mutual information and variants) or
directly from the template geometry (node proximity, subfunction counts).
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .template import Alphabet, Genotype, Template

TIE_DECIMALS = 12
BASELINE_CLAMP = 1e-12


class MeasureKind(Enum):
    RANDOM = "random"
    UNIVARIATE = "univariate"
    MI = "mi"
    MI_ADJUSTED = "mi_adjusted"
    MI_MASKED = "mi_masked"
    NODE = "node"
    NODE_STATIC = "node_static"
    SUBFUNCTION_COUNT = "subfunction_count"


POPULATION_MEASURES = (MeasureKind.MI, MeasureKind.MI_ADJUSTED, MeasureKind.MI_MASKED)


@dataclass(frozen=True)
class BinningRule:
    """Shared discretization of constant values, refit on each population."""

    bin_count: int = 25
    strategy: str = "equal_width"

    def __post_init__(self):
        if self.strategy not in ("equal_width", "equal_frequency"):
            raise ValueError(f"unknown binning strategy {self.strategy!r}")

    def assign(self, values: np.ndarray) -> np.ndarray:
        """Bin ids in [0, bin_count) for the observed constant values."""
        if values.size == 0:
            return np.zeros(0, dtype=np.int64)
        lo, hi = float(values.min()), float(values.max())
        if hi <= lo:
            return np.zeros(values.shape, dtype=np.int64)
        if self.strategy == "equal_width":
            ids = np.floor((values - lo) / (hi - lo) * self.bin_count).astype(np.int64)
        else:
            edges = np.quantile(values, np.linspace(0, 1, self.bin_count + 1)[1:-1])
            ids = np.searchsorted(edges, values, side="right")
        return np.clip(ids, 0, self.bin_count - 1)


@dataclass
class DiscretePopulationView:
    """N x L token matrix: operator ids, feature ids, constant-bin ids, MASK."""

    tokens: np.ndarray
    n_tokens: int
    mask_token: int | None = None


def discretize(
    pop: Sequence[Genotype],
    alphabet: Alphabet,
    rule: BinningRule,
    masks: Sequence[np.ndarray] | None = None,
) -> DiscretePopulationView:
    """Tokenize a population; with masks, inactive positions become MASK.

    Constants are binned with edges fit on every constant value observed in
    this population (one shared rule per call); all other symbols keep their
    alphabet code.
    """
    symbols = np.stack([g.symbols for g in pop])
    constants = np.stack([g.constants for g in pop])
    tokens = symbols.astype(np.int64, copy=True)
    const_positions = symbols == alphabet.constant_code
    if const_positions.any():
        bins = rule.assign(constants[const_positions])
        tokens[const_positions] = alphabet.constant_code + bins
    n_tokens = alphabet.constant_code + rule.bin_count
    mask_token = None
    if masks is not None:
        mask_token = n_tokens
        n_tokens += 1
        inactive = ~np.stack(masks)
        tokens[inactive] = mask_token
    return DiscretePopulationView(tokens, n_tokens, mask_token)


def entropy(view: DiscretePopulationView, i: int) -> float:
    """Shannon entropy in bits of column i's empirical distribution."""
    counts = np.bincount(view.tokens[:, i])
    p = counts[counts > 0] / view.tokens.shape[0]
    return float(-np.sum(p * np.log2(p)))


def mutual_information(view: DiscretePopulationView, i: int, j: int) -> float:
    """Empirical MI in bits, H(i) + H(j) - H(i,j); clamped to be >= 0."""
    n = view.tokens.shape[0]
    joint = np.bincount(view.tokens[:, i] * view.n_tokens + view.tokens[:, j])
    pj = joint[joint > 0] / n
    h_joint = float(-np.sum(pj * np.log2(pj)))
    value = entropy(view, i) + entropy(view, j) - h_joint
    return max(value, 0.0)


def _pairwise_mi(view: DiscretePopulationView) -> np.ndarray:
    tokens = view.tokens
    L = tokens.shape[1]
    n = tokens.shape[0]
    h = np.empty(L)
    for i in range(L):
        counts = np.bincount(tokens[:, i])
        p = counts[counts > 0] / n
        h[i] = -np.sum(p * np.log2(p))
    S = np.zeros((L, L))
    for i in range(L):
        col_i = tokens[:, i] * view.n_tokens
        for j in range(i + 1, L):
            joint = np.bincount(col_i + tokens[:, j])
            pj = joint[joint > 0] / n
            h_joint = -np.sum(pj * np.log2(pj))
            S[i, j] = S[j, i] = max(h[i] + h[j] - h_joint, 0.0)
    return S


def measure_mi(pop: Sequence[Genotype], alphabet: Alphabet, rule: BinningRule) -> np.ndarray:
    """Pairwise MI over the plain (unmasked) view; diagonal 0 by convention."""
    return _pairwise_mi(discretize(pop, alphabet, rule))


def measure_mi_adjusted(
    pop: Sequence[Genotype],
    alphabet: Alphabet,
    rule: BinningRule,
    baseline: np.ndarray,
) -> np.ndarray:
    """MI divided entrywise by the generation-0 MI of the same population.

    Both sides are clamped below at 1e-12, so the ratio is finite everywhere
    and exactly 1 off-diagonal at generation 0: right after initialization no
    linkage is detected and merges fall to random tie-breaking.
    """
    if baseline is None:
        raise ValueError("adjusted MI requires a generation-0 baseline matrix")
    S = measure_mi(pop, alphabet, rule)
    adjusted = np.maximum(S, BASELINE_CLAMP) / np.maximum(baseline, BASELINE_CLAMP)
    np.fill_diagonal(adjusted, 0.0)
    return adjusted


def measure_mi_masked(
    pop: Sequence[Genotype],
    alphabet: Alphabet,
    rule: BinningRule,
    masks: Sequence[np.ndarray],
) -> np.ndarray:
    """Pairwise MI with introns replaced by a reserved MASK token.

    Removes the noise contributed by values that are not under selection
    pressure. Incompatible with the generation-0 adjustment: positions that
    start out inactive everywhere would divide by zero.
    """
    return _pairwise_mi(discretize(pop, alphabet, rule, masks=masks))


def _lca_depth_matrix(t: Template) -> np.ndarray:
    L = t.node_count
    lca_depth = np.empty((L, L), dtype=np.int64)
    for i in range(L):
        for j in range(i, L):
            a = t.lowest_common_ancestor(i, j)
            lca_depth[i, j] = lca_depth[j, i] = t.depth[a]
    return lca_depth


def measure_node_proximity(t: Template) -> np.ndarray:
    """Similarity from template path distance: 1 - d(i,j)/(1 + max distance).

    d(i,j) counts the edges from i and from j up to their lowest common
    ancestor, so siblings sit one step further apart than a child and its
    parent. Population independent; diagonal 0 by convention.
    """
    depth = t.depth
    d = depth[:, None] + depth[None, :] - 2 * _lca_depth_matrix(t)
    m = 1 + int(d.max())
    S = (m - d) / m  # algebraically 1 - d/m, but exact for small ratios
    np.fill_diagonal(S, 0.0)
    return S


def measure_subfunction_count(t: Template) -> np.ndarray:
    """Number of template subfunctions containing both positions.

    Each node roots one subfunction holding the node and its whole subtree,
    so the count for a pair is the number of common ancestors, i.e. the
    depth of the lowest common ancestor plus one. Diagonal 0 by convention.
    """
    S = (_lca_depth_matrix(t) + 1).astype(float)
    np.fill_diagonal(S, 0.0)
    return S


def measure_random(L: int, rng: np.random.Generator) -> np.ndarray:
    """Fresh symmetric U(0,1) similarities; resampled every generation."""
    S = np.zeros((L, L))
    iu = np.triu_indices(L, k=1)
    S[iu] = rng.uniform(0.0, 1.0, size=len(iu[0]))
    return S + S.T


@dataclass
class FOS:
    """Ordered crossover masks; linkage trees list singletons, then merges."""

    subsets: list[np.ndarray]

    def __len__(self) -> int:
        return len(self.subsets)

    def as_sets(self) -> list[frozenset]:
        return [frozenset(int(v) for v in s) for s in self.subsets]


def univariate_fos(L: int) -> FOS:
    return FOS([np.array([i], dtype=np.int64) for i in range(L)])


def build_linkage_tree(S: np.ndarray, rng: np.random.Generator) -> FOS:
    """UPGMA clustering of the similarity matrix into a linkage-tree FOS.

    Starts from singletons and repeatedly merges the pair of clusters with
    the highest average cross-cluster similarity, breaking ties (after
    rounding to 12 decimals) uniformly at random. Merged sets are recorded
    in order; the final merge containing every variable is discarded, giving
    2L - 2 subsets with singletons first.
    """
    L = S.shape[0]
    subsets = [np.array([i], dtype=np.int64) for i in range(L)]
    if L < 2:
        return FOS(subsets)
    total = 2 * L - 1
    sim = np.full((total, total), -np.inf)
    sim[:L, :L] = np.round(S, TIE_DECIMALS)
    sizes = np.zeros(total, dtype=np.int64)
    sizes[:L] = 1
    members: list[np.ndarray | None] = [np.array([i], dtype=np.int64) for i in range(L)]
    members.extend([None] * (L - 1))
    alive = list(range(L))
    merges: list[np.ndarray] = []
    for m in range(L, total):
        best = -np.inf
        ties: list[tuple[int, int]] = []
        for ai in range(len(alive)):
            a = alive[ai]
            for bi in range(ai + 1, len(alive)):
                b = alive[bi]
                v = sim[a, b]
                if v > best:
                    best = v
                    ties = [(a, b)]
                elif v == best:
                    ties.append((a, b))
        a, b = ties[rng.integers(len(ties))] if len(ties) > 1 else ties[0]
        merged = np.sort(np.concatenate([members[a], members[b]]))
        members[m] = merged
        sizes[m] = sizes[a] + sizes[b]
        alive.remove(a)
        alive.remove(b)
        for c in alive:
            # arithmetic mean over all cross pairs of the two merged clusters
            avg = (sizes[a] * sim[a, c] + sizes[b] * sim[b, c]) / sizes[m]
            sim[m, c] = sim[c, m] = np.round(avg, TIE_DECIMALS)
        alive.append(m)
        merges.append(merged)
    return FOS(subsets + merges[:-1])


@dataclass
class MeasureState:
    """Per-population measure memory: adjusted-MI baseline, static FOS cache."""

    baseline: np.ndarray | None = None
    static_fos: FOS | None = None


def similarity_matrix(
    kind: MeasureKind,
    pop: Sequence[Genotype],
    t: Template,
    alphabet: Alphabet,
    rule: BinningRule,
    masks: Sequence[np.ndarray],
    rng: np.random.Generator,
    state: MeasureState,
) -> np.ndarray | None:
    """The similarity matrix the given measure uses this generation.

    Returns None for the univariate FOS, which assumes no pairwise linkage.
    Captures the adjusted-MI baseline on first use (generation 0).
    """
    if kind is MeasureKind.UNIVARIATE:
        return None
    if kind is MeasureKind.RANDOM:
        return measure_random(t.node_count, rng)
    if kind in (MeasureKind.NODE, MeasureKind.NODE_STATIC):
        return measure_node_proximity(t)
    if kind is MeasureKind.SUBFUNCTION_COUNT:
        return measure_subfunction_count(t)
    if kind is MeasureKind.MI:
        return measure_mi(pop, alphabet, rule)
    if kind is MeasureKind.MI_MASKED:
        return measure_mi_masked(pop, alphabet, rule, masks)
    if kind is MeasureKind.MI_ADJUSTED:
        if state.baseline is None:
            state.baseline = measure_mi(pop, alphabet, rule)
        return measure_mi_adjusted(pop, alphabet, rule, state.baseline)
    raise ValueError(f"unknown measure kind {kind}")


def build_fos(
    kind: MeasureKind,
    pop: Sequence[Genotype],
    t: Template,
    alphabet: Alphabet,
    rule: BinningRule,
    masks: Sequence[np.ndarray],
    rng: np.random.Generator,
    state: MeasureState,
) -> FOS:
    """Dispatch per measure; node (static) clusters once per population."""
    if kind is MeasureKind.UNIVARIATE:
        return univariate_fos(t.node_count)
    if kind is MeasureKind.NODE_STATIC:
        if state.static_fos is None:
            state.static_fos = build_linkage_tree(measure_node_proximity(t), rng)
        return state.static_fos
    S = similarity_matrix(kind, pop, t, alphabet, rule, masks, rng, state)
    return build_linkage_tree(S, rng)


def similarity_to_csv(S: np.ndarray) -> str:
    """Row-major CSV with a variable-index header, for offline analysis."""
    out = io.StringIO()
    L = S.shape[0]
    out.write(",".join(str(i) for i in range(L)) + "\n")
    for row in S:
        out.write(",".join(repr(float(v)) for v in row) + "\n")
    return out.getvalue()


def similarity_from_csv(text: str) -> np.ndarray:
    lines = [ln for ln in text.strip().splitlines() if ln]
    return np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
