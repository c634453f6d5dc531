"""Fixed tree templates, genotypes, intron masks, and expression evaluation.

Every candidate expression is a fixed-length string of symbols mapped onto a
shared full n-ary tree template (breadth-first node numbering, root at 0).
Positions not reachable from the root through operator arguments are introns:
they carry symbols but do not influence the expression's value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

NODE_COUNT_CAP = 2**15
GROW_OPERATOR_PROB = 0.5


class MalformedGenotypeError(RuntimeError):
    """An active internal node needs a child the template does not have."""


@dataclass(frozen=True)
class Operator:
    op_id: int
    name: str
    arity: int


class OperatorSet:
    """Dense, ordered set of operators; ids are stable for the whole run."""

    def __init__(self, names_arities: list[tuple[str, int]]):
        self.operators = tuple(
            Operator(i, name, arity) for i, (name, arity) in enumerate(names_arities)
        )
        self.n_ops = len(self.operators)
        self.max_arity = max(op.arity for op in self.operators)
        self.arities = np.array([op.arity for op in self.operators], dtype=np.int64)
        self.names = tuple(op.name for op in self.operators)

    @classmethod
    def base(cls) -> "OperatorSet":
        return cls([("+", 2), ("-", 2), ("*", 2), ("/", 2), ("sin", 1)])

    @classmethod
    def extended(cls) -> "OperatorSet":
        return cls(
            [("+", 2), ("-", 2), ("*", 2), ("/", 2), ("sin", 1),
             ("cos", 1), ("exp", 1), ("log", 1), ("sqrt", 1), ("sq", 1)]
        )

    def __repr__(self) -> str:
        return f"OperatorSet({list(self.names)})"


class Alphabet:
    """Integer coding of symbols: operators, then features, then the constant.

    Codes [0, n_ops) are operators, [n_ops, n_ops + n_features) are features,
    and the last code marks an ephemeral constant whose value lives in the
    genotype's constants array.
    """

    def __init__(self, ops: OperatorSet, n_features: int):
        if n_features < 1:
            raise ValueError("need at least one input feature")
        self.ops = ops
        self.n_features = n_features
        self.n_ops = ops.n_ops
        self.constant_code = ops.n_ops + n_features
        self.size = self.constant_code + 1
        # arity per code; terminals have arity 0
        self.arity_table = np.zeros(self.size, dtype=np.int64)
        self.arity_table[: ops.n_ops] = ops.arities

    def feature_code(self, j: int) -> int:
        if not 0 <= j < self.n_features:
            raise ValueError(f"feature index {j} out of range")
        return self.n_ops + j

    def feature_index(self, code: int) -> int:
        return code - self.n_ops

    def is_operator(self, code: int) -> bool:
        return code < self.n_ops

    def is_constant(self, code: int) -> bool:
        return code == self.constant_code

    def is_feature(self, code: int) -> bool:
        return self.n_ops <= code < self.constant_code


class Template:
    """Full max_arity-ary tree of the given height with breadth-first indexing.

    Children of node i sit at max_arity*i + 1 ... max_arity*i + max_arity;
    leaves are all nodes at depth == height.
    """

    def __init__(self, height: int, max_arity: int):
        self.height = height
        self.max_arity = max_arity
        k = max_arity
        self.node_count = sum(k**d for d in range(height + 1))
        L = self.node_count
        idx = np.arange(L, dtype=np.int64)
        self.parent = np.empty(L, dtype=np.int64)
        self.parent[0] = -1
        self.parent[1:] = (idx[1:] - 1) // k
        self.child_ordinal = np.empty(L, dtype=np.int64)
        self.child_ordinal[0] = 0
        self.child_ordinal[1:] = (idx[1:] - 1) % k
        self.children = k * idx[:, None] + 1 + np.arange(k, dtype=np.int64)[None, :]
        self.children[self.children >= L] = -1
        self.depth = np.zeros(L, dtype=np.int64)
        for i in range(1, L):
            self.depth[i] = self.depth[self.parent[i]] + 1
        # level d occupies [level_start[d], level_start[d+1])
        self.level_start = np.array(
            [sum(k**e for e in range(d)) for d in range(height + 2)], dtype=np.int64
        )
        self.is_leaf = self.depth == height

    def lowest_common_ancestor(self, i: int, j: int) -> int:
        while i != j:
            if i > j:
                i = int(self.parent[i])
            else:
                j = int(self.parent[j])
        return i

    def path_distance(self, i: int, j: int) -> int:
        """Edges from i up to the lowest common ancestor plus edges from j up."""
        a = self.lowest_common_ancestor(i, j)
        return int(self.depth[i] + self.depth[j] - 2 * self.depth[a])

    def __repr__(self) -> str:
        return f"Template(height={self.height}, max_arity={self.max_arity}, nodes={self.node_count})"


def build_template(height: int, max_arity: int, node_cap: int = NODE_COUNT_CAP) -> Template:
    if height < 1:
        raise ValueError(f"template height must be >= 1, got {height}")
    if max_arity < 1:
        raise ValueError(f"max arity must be >= 1, got {max_arity}")
    count = sum(max_arity**d for d in range(height + 1))
    if count > node_cap:
        raise ValueError(
            f"template with height {height} and arity {max_arity} has {count} nodes, "
            f"exceeding the cap of {node_cap}"
        )
    return Template(height, max_arity)


@dataclass
class Genotype:
    """Symbol codes plus per-position constant values (used at constant slots)."""

    symbols: np.ndarray
    constants: np.ndarray

    def copy(self) -> "Genotype":
        return Genotype(self.symbols.copy(), self.constants.copy())

    def __len__(self) -> int:
        return len(self.symbols)


def compute_activity(g: Genotype, t: Template, alphabet: Alphabet) -> np.ndarray:
    """Boolean mask of positions reachable through operator arguments.

    The root is always active; a child is active iff its parent is active,
    holds an operator, and the operator's arity covers the child's ordinal
    (unary operators consume only the leftmost child).
    """
    active = np.zeros(t.node_count, dtype=bool)
    active[0] = True
    arity = alphabet.arity_table[g.symbols]
    for d in range(1, t.height + 1):
        lo, hi = t.level_start[d], t.level_start[d + 1]
        par = t.parent[lo:hi]
        active[lo:hi] = active[par] & (t.child_ordinal[lo:hi] < arity[par])
    return active


@dataclass(frozen=True)
class ProtectionPolicy:
    """Keeps operator outputs finite on otherwise-invalid inputs.

    division "protected" returns a/b when |b| > div_epsilon and 1.0 otherwise;
    "analytic_quotient" returns a*b / (b*b + div_epsilon). log uses
    ln(|x| + log_epsilon), sqrt uses sqrt(|x|), and exp saturates at exp_cap.
    """

    division: str = "protected"
    div_epsilon: float = 1e-6
    log_epsilon: float = 1e-6
    exp_cap: float = 1e300

    def __post_init__(self):
        if self.division not in ("protected", "analytic_quotient"):
            raise ValueError(f"unknown division policy {self.division!r}")


DEFAULT_POLICY = ProtectionPolicy()


def _apply_operator(name: str, args: list[np.ndarray], policy: ProtectionPolicy) -> np.ndarray:
    if name == "+":
        return args[0] + args[1]
    if name == "-":
        return args[0] - args[1]
    if name == "*":
        return args[0] * args[1]
    if name == "/":
        a, b = args
        if policy.division == "analytic_quotient":
            return a * b / (b * b + policy.div_epsilon)
        out = np.ones_like(a)
        np.divide(a, b, out=out, where=np.abs(b) > policy.div_epsilon)
        return out
    if name == "sin":
        return np.sin(args[0])
    if name == "cos":
        return np.cos(args[0])
    if name == "exp":
        return np.exp(np.minimum(args[0], math.log(policy.exp_cap)))
    if name == "log":
        return np.log(np.abs(args[0]) + policy.log_epsilon)
    if name == "sqrt":
        return np.sqrt(np.abs(args[0]))
    if name == "sq":
        return args[0] * args[0]
    raise ValueError(f"unknown operator {name!r}")


def evaluate(
    g: Genotype,
    t: Template,
    X: np.ndarray,
    alphabet: Alphabet,
    policy: ProtectionPolicy = DEFAULT_POLICY,
    mask: np.ndarray | None = None,
) -> np.ndarray:
    """One prediction per row of X, touching only active template positions.

    Active nodes are reduced children-first (descending breadth-first index),
    left to right, so results are deterministic. Overflow in +,-,*,sq may
    saturate to +/-inf; the fitness layer maps such outputs to worst fitness.
    """
    if mask is None:
        mask = compute_activity(g, t, alphabet)
    n_rows = X.shape[0]
    ops = alphabet.ops
    buffers: dict[int, np.ndarray] = {}
    order = np.flatnonzero(mask)
    with np.errstate(all="ignore"):
        for i in order[::-1]:
            code = int(g.symbols[i])
            if alphabet.is_operator(code):
                op = ops.operators[code]
                args = []
                for c in range(op.arity):
                    child = int(t.children[i, c])
                    if child < 0:
                        raise MalformedGenotypeError(
                            f"active node {i} holds operator {op.name!r} but has no child {c}"
                        )
                    args.append(buffers.pop(child))
                buffers[i] = _apply_operator(op.name, args, policy)
            elif alphabet.is_constant(code):
                buffers[i] = np.full(n_rows, g.constants[i])
            else:
                buffers[i] = X[:, alphabet.feature_index(code)]
    result = buffers[0]
    if result.base is not None or result is X:
        result = result.copy()
    return result


def active_signature(
    g: Genotype, t: Template, alphabet: Alphabet, mask: np.ndarray | None = None
) -> bytes:
    """Canonical encoding of the expression's active part.

    Two genotypes get equal signatures iff their activity masks, active
    symbols, and constant values at active constant slots all coincide;
    introns never contribute.
    """
    if mask is None:
        mask = compute_activity(g, t, alphabet)
    sym = g.symbols[mask]
    const = g.constants[mask & (g.symbols == alphabet.constant_code)]
    return np.packbits(mask).tobytes() + sym.tobytes() + const.tobytes()


def active_parts_equal(
    a: Genotype,
    b: Genotype,
    mask_a: np.ndarray,
    mask_b: np.ndarray,
    alphabet: Alphabet,
) -> bool:
    """Fast equivalent of comparing active signatures, given known masks."""
    if not np.array_equal(mask_a, mask_b):
        return False
    sa = a.symbols[mask_a]
    sb = b.symbols[mask_a]
    if not np.array_equal(sa, sb):
        return False
    const = mask_a & (a.symbols == alphabet.constant_code)
    return np.array_equal(a.constants[const], b.constants[const])


def to_infix(
    g: Genotype,
    t: Template,
    alphabet: Alphabet,
    feature_names: list[str] | None = None,
) -> str:
    """Parenthesized infix rendering of the active expression."""

    def render(i: int) -> str:
        code = int(g.symbols[i])
        if alphabet.is_constant(code):
            return repr(float(g.constants[i]))
        if alphabet.is_feature(code):
            j = alphabet.feature_index(code)
            return feature_names[j] if feature_names else f"x{j}"
        op = alphabet.ops.operators[code]
        args = [render(int(t.children[i, c])) for c in range(op.arity)]
        if op.arity == 2:
            return f"({args[0]} {op.name} {args[1]})"
        return f"{op.name}({args[0]})"

    return render(0)
