import numpy as np
import pytest

from gomsr.template import (
    Alphabet,
    Genotype,
    MalformedGenotypeError,
    OperatorSet,
    ProtectionPolicy,
    active_signature,
    build_template,
    compute_activity,
    evaluate,
    to_infix,
)

from conftest import random_genotype
from reference import reference_evaluate


def fig_genotype(alph):
    """sin(x0) + sqrt(x1) on the height-2 binary template."""
    names = list(alph.ops.names)
    sym = np.array(
        [names.index("+"), names.index("sin"), names.index("sqrt"),
         alph.feature_code(0), alph.constant_code,
         alph.feature_code(1), alph.constant_code],
        dtype=np.int64,
    )
    return Genotype(sym, np.array([0.0, 0.0, 0.0, 0.0, 7.7, 0.0, -3.3]))


class TestOperatorSet:
    def test_base_set(self):
        ops = OperatorSet.base()
        assert ops.names == ("+", "-", "*", "/", "sin")
        assert tuple(ops.arities) == (2, 2, 2, 2, 1)
        assert [op.op_id for op in ops.operators] == [0, 1, 2, 3, 4]

    def test_extended_adds_unary(self):
        ops = OperatorSet.extended()
        assert ops.names[:5] == ("+", "-", "*", "/", "sin")
        assert ops.names[5:] == ("cos", "exp", "log", "sqrt", "sq")
        assert all(op.arity == 1 for op in ops.operators[5:])
        assert ops.max_arity == 2


class TestBuildTemplate:
    def test_height2_binary(self):
        t = build_template(2, 2)
        assert t.node_count == 7
        assert tuple(t.children[0]) == (1, 2)
        assert t.parent[6] == 2

    def test_height1(self):
        assert build_template(1, 2).node_count == 3

    def test_31_node_template(self):
        assert build_template(4, 2).node_count == 31

    def test_127_node_template(self):
        assert build_template(6, 2).node_count == 127

    def test_node_count_formula(self):
        for h in range(1, 8):
            assert build_template(h, 2).node_count == 2 ** (h + 1) - 1

    def test_rejects_bad_height(self):
        with pytest.raises(ValueError):
            build_template(0, 2)

    def test_rejects_too_many_nodes(self):
        with pytest.raises(ValueError):
            build_template(15, 2)

    def test_parent_child_consistency(self):
        t = build_template(4, 2)
        for i in range(1, t.node_count):
            p = t.parent[i]
            assert i in t.children[p]
            assert t.depth[i] == t.depth[p] + 1


class TestActivity:
    def test_fig_example(self, extended_ops, h2_template):
        alph = Alphabet(extended_ops, 2)
        mask = compute_activity(fig_genotype(alph), h2_template, alph)
        assert mask.tolist() == [True, True, True, True, False, True, False]

    def test_root_terminal_only_root_active(self, base_ops, h2_template):
        alph = Alphabet(base_ops, 2)
        g = random_genotype(h2_template, alph, np.random.default_rng(0))
        g.symbols[0] = alph.feature_code(0)
        mask = compute_activity(g, h2_template, alph)
        assert mask[0] and not mask[1:].any()

    def test_all_binary_ops_all_active(self, base_ops, h2_template):
        alph = Alphabet(base_ops, 2)
        sym = np.zeros(7, dtype=np.int64)  # "+"
        sym[3:] = alph.feature_code(0)
        mask = compute_activity(Genotype(sym, np.zeros(7)), h2_template, alph)
        assert mask.all()

    def test_monotone_along_root_paths(self, extended_ops):
        t = build_template(4, 2)
        alph = Alphabet(extended_ops, 3)
        rng = np.random.default_rng(7)
        for _ in range(200):
            mask = compute_activity(random_genotype(t, alph, rng), t, alph)
            assert mask[0]
            for i in range(1, t.node_count):
                if mask[i]:
                    assert mask[t.parent[i]]


class TestEvaluate:
    def test_fig_example_value(self, extended_ops, h2_template):
        alph = Alphabet(extended_ops, 2)
        out = evaluate(fig_genotype(alph), h2_template, np.array([[0.0, 4.0]]), alph)
        assert out.shape == (1,)
        assert out[0] == pytest.approx(2.0, abs=1e-15)

    def test_constant_root(self, base_ops, h2_template):
        alph = Alphabet(base_ops, 2)
        g = random_genotype(h2_template, alph, np.random.default_rng(1))
        g.symbols[0] = alph.constant_code
        g.constants[0] = 3.5
        out = evaluate(g, h2_template, np.zeros((5, 2)), alph)
        assert (out == 3.5).all()

    def test_protected_division_by_zero(self, base_ops):
        t = build_template(1, 2)
        alph = Alphabet(base_ops, 1)
        sym = np.array([3, alph.constant_code, alph.constant_code])  # "/"
        g = Genotype(sym, np.array([0.0, 1.0, 0.0]))
        assert evaluate(g, t, np.zeros((1, 1)), alph)[0] == 1.0
        aq = ProtectionPolicy(division="analytic_quotient")
        assert evaluate(g, t, np.zeros((1, 1)), alph, policy=aq)[0] == 0.0

    def test_division_above_epsilon_is_exact(self, base_ops):
        t = build_template(1, 2)
        alph = Alphabet(base_ops, 1)
        sym = np.array([3, alph.constant_code, alph.constant_code])
        g = Genotype(sym, np.array([0.0, 3.0, 2.0]))
        assert evaluate(g, t, np.zeros((1, 1)), alph)[0] == 1.5

    def test_log_sqrt_exp_protection(self, extended_ops):
        t = build_template(1, 2)
        alph = Alphabet(extended_ops, 1)
        X = np.array([[-4.0]])
        for name, expected in [("sqrt", 2.0), ("log", np.log(4.0 + 1e-6))]:
            sym = np.array([extended_ops.names.index(name),
                            alph.feature_code(0), alph.constant_code])
            out = evaluate(Genotype(sym, np.zeros(3)), t, X, alph)
            assert out[0] == pytest.approx(expected, rel=1e-15)
        sym = np.array([extended_ops.names.index("exp"),
                        alph.constant_code, alph.constant_code])
        out = evaluate(Genotype(sym, np.array([0.0, 1e6, 0.0])), t, np.zeros((1, 1)), alph)
        assert np.isfinite(out[0]) and out[0] <= 1e300

    def test_malformed_operator_at_leaf(self, base_ops):
        t = build_template(1, 2)
        alph = Alphabet(base_ops, 1)
        sym = np.array([0, 0, alph.feature_code(0)])  # "+" at leaf position 1
        with pytest.raises(MalformedGenotypeError):
            evaluate(Genotype(sym, np.zeros(3)), t, np.zeros((2, 1)), alph)

    def test_matches_reference_interpreter(self, extended_ops):
        rng = np.random.default_rng(123)
        for height in (1, 2, 3):
            t = build_template(height, 2)
            alph = Alphabet(extended_ops, 3)
            X = rng.uniform(-5, 5, size=(20, 3))
            for _ in range(40):
                g = random_genotype(t, alph, rng)
                got = evaluate(g, t, X, alph)
                want = reference_evaluate(g, t, X, alph)
                assert np.array_equal(got, want, equal_nan=True) or np.allclose(
                    got, want, rtol=1e-12, atol=0, equal_nan=True
                )

    def test_intron_invariance(self, extended_ops):
        t = build_template(3, 2)
        alph = Alphabet(extended_ops, 2)
        rng = np.random.default_rng(5)
        X = rng.uniform(-3, 3, size=(30, 2))
        for _ in range(100):
            g = random_genotype(t, alph, rng)
            mask = compute_activity(g, t, alph)
            before = evaluate(g, t, X, alph)
            mutated = g.copy()
            inactive = np.flatnonzero(~mask)
            for i in inactive:
                if t.is_leaf[i]:
                    mutated.symbols[i] = alph.n_ops + rng.integers(alph.n_features + 1)
                else:
                    mutated.symbols[i] = rng.integers(alph.size)
                mutated.constants[i] = rng.uniform(-100, 100)
            after = evaluate(mutated, t, X, alph)
            assert np.array_equal(before, after, equal_nan=True)


class TestSignature:
    def test_intron_values_ignored(self, extended_ops, h2_template):
        alph = Alphabet(extended_ops, 2)
        a = fig_genotype(alph)
        b = a.copy()
        b.symbols[4] = alph.feature_code(1)  # intron under sin
        b.constants[6] = 99.0                # intron under sqrt
        assert active_signature(a, h2_template, alph) == active_signature(b, h2_template, alph)

    def test_active_leaf_change_differs(self, extended_ops, h2_template):
        alph = Alphabet(extended_ops, 2)
        a = fig_genotype(alph)
        b = a.copy()
        b.symbols[5] = alph.feature_code(0)  # sqrt(x1) -> sqrt(x0)
        assert active_signature(a, h2_template, alph) != active_signature(b, h2_template, alph)

    def test_active_constant_value_differs(self, base_ops, h2_template):
        alph = Alphabet(base_ops, 2)
        sym = np.array([0, alph.constant_code, alph.constant_code, 0, 0, 0, 0])
        sym[3:] = alph.feature_code(0)
        a = Genotype(sym, np.zeros(7))
        b = a.copy()
        b.constants[1] = 1.0
        assert active_signature(a, h2_template, alph) != active_signature(b, h2_template, alph)

    def test_differing_masks_differ(self, extended_ops, h2_template):
        alph = Alphabet(extended_ops, 2)
        a = fig_genotype(alph)
        b = a.copy()
        b.symbols[1] = 0  # sin -> "+": position 4 becomes active
        assert active_signature(a, h2_template, alph) != active_signature(b, h2_template, alph)


class TestInfix:
    def test_fig_example(self, extended_ops, h2_template):
        alph = Alphabet(extended_ops, 2)
        assert to_infix(fig_genotype(alph), h2_template, alph) == "(sin(x0) + sqrt(x1))"

    def test_root_feature(self, base_ops, h2_template):
        alph = Alphabet(base_ops, 3)
        g = random_genotype(h2_template, alph, np.random.default_rng(2))
        g.symbols[0] = alph.feature_code(2)
        assert to_infix(g, h2_template, alph) == "x2"

    def test_root_constant(self, base_ops, h2_template):
        alph = Alphabet(base_ops, 2)
        g = random_genotype(h2_template, alph, np.random.default_rng(3))
        g.symbols[0] = alph.constant_code
        g.constants[0] = 1.25
        assert to_infix(g, h2_template, alph) == "1.25"

    def test_feature_names(self, base_ops, h2_template):
        alph = Alphabet(base_ops, 2)
        g = random_genotype(h2_template, alph, np.random.default_rng(4))
        g.symbols[0] = alph.feature_code(1)
        assert to_infix(g, h2_template, alph, ["velocity", "angle"]) == "angle"
