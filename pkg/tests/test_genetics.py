from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import expressions
from symreg.config import DEEP_ONLY_MUTATIONS, MUTATIONS, Grammar, MutationConfig, Options
from symreg.exprtree import (
    Binary,
    Parameter,
    Unary,
    Variable,
    check_grammar,
    children,
    depth,
    is_operator,
    node_count,
    parameters,
    parse,
    replace_at,
    subtree_at,
    to_text,
    trim_to_size,
    walk,
)
from symreg.exprtree.evaluate import columns, evaluate_batch
from symreg.genetics import (
    addterm_mutation,
    apply_mutation,
    choose_mutation,
    crossover,
    drastic_simplify,
    eligible_mutations,
    hoist_mutation,
    innergrow_mutation,
    insert_mutation,
    mutate,
    point_mutation,
    random_expression,
    simplify_algebraic,
    subtree_mutation,
)

OPTS = Options(n_vars=2)
STRICT = Options(
    n_vars=2,
    grammar=Grammar(
        banned_nestings=frozenset({("cos", "cos"), ("exp", "log"), ("log", "exp")}),
        forbid_param_in_exponent=True,
    ),
)
DEEP = parse("3.0 * cos(1.0 + v2) + exp(v1 * 0.5)")


def diff_positions(a, b, path=()):
    """Paths of the topmost nodes whose label differs; equal labels recurse."""
    if a == b:
        return []
    if not (type(a) is type(b) and is_operator(a) and a.op == b.op):
        return [path]
    out = []
    for i, (x, y) in enumerate(zip(children(a), children(b))):
        out += diff_positions(x, y, path + (i,))
    return out


def edited_at(before, after):
    """The single path P with ``after == replace_at(before, P, subtree_at(after, P))``."""
    diffs = diff_positions(before, after)
    if not diffs:
        return None
    common = diffs[0]
    for d in diffs[1:]:
        n = 0
        while n < min(len(common), len(d)) and common[n] == d[n]:
            n += 1
        common = common[:n]
    return common


# random expressions


@pytest.mark.parametrize("seed", range(20))
def test_random_expression_depth_in_range(seed):
    e = random_expression(OPTS, np.random.default_rng(seed), depth_range=(2, 4))
    assert 1 <= depth(e) <= 4


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=300)
def test_random_expression_conforms_to_grammar(seed):
    e = random_expression(STRICT, np.random.default_rng(seed))
    assert check_grammar(e, STRICT.grammar)
    assert all(n.index <= STRICT.n_vars for _, n in walk(e) if isinstance(n, Variable))


def test_random_expression_uses_only_allowed_operators():
    opts = replace(OPTS, operators=replace(OPTS.operators, binary_operators=("add",), unary_operators=("sin",)))
    rng = np.random.default_rng(0)
    for _ in range(200):
        e = random_expression(opts, rng)
        assert {n.op for _, n in walk(e) if is_operator(n)} <= {"add", "sin"}


# single-site mutations


@pytest.mark.parametrize("seed", range(30))
def test_insert_wraps_one_node(seed):
    out = insert_mutation(DEEP, OPTS, np.random.default_rng(seed))
    p = edited_at(DEEP, out)
    assert p is not None
    assert subtree_at(DEEP, p) in children(subtree_at(out, p))


@pytest.mark.parametrize("seed", range(30))
def test_point_changes_one_node_and_keeps_shape(seed):
    out = point_mutation(DEEP, OPTS, np.random.default_rng(seed))
    assert node_count(out) == node_count(DEEP)
    assert len(diff_positions(DEEP, out)) <= 1
    assert [type(n) for _, n in walk(out)] == [type(n) for _, n in walk(DEEP)]


def test_point_scales_parameter_within_factor_range():
    e = Parameter(2.0)
    for seed in range(50):
        out = point_mutation(e, OPTS, np.random.default_rng(seed))
        assert 1.0 <= out.value <= 4.0


@pytest.mark.parametrize("seed", range(30))
def test_addterm_adds_a_term_at_the_root(seed):
    out = addterm_mutation(DEEP, OPTS, np.random.default_rng(seed))
    assert out.op == "add" and out.left == DEEP


@pytest.mark.parametrize("seed", range(30))
def test_hoist_keeps_one_operand(seed):
    out = hoist_mutation(DEEP, OPTS, np.random.default_rng(seed))
    p = edited_at(DEEP, out)
    assert subtree_at(out, p) in children(subtree_at(DEEP, p))


def test_hoist_of_leaf_is_identity(rng):
    assert hoist_mutation(Variable(1), OPTS, rng) == Variable(1)


@pytest.mark.parametrize("seed", range(30))
def test_innergrow_copies_from_elsewhere_in_tree(seed):
    out = innergrow_mutation(DEEP, OPTS, np.random.default_rng(seed))
    p = edited_at(DEEP, out)
    donors = {n for q, n in walk(DEEP) if q[: len(p)] != p}
    assert subtree_at(out, p) in donors


@pytest.mark.parametrize("seed", range(30))
def test_subtree_replaces_an_operator_node(seed):
    out = subtree_mutation(DEEP, OPTS, np.random.default_rng(seed))
    p = edited_at(DEEP, out)
    if p is not None:
        ops = {q for q, n in walk(DEEP) if is_operator(n)}
        assert any(p[: len(q)] == q for q in ops)


def test_mutations_are_deterministic_per_seed():
    for name in MUTATIONS:
        a = apply_mutation(name, DEEP, OPTS, np.random.default_rng(4), partner=parse("v1 / v2"))
        b = apply_mutation(name, DEEP, OPTS, np.random.default_rng(4), partner=parse("v1 / v2"))
        assert a == b, name


GOLDEN_MUTATE = {
    0: "3.0 * cos(1.0) + exp(v1 * 0.5)",
    1: "3.0 * cos(1.0 + v2) + exp(v1 * 0.5) + cos(-0.3632034545233549 / (-1.8897635470277265))",
    2: "3.0^cos(1.0 + v2) + exp(v1 * 0.5)",
    3: "sin(3.0 * cos(1.0 + v2)) + exp(v1 * 0.5)",
    4: "3.0 * cos(1.0 + v2) + exp(v1 * 0.5)",
    5: "v2",
}


def test_mutate_golden_snapshot():
    got = {seed: to_text(mutate(DEEP, OPTS, np.random.default_rng(seed), partner=parse("v1 / v2"))) for seed in range(6)}
    assert got == GOLDEN_MUTATE


def test_grammar_survives_ten_thousand_mutations():
    rng = np.random.default_rng(2024)
    pool = [random_expression(STRICT, rng) for _ in range(50)]
    bad = 0
    for i in range(10_000):
        e = pool[i % len(pool)]
        out = mutate(e, STRICT, rng, partner=pool[(i * 7 + 3) % len(pool)])
        bad += not check_grammar(out, STRICT.grammar)
        # trimming can break the grammar; the engine drops such trees, so do we
        trimmed = trim_to_size(out, STRICT.max_nodes, rng)
        if check_grammar(trimmed, STRICT.grammar):
            pool[i % len(pool)] = trimmed
    assert bad == 0


@given(expressions(unary=("exp", "log", "sin")), st.integers(0, 2**32 - 1))
@settings(max_examples=200)
def test_trimmed_mutation_never_exceeds_max_nodes(e, seed):
    rng = np.random.default_rng(seed)
    out = trim_to_size(mutate(e, OPTS, rng, partner=e), OPTS.max_nodes, rng)
    assert node_count(out) <= OPTS.max_nodes


# drastic simplification


def test_drastic_drops_small_additive_parameter():
    assert drastic_simplify(parse("v1 + 0.00001"), 1e-4) == parse("v1")


def test_drastic_drops_term_scaled_by_small_parameter():
    assert drastic_simplify(parse("v1 + v2 * 0.00001"), 1e-4) == parse("v1")


def test_drastic_keeps_large_parameter():
    e = parse("v1 + 0.5")
    assert drastic_simplify(e, 1e-4) == e


@pytest.mark.parametrize(
    "before, after",
    [
        ("0.00001 - v1", "-v1"),
        ("v1 - 0.00001 * v2", "v1"),
        ("0.00001 * v2", "0.0"),
        ("exp(0.00001 * v2) * v1", "exp(0.0) * v1"),
        ("cos(v1 + 0.00001) + 0.00001 * v2 * v1", "cos(v1)"),
        ("-(0.00001 * v2) + v1", "v1"),
    ],
)
def test_drastic_more_cases(before, after):
    assert drastic_simplify(parse(before), 1e-4) == parse(after)


def _small_operands(e, tol):
    hits = []
    for _, n in walk(e):
        if isinstance(n, Binary) and n.op in ("add", "sub", "mul"):
            hits += [c for c in children(n) if isinstance(c, Parameter) and abs(c.value) < tol]
    return hits


small_params = st.sampled_from([1e-6, -3e-5, 0.0, 2.0, -1.5, 0.7])


@given(
    st.recursive(
        st.one_of(st.integers(1, 2).map(Variable), small_params.map(Parameter)),
        lambda inner: st.one_of(
            st.builds(Unary, st.sampled_from(("neg", "exp", "cos")), inner),
            st.builds(Binary, st.sampled_from(("add", "sub", "mul", "div")), inner, inner),
        ),
        max_leaves=12,
    )
)
@settings(max_examples=500)
def test_drastic_leaves_no_small_sum_or_product_operands(e):
    out = drastic_simplify(e, 1e-4)
    assert _small_operands(out, 1e-4) == []
    assert drastic_simplify(out, 1e-4) == out


# algebraic simplification


@pytest.mark.parametrize(
    "before, after",
    [
        ("(v1 * 1.0) + 0.0", "v1"),
        ("2.0 + 3.0", "5.0"),
        ("log(exp(v1))", "v1"),
        ("v1 - v1", "0.0"),
        ("v2 * 0.0 + v1", "v1"),
        ("cos(v1) / cos(v1)", "1.0"),
        ("v1^1.0 + v2^0.0", "v1 + 1.0"),
        ("-(-v1)", "v1"),
        ("0.0 - v1", "-v1"),
        ("log(0.0) + v1", "log(0.0) + v1"),
        ("exp(1000.0) * v1", "exp(1000.0) * v1"),
    ],
)
def test_simplify_examples(before, after):
    assert simplify_algebraic(parse(before)) == parse(after)


def test_log_exp_simplification_evaluates_equal():
    X = np.random.default_rng(1).uniform(-5, 5, size=(100, 1))
    a = evaluate_batch(parse("log(exp(v1))"), columns(X, batch=True), 100, np.zeros((0, 1)))
    np.testing.assert_allclose(a[:, 0], X[:, 0], rtol=1e-12, atol=1e-15)


IDENTITIES = (
    lambda e, r: Binary("add", e, Parameter(0.0)),
    lambda e, r: Binary("mul", Parameter(1.0), e),
    lambda e, r: Binary("add", Binary("mul", e, Parameter(0.0)), Variable(1)),
    lambda e, r: Unary("log", Unary("exp", e)),
    lambda e, r: Unary("neg", Unary("neg", e)),
    lambda e, r: Binary("add", Variable(2), Binary("sub", e, e)),
    lambda e, r: Binary("mul", Variable(2), Binary("div", e, e)),
    lambda e, r: Binary("pow", e, Parameter(1.0)),
    lambda e, r: Binary("add", e, Binary("pow", Variable(1), Parameter(0.0))),
    lambda e, r: Binary("mul", e, Binary("add", Parameter(float(r.uniform(-2, 2))), Parameter(1.5))),
)


def _row_values(e, X):
    P = np.array(parameters(e), dtype=float).reshape(-1, 1)
    return evaluate_batch(e, columns(X, batch=True), len(X), P)[:, 0]


def _collapse_log_exp(e):
    if isinstance(e, Unary) and e.op == "log" and isinstance(e.child, Unary) and e.child.op == "exp":
        return _collapse_log_exp(e.child.child)
    if is_operator(e):
        kids = tuple(_collapse_log_exp(c) for c in children(e))
        return Unary(e.op, kids[0]) if isinstance(e, Unary) else Binary(e.op, *kids)
    return e


def test_simplify_preserves_values_wherever_original_valid():
    rng = np.random.default_rng(99)
    X = rng.uniform(-3, 3, size=(100, 2))
    checked = rounding_only = 0
    for _ in range(1000):
        e = random_expression(OPTS, rng, depth_range=(1, 4))
        for _ in range(int(rng.integers(1, 4))):
            path, node = list(walk(e))[int(rng.integers(node_count(e)))]
            e = replace_at(e, path, IDENTITIES[int(rng.integers(len(IDENTITIES)))](node, rng))
        orig = _row_values(e, X)
        simp = _row_values(simplify_algebraic(e), X)
        ok = np.isfinite(orig)
        # log(exp(x)) is not bitwise x; if a later cancellation is all that
        # made a row valid, the row is invalid once log(exp(x)) reads as x
        accidental = ok & ~np.isfinite(simp) & ~np.isfinite(_row_values(_collapse_log_exp(e), X))
        rounding_only += accidental.sum()
        ok &= ~accidental
        checked += ok.sum()
        np.testing.assert_allclose(simp[ok], orig[ok], rtol=1e-10, atol=1e-10, err_msg=to_text(e))
    assert checked > 10_000
    assert rounding_only <= checked * 1e-3


# crossover


def test_crossover_takes_subtree_from_donor(rng):
    a = parse("v1 * cos(v2) + 2.0")
    b = parse("exp(v2) - 3.5 / v1")
    donors = {n for _, n in walk(b)}
    for _ in range(50):
        out = crossover(a, b, rng)
        assert any(
            replace_at(a, p, d) == out for p, _ in walk(a) for d in donors
        )


def test_self_crossover_is_subtree_substitution(rng):
    for _ in range(50):
        out = crossover(DEEP, DEEP, rng)
        subs = {n for _, n in walk(DEEP)}
        assert any(replace_at(DEEP, p, s) == out for p, _ in walk(DEEP) for s in subs)


def test_crossover_respects_max_nodes(rng):
    for _ in range(50):
        assert node_count(crossover(DEEP, DEEP, rng, max_nodes=9)) <= 9


GOLDEN_CROSSOVER = [
    "3.0 * cos(1.0 + v2) + 4.0",
    "4.0",
    "3.0 * cos(v2 - 4.0 + v2) + exp(v1 * 0.5)",
    "3.0 * cos(1.0 + v1) + exp(v1 * 0.5)",
]


def test_crossover_golden_snapshot():
    rng = np.random.default_rng(5)
    got = [to_text(crossover(DEEP, parse("v1 / (v2 - 4.0)"), rng)) for _ in range(4)]
    assert got == GOLDEN_CROSSOVER


# mutation choice


def test_shallow_tree_only_gets_shallow_mutations():
    for e in (Variable(1), parse("v1 + 2.0"), parse("cos(v1)")):
        w = eligible_mutations(e, OPTS, has_partner=True)
        assert {k for k, v in w.items() if v > 0} == {"insert", "point", "addterm"}


def test_hoist_only_on_shallow_tree_falls_back_to_point(rng):
    weights = {name: 0.0 for name in MUTATIONS}
    weights["hoist"] = 1.0
    opts = replace(OPTS, mutation=MutationConfig(mutation_weights=weights))
    assert {choose_mutation(Variable(1), opts, rng) for _ in range(20)} == {"point"}


def test_crossover_needs_a_partner(rng):
    assert eligible_mutations(DEEP, OPTS, has_partner=False)["crossover"] == 0.0
    with pytest.raises(ValueError):
        apply_mutation("crossover", DEEP, OPTS, rng)


def test_draw_frequencies_match_weights():
    n = 10_000
    rng = np.random.default_rng(31)
    counts = {name: 0 for name in MUTATIONS}
    for _ in range(n):
        counts[choose_mutation(DEEP, OPTS, rng, has_partner=True)] += 1
    w = np.array([OPTS.mutation.weight(m) for m in MUTATIONS])
    p = w / w.sum()
    for name, pi in zip(MUTATIONS, p):
        sigma = np.sqrt(n * pi * (1 - pi))
        assert abs(counts[name] - n * pi) <= 3 * sigma, (name, counts[name], n * pi)


def test_deep_only_set():
    assert set(DEEP_ONLY_MUTATIONS) == {"hoist", "innergrow", "subtree", "drastic_simplify", "simplify", "crossover"}
