from fractions import Fraction as F

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from onlinebayes.measure import (
    Dist,
    FiniteKernel,
    FiniteSpace,
    JointDist,
    ScalarMode,
    ShapeError,
    as_weights,
    compose_kernels,
    dumps,
    extend_joint,
    graph_joint,
    loads,
    marginalize,
    max_abs_diff,
    product_kernel,
    pushforward,
    swap_joint,
    to_rational,
    total_mass,
)
from strategies import dist, kernel, modes, simplex, sizes, space, stochastic

TWO = FiniteSpace(("t1", "t2"))
YS = FiniteSpace(("y1", "y2"))
ROWS = [[F(1, 5), F(4, 5)], [F(3, 5), F(2, 5)]]


def exact(values):
    return as_weights(values, ScalarMode.EXACT)


def tol(mode):
    return 0 if ScalarMode(mode) is ScalarMode.EXACT else 1e-12


# scalars and construction


def test_float_literals_become_short_rationals():
    assert to_rational(0.2) == F(1, 5)
    assert to_rational("3/7") == F(3, 7)


def test_dist_rejects_bad_mass():
    with pytest.raises(ValueError):
        Dist(TWO, exact([F(1, 2), F(1, 3)]))
    with pytest.raises(ValueError):
        Dist(TWO, np.array([1.2, -0.2]))
    Dist(TWO, np.array([0.5, 0.5 + 1e-13]))


def test_duplicate_labels_rejected():
    with pytest.raises(ValueError):
        FiniteSpace(("a", "a"))


def test_values_are_read_only():
    d = Dist.uniform(TWO)
    with pytest.raises(ValueError):
        d.weights[0] = 1


def test_mixed_modes_coerce_to_float():
    k = FiniteKernel(TWO, YS, exact(ROWS))
    mu = Dist(TWO, np.array([0.5, 0.5]))
    assert pushforward(k, mu).mode is ScalarMode.FLOAT


# composition


def test_identity_composition():
    k = FiniteKernel(TWO, YS, exact(ROWS))
    assert max_abs_diff(compose_kernels(k, FiniteKernel.identity(TWO)).rows, k.rows) == 0
    assert max_abs_diff(compose_kernels(FiniteKernel.identity(YS), k).rows, k.rows) == 0


def test_deterministic_composition():
    ab, bits, uv = FiniteSpace(("a", "b")), FiniteSpace((0, 1)), FiniteSpace(("u", "v"))
    f = {"a": 1, "b": 0}
    g = {0: "u", 1: "v"}
    kf = FiniteKernel.deterministic(ab, bits, f.get)
    kg = FiniteKernel.deterministic(bits, uv, g.get)
    expected = FiniteKernel.deterministic(ab, uv, lambda x: g[f[x]])
    assert max_abs_diff(compose_kernels(kg, kf).rows, expected.rows) == 0


def test_composition_matches_matrix_product():
    a = [[F(1, 3), F(1, 3), F(1, 3)], [F(1, 2), F(1, 4), F(1, 4)]]
    b = [[F(1, 2), F(1, 2)], [F(1, 5), F(4, 5)], [F(2, 3), F(1, 3)]]
    k1 = FiniteKernel(TWO, FiniteSpace.of_size(3), exact(a))
    k2 = FiniteKernel(FiniteSpace.of_size(3), YS, exact(b))
    expected = [[F(41, 90), F(49, 90)], [F(7, 15), F(8, 15)]]
    assert compose_kernels(k2, k1).rows.tolist() == expected


def test_composition_shape_error():
    k = FiniteKernel(TWO, YS, exact(ROWS))
    with pytest.raises(ShapeError):
        compose_kernels(k, FiniteKernel.identity(FiniteSpace.of_size(3)))


@given(st.data(), sizes, sizes, sizes, sizes, modes)
def test_composition_is_associative(data, a, b, c, d, mode):
    sa, sb, sc, sd = space(a, "a"), space(b, "b"), space(c, "c"), space(d, "d")
    k1 = data.draw(kernel(sa, sb, mode))
    k2 = data.draw(kernel(sb, sc, mode))
    k3 = data.draw(kernel(sc, sd, mode))
    left = compose_kernels(k3, compose_kernels(k2, k1))
    right = compose_kernels(compose_kernels(k3, k2), k1)
    assert max_abs_diff(left.rows, right.rows) <= tol(mode)


@given(st.data(), sizes, sizes, sizes)
def test_composition_equals_loop_product(data, a, b, c):
    r1 = data.draw(stochastic(a, b))
    r2 = data.draw(stochastic(b, c))
    k = compose_kernels(FiniteKernel(space(b, "b"), space(c, "c"), exact(r2)), FiniteKernel(space(a, "a"), space(b, "b"), exact(r1)))
    assert k.rows.tolist() == oracles.matmul(r1, r2)


# pushforward and graphs


def test_pushforward_of_dirac_is_row():
    k = FiniteKernel(TWO, YS, exact(ROWS))
    assert pushforward(k, Dist.dirac(TWO, "t2")).weights.tolist() == ROWS[1]


def test_pushforward_weighted_rows():
    k = FiniteKernel(TWO, YS, exact(ROWS))
    assert pushforward(k, Dist.uniform(TWO)).weights.tolist() == [F(2, 5), F(3, 5)]


@given(st.data(), sizes, sizes, sizes, modes)
def test_pushforward_is_functorial(data, a, b, c, mode):
    sa, sb, sc = space(a, "a"), space(b, "b"), space(c, "c")
    k1, k2 = data.draw(kernel(sa, sb, mode)), data.draw(kernel(sb, sc, mode))
    mu = data.draw(dist(sa, mode))
    lhs = pushforward(compose_kernels(k2, k1), mu)
    rhs = pushforward(k2, pushforward(k1, mu))
    assert max_abs_diff(lhs.weights, rhs.weights) <= tol(mode)
    assert abs(total_mass(lhs) - 1) <= tol(mode)


@given(st.data(), sizes)
def test_pushforward_through_identity(data, a):
    sa = space(a, "a")
    mu = data.draw(dist(sa))
    assert max_abs_diff(pushforward(FiniteKernel.identity(sa), mu).weights, mu.weights) == 0


def test_graph_joint_values():
    j = graph_joint(FiniteKernel(TWO, YS, exact(ROWS)), Dist.uniform(TWO))
    assert j.weights.tolist() == [[F(1, 10), F(2, 5)], [F(3, 10), F(1, 5)]]


def test_graph_of_dirac_and_deterministic():
    k = FiniteKernel(TWO, YS, exact(ROWS))
    j = graph_joint(k, Dist.dirac(TWO, "t1"))
    assert j.weights.tolist() == [ROWS[0], [0, 0]]
    det = FiniteKernel.deterministic(TWO, YS, {"t1": "y2", "t2": "y1"}.get)
    jd = graph_joint(det, Dist.uniform(TWO))
    assert jd.weights.tolist() == [[0, F(1, 2)], [F(1, 2), 0]]


@given(st.data(), sizes, sizes, modes)
def test_graph_marginals(data, a, b, mode):
    sa, sb = space(a, "a"), space(b, "b")
    k, mu = data.draw(kernel(sa, sb, mode)), data.draw(dist(sa, mode))
    j = graph_joint(k, mu)
    assert max_abs_diff(marginalize(j, [0]).weights, mu.weights) <= tol(mode)
    assert max_abs_diff(marginalize(j, [1]).weights, pushforward(k, mu).weights) <= tol(mode)


@given(st.data(), st.integers(1, 5), st.integers(1, 5), st.integers(1, 5))
def test_graph_of_composition(data, a, b, c):
    sa, sb, sc = space(a, "a"), space(b, "b"), space(c, "c")
    k1, k2 = data.draw(kernel(sa, sb)), data.draw(kernel(sb, sc))
    mu = data.draw(dist(sa))
    chained = extend_joint(graph_joint(k1, mu), k2, axis=1)
    assert max_abs_diff(marginalize(chained, [0, 2]).weights, graph_joint(compose_kernels(k2, k1), mu).weights) == 0
    # brute force over (x, y, z)
    brute = [[sum(mu.weights[x] * k1.rows[x, y] * k2.rows[y, z] for y in range(b)) for z in range(c)] for x in range(a)]
    assert marginalize(chained, [0, 2]).weights.tolist() == brute


# products, swaps, marginals


def test_product_of_one_kernel():
    k = FiniteKernel(TWO, YS, exact(ROWS))
    assert product_kernel([k]) is k


def test_product_of_two_copies_is_outer_square():
    p = F(1, 3)
    k = FiniteKernel(FiniteSpace(("t",)), YS, exact([[p, 1 - p]]))
    rows = product_kernel([k, k]).rows
    assert rows.tolist() == [[p * p, p * (1 - p), (1 - p) * p, (1 - p) ** 2]]


def test_product_of_three_rows():
    t = FiniteSpace(("t",))
    r = [[F(1, 2), F(1, 2)], [F(1, 3), F(2, 3)], [F(1, 4), F(3, 4)]]
    k = product_kernel([FiniteKernel(t, YS, exact([row])) for row in r])
    expected = [F(1, 24), F(1, 8), F(1, 12), F(1, 4), F(1, 24), F(1, 8), F(1, 12), F(1, 4)]
    assert k.rows[0].tolist() == expected
    assert k.target.labels[1] == ("y1", "y1", "y2")


@given(st.data(), st.integers(1, 3), st.lists(st.integers(1, 4), min_size=1, max_size=3))
def test_product_matches_tensor_loops(data, n_src, target_sizes):
    src = space(n_src, "s")
    ks = [data.draw(kernel(src, space(t, f"y{i}_"))) for i, t in enumerate(target_sizes)]
    rows = product_kernel(ks).rows
    for i in range(n_src):
        assert rows[i].tolist() == oracles.outer(*[k.rows[i].tolist() for k in ks])


def test_product_errors():
    with pytest.raises(ValueError):
        product_kernel([])
    with pytest.raises(ShapeError):
        product_kernel([FiniteKernel.identity(TWO), FiniteKernel.identity(YS)])


def test_swap():
    j = JointDist((TWO, YS), exact([[F(1, 10), F(2, 5)], [F(3, 10), F(1, 5)]]))
    s = swap_joint(j)
    assert s.weights.tolist() == [[F(1, 10), F(3, 10)], [F(2, 5), F(1, 5)]]
    assert s.factors == (YS, TWO)
    assert swap_joint(s).weights.tolist() == j.weights.tolist()
    sym = JointDist((TWO, TWO), exact([[F(1, 4), F(1, 8)], [F(1, 8), F(1, 2)]]))
    assert swap_joint(sym).weights.tolist() == sym.weights.tolist()
    with pytest.raises(ShapeError):
        swap_joint(JointDist((TWO, TWO, TWO), exact([F(1, 8)] * 8)))


@given(st.data(), st.integers(1, 4), st.integers(1, 4), st.integers(1, 4))
def test_marginalize_three_factors(data, a, b, c):
    w = data.draw(simplex(a * b * c))
    j = JointDist((space(a, "a"), space(b, "b"), space(c, "c")), exact(w))
    got = marginalize(j, [1]).weights.tolist()
    brute = [sum(w[(x * b + y) * c + z] for x in range(a) for z in range(c)) for y in range(b)]
    assert got == brute
    assert marginalize(j, [0, 1, 2]).weights.tolist() == j.weights.tolist()
    assert marginalize(j, [2, 0]).weights.tolist() == np.transpose(j.weights.sum(axis=1)).tolist()


def test_marginalize_errors():
    j = JointDist((TWO, YS), exact([[F(1, 4)] * 2] * 2))
    with pytest.raises(ValueError):
        marginalize(j, [])
    with pytest.raises(IndexError):
        marginalize(j, [2])


def test_flat_index_is_row_major():
    j = JointDist((TWO, YS, FiniteSpace(("u", "v", "w"))), exact([F(i + 1, 78) for i in range(12)]))
    labels = FiniteSpace.product(*j.factors).labels
    for flat, lab in enumerate(labels):
        idx = tuple(f.index(l) for f, l in zip(j.factors, lab))
        assert j.flat[flat] == j.weights[idx]


# serialization


@given(st.data(), sizes, sizes, modes)
def test_serialization_round_trip(data, a, b, mode):
    sa, sb = space(a, "a"), space(b, "b")
    k, mu = data.draw(kernel(sa, sb, mode)), data.draw(dist(sa, mode))
    for obj in (sa, mu, k, graph_joint(k, mu)):
        back = loads(dumps(obj))
        assert type(back) is type(obj)
        if hasattr(obj, "weights"):
            assert back.weights.tolist() == obj.weights.tolist()
        if hasattr(obj, "rows"):
            assert back.rows.tolist() == obj.rows.tolist()
    assert loads(dumps(sa)) == sa


def test_tuple_labels_survive_serialization():
    sp = FiniteSpace.product(TWO, YS)
    d = loads(dumps(Dist.uniform(sp)))
    assert d.space == sp
