"""
Abstractions of nonlinear operations, floating point rounding and the
piecewise affine encoding
"""

import math
from fractions import Fraction

import numpy as np
import pytest
import sympy

from app.errors import AbstractionError
from app.services.abstraction import (
    F32,
    F64,
    FixedPointFormat,
    abstract_float_op,
    abstract_mod,
    abstract_nonlinearity,
    printed,
)
from app.services.pwa import PwaFunction, pwa_to_milm
from app.services.simulator import milm_transition

HALF_PI = (-math.pi / 2, math.pi / 2)
PI = (-math.pi, math.pi)


@pytest.mark.parametrize(
    "kind, order, domain, a",
    [
        ("sin", "linear", HALF_PI, Fraction(571, 1000)),
        ("sin", "linear", PI, Fraction(3142, 1000)),
        ("sin", "cubic", HALF_PI, Fraction(76, 1000)),
        ("sin", "cubic", PI, Fraction(2027, 1000)),
    ],
)
def test_taylor_remainder_bounds(kind, order, domain, a):
    assert abstract_nonlinearity(kind, domain, order).error == a


def test_sin_relation_contains_the_graph():
    rel = abstract_nonlinearity("sin", HALF_PI, "cubic")
    rng = np.random.default_rng(0)
    for x in rng.uniform(-math.pi / 2, math.pi / 2, size=25):
        assert rel.contains([x], math.sin(x))
    assert not rel.contains([0.0], 0.5)


def test_trig_domain_is_checked():
    with pytest.raises(AbstractionError):
        abstract_nonlinearity("sin", (-4, 4))
    with pytest.raises(AbstractionError):
        abstract_nonlinearity("sin", (0, 2), "pwl")


def test_pwl_sin_covers_the_quarter_period():
    rel = abstract_nonlinearity("sin", (0, Fraction(3, 2)), "pwl")
    assert rel.n_v == 1
    for x in (0.0, 0.3, 0.8, 1.2, 1.5):
        assert rel.contains([x], math.sin(x))


def test_sign_and_abs():
    sign = abstract_nonlinearity("sign", (-1, 1))
    assert sign.contains([0.5], 1) and not sign.contains([0.5], -1)
    assert sign.contains([0.0], -1) and sign.contains([0.0], 1)
    absolute = abstract_nonlinearity("abs", (-2, 2))
    assert absolute.contains([-0.3], 0.3)
    assert not absolute.contains([-0.3], -0.3)


def test_mod_selects_the_remainder():
    rel = abstract_mod((0, 10), 3)
    assert rel.notes["M"] == 4
    assert rel.n_v == 3
    assert rel.contains([7], 1)
    assert not rel.contains([7], 2)
    with pytest.raises(AbstractionError):
        abstract_mod((0, 10), 0)


class TestFloatingPoint:
    def test_single_precision_error(self):
        rel = abstract_float_op("+", "f32", 10**6)
        assert rel.error == 10**6 * F32.gamma + F32.beta
        assert printed(rel.error) == pytest.approx(0.12)

    def test_double_precision_error(self):
        assert printed(F64.delta(10**10)) == pytest.approx(2.3e-6)

    def test_overflow_threshold_is_rejected(self):
        with pytest.raises(AbstractionError):
            abstract_float_op("*", "f32", 10**39)

    def test_rounded_sum_contains_the_exact_one(self):
        rel = abstract_float_op("+", "f64", 1024)
        assert rel.contains([0.1, 0.2], 0.1 + 0.2)
        assert not rel.contains([0.1, 0.2], 0.31)

    def test_division_has_no_quotient(self):
        rel = abstract_float_op("/", "f64", 16)
        assert rel.n_w == 2
        assert rel.contains([1.0, 4.0], 0.25)

    def test_fixed_point(self):
        fmt = FixedPointFormat(8, Fraction(2))
        assert fmt.delta(1) == Fraction(2, 255)
        with pytest.raises(AbstractionError):
            fmt.delta(3)


class TestPiecewiseAffine:
    @staticmethod
    def tent() -> PwaFunction:
        # x/2 + 1/2 on [-1, 0], -x/2 + 1/2 on [0, 1]
        return PwaFunction.from_affine([
            ([[Fraction(1, 2)]], [Fraction(1, 2)], [[1], [-1]], [0, 1]),
            ([[Fraction(-1, 2)]], [Fraction(1, 2)], [[-1], [1]], [0, 1]),
        ])

    def test_encoding_dimensions(self):
        m = pwa_to_milm(self.tent(), ["x"])
        assert m.n == 1 and m.n_v == 2
        assert m.n_w == 2 * (4 + 2)

    @pytest.mark.parametrize("x", [Fraction(-3, 4), Fraction(-1, 3), Fraction(1, 5), Fraction(9, 10)])
    def test_milm_relation_is_the_graph(self, x):
        f = self.tent()
        successors = milm_transition(pwa_to_milm(f, ["x"]), [x], exact=True)
        assert successors
        for _, lower, upper in successors:
            assert list(lower) == list(upper)
        got = {tuple(lower) for _, lower, _ in successors}
        assert got == {tuple(v) for v in f.values([x])}


SAMPLES = 10**5


@pytest.mark.parametrize(
    "kind, order, domain",
    [
        ("sin", "linear", HALF_PI),
        ("sin", "cubic", HALF_PI),
        ("sin", "cubic", PI),
        ("cos", "linear", PI),
        ("cos", "cubic", PI),
    ],
)
def test_taylor_relation_contains_every_sampled_point(kind, order, domain):
    rel = abstract_nonlinearity(kind, domain, order)
    (u,) = rel.inputs
    poly = sympy.lambdify(u, rel.output.subs({w: 0 for w in rel.ws}), "numpy")
    x = np.concatenate([np.random.default_rng(7).uniform(*domain, size=SAMPLES), domain])
    gap = np.abs(getattr(np, kind)(x) - poly(x))
    assert gap.max() <= float(rel.error)


class TestRoundingSamples:
    def test_single_precision_sum(self):
        alpha = 10**6
        bound = float(abstract_float_op("+", "f32", alpha).error)
        rng = np.random.default_rng(11)
        a = rng.uniform(-alpha / 2, alpha / 2, SAMPLES).astype(np.float32)
        b = rng.uniform(-alpha / 2, alpha / 2, SAMPLES).astype(np.float32)
        rounded = (a + b).astype(np.float64)
        exact = a.astype(np.float64) + b.astype(np.float64)
        assert np.abs(rounded - exact).max() <= bound

    def test_single_precision_product(self):
        alpha = 10**6
        bound = float(abstract_float_op("*", "f32", alpha).error)
        rng = np.random.default_rng(12)
        a = rng.uniform(-1000, 1000, SAMPLES).astype(np.float32)
        b = rng.uniform(-1000, 1000, SAMPLES).astype(np.float32)
        rounded = (a * b).astype(np.float64)
        exact = a.astype(np.float64) * b.astype(np.float64)
        assert np.abs(rounded - exact).max() <= bound

    def test_double_precision_sum(self):
        bound = float(abstract_float_op("+", "f64", 1024).error)
        rng = np.random.default_rng(13)
        a, b = rng.uniform(-512, 512, (2, SAMPLES))
        s = a + b
        # two-sum: the rounding error of a + b, exactly
        bb = s - a
        err = (a - (s - bb)) + (b - bb)
        assert np.abs(err).max() <= bound


def box_rows(n: int):
    eye = np.eye(n, dtype=int)
    return eye.tolist() + (-eye).tolist(), [1] * (2 * n)


def orthant_piece(M, c, signs):
    """f = Mx + c on the box part where signs[k]·x_k ≥ 0 (0 leaves x_k free)"""
    S, s = box_rows(len(signs))
    for k, sign in enumerate(signs):
        if sign:
            S.append([-sign * int(i == k) for i in range(len(signs))])
            s.append(0)
    return (M, c, S, s)


half = Fraction(1, 2)
quarter = Fraction(1, 4)
third = Fraction(1, 3)

PWA_MAPS = {
    "saw": PwaFunction.from_affine([
        ([[-1]], [0], [[1], [-1]], [-third, 1]),
        ([[half]], [0], [[-1], [1]], [third, third]),
        ([[-1]], [1], [[-1], [1]], [-third, 1]),
    ]),
    "rotation": PwaFunction.from_affine([
        orthant_piece([[0, half], [-half, 0]], [0, 0], (1, 0)),
        orthant_piece([[half, 0], [0, 1]], [quarter, 0], (-1, 0)),
    ]),
    "quadrants": PwaFunction.from_affine([
        orthant_piece([[half, 0], [0, half]], [a * quarter, b * quarter], (a, b))
        for a in (1, -1)
        for b in (1, -1)
    ]),
    "twist": PwaFunction.from_affine([
        orthant_piece([[0, half, 0], [0, 0, half], [half, 0, 0]], [0, 0, quarter], (0, 0, 1)),
        orthant_piece([[half, 0, 0], [0, -half, 0], [0, 0, half]], [0, 0, 0], (0, 0, -1)),
    ]),
}


@pytest.mark.parametrize("name", sorted(PWA_MAPS))
def test_milm_relation_matches_brute_force(name):
    f = PWA_MAPS[name]
    m = pwa_to_milm(f, [f"x{k}" for k in range(f.n)])
    assert m.n_v == f.N
    rng = np.random.default_rng(len(name))
    for _ in range(6):
        # odd numerators over 97 never land on a piece boundary
        x = [Fraction(2 * int(k) + 1, 97) for k in rng.integers(-49, 48, size=f.n)]
        expected = {tuple(v) for v in f.values(x)}
        assert len(expected) == 1
        successors = milm_transition(m, x, exact=True)
        assert all(list(lower) == list(upper) for _, lower, upper in successors)
        assert {tuple(lower) for _, lower, _ in successors} == expected
