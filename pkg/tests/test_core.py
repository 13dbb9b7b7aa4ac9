import itertools
import math
from functools import lru_cache

import numpy as np
import pytest

from robusthalf.core import (
    Dataset,
    Halfspace,
    LabeledExample,
    NormSpec,
    clean_error,
    dual_exponent,
    dual_maximizer,
    dual_norm,
    empirical_robust_risk,
    margin_error,
    margin_loss,
    norm,
    norm_subgradient,
    parse_p,
    robust_loss_lp,
    worst_perturbation,
)
from robusthalf.errors import InvalidHypothesisError, InvalidInputError


@pytest.mark.parametrize(
    "p, q",
    [(1, math.inf), (2, 2.0), (math.inf, 1.0), (3, 1.5), ("inf", 1.0)],
)
def test_dual_exponent(p, q):
    assert dual_exponent(p) == pytest.approx(q)
    assert NormSpec(p).q == pytest.approx(q)


def test_parse_p_rejects_below_one():
    with pytest.raises(InvalidInputError):
        parse_p(0.5)
    with pytest.raises(InvalidInputError):
        parse_p("abc")


def test_norms():
    v = np.array([3.0, -4.0])
    assert norm(v, 1) == 7.0
    assert norm(v, 2) == 5.0
    assert norm(v, "inf") == 4.0
    assert norm(v, 3) == pytest.approx((27 + 64) ** (1 / 3))


def test_norm_handles_tiny_fractional_powers():
    v = np.full(4, 1e-200)
    assert norm(v, 1.5) == pytest.approx(1e-200 * 4 ** (1 / 1.5))


@pytest.mark.parametrize("p", [1.0, 1.5, 2.0, 4.0, math.inf])
def test_norm_subgradient_is_tight(p, rng):
    v = rng.standard_normal(5)
    g = norm_subgradient(v, p)
    assert float(g @ v) == pytest.approx(norm(v, p))
    assert norm(g, dual_exponent(p)) <= 1.0 + 1e-9


def test_halfspace_rejects_zero_weights():
    with pytest.raises(InvalidHypothesisError):
        Halfspace(np.zeros(3))


def test_labeled_example_validates():
    with pytest.raises(InvalidInputError):
        LabeledExample(np.array([1.0, np.nan]), 1)
    with pytest.raises(InvalidInputError):
        LabeledExample(np.array([1.0]), 0)


def test_dataset_validates():
    with pytest.raises(InvalidInputError):
        Dataset(np.ones((2, 2)), np.array([1, 2]))
    with pytest.raises(InvalidInputError):
        Dataset(np.ones((2, 2)), np.array([1]))
    with pytest.raises(InvalidInputError):
        Dataset.from_examples([])


def test_robust_loss_closed_form_matches_margin():
    h = Halfspace(np.array([1.0, 0.0]))
    ex = LabeledExample(np.array([0.3, 0.0]), 1)
    l2 = NormSpec(2)
    assert robust_loss_lp(h, ex, 0.29, l2) == 0
    assert robust_loss_lp(h, ex, 0.31, l2) == 1
    assert margin_loss(h, ex, 0.29, l2) == 0
    assert margin_loss(h, ex, 0.31, l2) == 1


def test_robust_loss_uses_dual_norm():
    h = Halfspace(np.array([1.0, 1.0]))
    ex = LabeledExample(np.array([0.5, 0.5]), 1)
    # l_inf adversary of radius gamma costs gamma * ||w||_1 = 2 gamma
    assert robust_loss_lp(h, ex, 0.49, NormSpec("inf")) == 0
    assert robust_loss_lp(h, ex, 0.51, NormSpec("inf")) == 1
    # l_1 adversary costs gamma * ||w||_inf = gamma
    assert robust_loss_lp(h, ex, 0.99, NormSpec(1)) == 0


@pytest.mark.parametrize("p", [1.0, 2.0, 3.0, math.inf])
def test_worst_perturbation_attains_the_minimum(p, rng):
    spec = NormSpec(p)
    h = Halfspace(rng.standard_normal(4), 0.1)
    ex = LabeledExample(rng.standard_normal(4), -1)
    gamma = 0.3
    z = worst_perturbation(h, ex, gamma, spec)
    assert norm(z - ex.x, p) == pytest.approx(gamma)
    expected = ex.y * float(h.score(ex.x)) - gamma * norm(h.w, spec.q)
    assert ex.y * float(h.score(z)) == pytest.approx(expected)


def test_dual_maximizer_value(rng):
    spec = NormSpec(3)
    w = rng.standard_normal(6)
    u = dual_maximizer(w, spec)
    assert norm(u, 3) == pytest.approx(1.0)
    assert float(u @ w) == pytest.approx(norm(w, spec.q))


def test_margin_and_clean_error(toy):
    S, h = toy
    l2 = NormSpec(2)
    assert clean_error(h, S) == 0.0
    assert clean_error(h.negated(), S) == 1.0
    assert margin_error(h, S, 0.6, l2) == 0.5
    assert margin_error(h, S, 0.4, l2) == 0.0


def test_margin_error_raw_ignores_weight_scale(toy):
    S, _ = toy
    h = Halfspace(np.array([0.5, 0.0]))
    l2 = NormSpec(2)
    assert margin_error(h, S, 0.4, l2) == 0.0
    assert margin_error(h, S, 0.4, l2, normalized=False) == 0.5


def test_empirical_robust_risk_forms_agree(toy):
    from robusthalf.perturbations import NormBallAdversary

    S, h = toy
    adv = NormBallAdversary(0.6, NormSpec(2))
    assert empirical_robust_risk(h, S, adv) == 0.5
    assert empirical_robust_risk(h, S, (0.6, NormSpec(2))) == 0.5


def test_affine_halfspace_closed_form():
    h = Halfspace(np.array([1.0]), -0.5)
    ex = LabeledExample(np.array([1.0]), 1)
    assert robust_loss_lp(h, ex, 0.4, NormSpec(2)) == 0
    assert robust_loss_lp(h, ex, 0.6, NormSpec(2)) == 1


def test_dual_norm_bounds_every_sampled_pairing(rng):
    from robusthalf.datagen import sample_lp_ball

    for p in (1.0, 1.5, 2.0, math.inf):
        spec = NormSpec(p)
        v = rng.standard_normal(3)
        u = sample_lp_ball(rng, 10_000, 3, p)
        assert np.all(u @ v <= dual_norm(v, spec) + 1e-12)
        assert float(dual_maximizer(v, spec) @ v) == pytest.approx(dual_norm(v, spec), abs=1e-9)
    assert dual_norm(np.array([1.0, -2.0]), NormSpec(1)) == pytest.approx(2.0)
    assert dual_norm(np.array([1.0, -2.0]), NormSpec("inf")) == pytest.approx(3.0)


@pytest.mark.parametrize("p", [1.0, 2.0, math.inf])
def test_margin_and_robust_loss_ignore_positive_scaling(p, rng):
    spec = NormSpec(p)
    for _ in range(200):
        w = rng.standard_normal(3)
        ex = LabeledExample(rng.uniform(-1, 1, 3), 1 if rng.random() < 0.5 else -1)
        gamma = float(rng.uniform(0, 1))
        scale = float(rng.uniform(0.01, 100))
        h, scaled = Halfspace(w), Halfspace(scale * w)
        assert margin_loss(h, ex, gamma, spec) == margin_loss(scaled, ex, gamma, spec)
        assert robust_loss_lp(h, ex, gamma, spec) == robust_loss_lp(scaled, ex, gamma, spec)
    two = Halfspace(np.array([2.0, 0.0]))
    one = Halfspace(np.array([1.0, 0.0]))
    ex = LabeledExample(np.array([0.6, 0.0]), 1)
    assert margin_loss(two, ex, 0.5, NormSpec(2)) == margin_loss(one, ex, 0.5, NormSpec(2)) == 0


@lru_cache(maxsize=None)
def _ball_grid(d, p):
    """Lattice points of the unit l_p ball; for p = 2 the lattice is pushed onto the sphere."""
    axis = np.linspace(-1.0, 1.0, 17)
    cube = np.array(list(itertools.product(axis, repeat=d)))
    if p == 2.0:
        cube = cube[np.any(cube != 0.0, axis=1)]
        return cube / np.linalg.norm(cube, axis=1, keepdims=True)
    return cube[np.linalg.norm(cube, ord=p, axis=1) <= 1.0 + 1e-12]


@pytest.mark.slow
def test_closed_form_robust_loss_matches_grid_search(rng):
    checked = 0
    while checked < 1000:
        d = int(rng.integers(1, 5))
        p = [1.0, 2.0, math.inf][int(rng.integers(0, 3))]
        spec = NormSpec(p)
        w = rng.standard_normal(d)
        x = rng.uniform(-1, 1, d)
        y = 1 if rng.random() < 0.5 else -1
        gamma = float(rng.uniform(0.05, 1.0))
        cost = gamma * dual_norm(w, spec)
        # the p = 2 lattice is within 1 - cos(1/8) < 0.01 of the sphere in every direction
        if abs(y * float(x @ w) - cost) <= 0.05 * cost:
            continue
        grid = x + gamma * _ball_grid(d, p)
        grid_loss = int(np.min(y * (grid @ w)) <= 0.0)
        assert robust_loss_lp(Halfspace(w), LabeledExample(x, y), gamma, spec) == grid_loss
        checked += 1


def test_l_inf_worked_example_agrees_with_a_fine_grid():
    h = Halfspace(np.array([1.0, -2.0]))
    ex = LabeledExample(np.array([1.0, 1.0]), 1)
    assert robust_loss_lp(h, ex, 0.5, NormSpec("inf")) == 1
    axis = np.linspace(-0.5, 0.5, 1001)
    deltas = np.array(np.meshgrid(axis, axis)).reshape(2, -1).T
    assert float(np.min((ex.x + deltas) @ h.w)) == pytest.approx(-2.5)
