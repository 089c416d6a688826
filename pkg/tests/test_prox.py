import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import block_oracle, box_oracle, delta_oracle, quadratic_oracle

from strattack.errors import DimensionError, ParamError, StructureError
from strattack.grouping import Dims, make_groups
from strattack.prox import (
    BoxSpec,
    box_step,
    delta_step,
    group_shrink,
    group_shrink_copies,
    group_shrink_overlap,
    z_step,
    z_step_overlap,
)

seeds = st.integers(0, 2**32 - 1)


def test_delta_step_examples():
    a = np.array([3.0, -1.5])
    assert np.array_equal(delta_step(a, 0.0, 2.0), a)
    assert delta_step(np.array([3.0]), 1.0, 1.0)[0] == pytest.approx(1.0)
    with pytest.raises(ParamError):
        delta_step(a, 1.0, 0.0)
    with pytest.raises(ParamError):
        delta_step(a, -1.0, 1.0)


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_delta_step_matches_scalar_minimiser(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(0, 3, 6)
    gamma, rho = rng.uniform(0, 5), rng.uniform(0.1, 5)
    np.testing.assert_allclose(delta_step(a, gamma, rho), delta_oracle(a, gamma, rho), atol=1e-8)


def test_box_step_examples():
    box = BoxSpec(np.array([0.9, 0.2, 0.5]), 0.5)
    out = box_step(np.array([0.4, -0.4, 0.1]), box)
    np.testing.assert_allclose(out, [0.1, -0.2, 0.1])
    out = box_step(np.array([-0.4]), BoxSpec(np.array([0.2]), 0.1))
    assert out[0] == pytest.approx(-0.1)


def test_box_spec_validation():
    with pytest.raises(ParamError):
        BoxSpec(np.array([0.5]), 0.0)
    with pytest.raises(ParamError):
        BoxSpec(np.array([1.5]), 1.0)
    with pytest.raises(DimensionError):
        box_step(np.zeros(2), BoxSpec(np.zeros(3), 1.0))


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_box_step_feasible_input_unchanged_and_idempotent(seed):
    rng = np.random.default_rng(seed)
    box = BoxSpec(rng.uniform(0, 1, 8), rng.uniform(0.05, 1))
    b = rng.uniform(box.lower, box.upper)
    assert np.array_equal(box_step(b, box), b)
    wild = rng.normal(0, 2, 8)
    once = box_step(wild, box)
    assert np.array_equal(box_step(once, box), once)
    np.testing.assert_allclose(once, box_oracle(wild, box.lower, box.upper), atol=1e-8)


def test_group_shrink_examples():
    spec = make_groups(Dims(2, 2), 2, 2)
    c = np.array([3.0, 4.0, 0.0, 0.0]).reshape(2, 2, 1)
    np.testing.assert_allclose(group_shrink(c, spec, 2.0, 1.0).ravel(), [1.8, 2.4, 0, 0])
    assert np.array_equal(group_shrink(c, spec, 0.0, 1.0), c)
    small = np.array([0.6, 0.8, 0.0, 0.0]).reshape(2, 2, 1)
    assert np.all(group_shrink(small, spec, 2.0, 1.0) == 0)


def test_group_shrink_rejects_overlap():
    spec = make_groups(Dims(3, 3), 2, 1)
    with pytest.raises(StructureError):
        group_shrink(np.zeros((3, 3, 1)), spec, 1.0, 1.0)


def test_group_shrink_overlap_examples():
    c = np.array([3.0, 4.0, 7.0])
    np.testing.assert_allclose(group_shrink_overlap(c, [0, 1], 2.0, 1.0), [1.8, 2.4, 7.0])
    assert np.array_equal(group_shrink_overlap(c, [], 2.0, 1.0), c)
    # a group covering every index reduces to the disjoint operator on one group
    spec = make_groups(Dims(2, 2), 2, 2)
    img = np.array([3.0, 4.0, 1.0, -2.0])
    np.testing.assert_allclose(group_shrink_overlap(img, np.arange(4), 2.0, 1.0),
                               group_shrink(img.reshape(2, 2, 1), spec, 2.0, 1.0).ravel())


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_group_shrink_matches_block_oracle(seed):
    rng = np.random.default_rng(seed)
    spec = make_groups(Dims(4, 2), 2, 2)
    c = rng.normal(0, 2, (2, 4, 1))
    tau, rho = rng.uniform(0, 4), rng.uniform(0.2, 3)
    out = group_shrink(c, spec, tau, rho).reshape(-1)
    flat = c.reshape(-1)
    for g in spec.groups:
        np.testing.assert_allclose(out[g], block_oracle(flat[g], tau, rho), atol=1e-7)


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_copies_match_per_group_operator(seed):
    rng = np.random.default_rng(seed)
    spec = make_groups(Dims(4, 4), 2, 1)
    copies = rng.normal(size=(spec.num_groups, 16))
    tau, rho = rng.uniform(0, 3), rng.uniform(0.5, 2)
    out = group_shrink_copies(copies, spec, tau, rho)
    for i, g in enumerate(spec.groups):
        np.testing.assert_array_equal(out[i], group_shrink_overlap(copies[i], g, tau, rho))


def test_z_step_examples():
    a1, b1, c1 = np.array([1.0, 2.0]), np.array([4.0, 0.0]), np.array([-2.0, 1.0])
    out = z_step(np.zeros(2), np.zeros(2), a1, b1, c1, 0.0, 1.3)
    np.testing.assert_allclose(out, (a1 + b1 + c1) / 3)
    one = np.ones(1)
    assert z_step(one, np.zeros(1), one, one, one, 1.0, 1.0)[0] == pytest.approx(0.5)
    with pytest.raises(ParamError):
        z_step(one, one, one, one, one, -1.0, 1.0)


def test_z_step_overlap_examples():
    zero = np.zeros(1)
    out = z_step_overlap(zero, zero, zero, zero, [np.full(1, 3.0)] * 2, 0.0, 1.0)
    assert out[0] == pytest.approx(1.5)
    rng = np.random.default_rng(0)
    g, zk, a1, b1, c1 = rng.normal(size=(5, 6))
    np.testing.assert_allclose(z_step_overlap(g, zk, a1, b1, [c1], 2.0, 0.7),
                               z_step(g, zk, a1, b1, c1, 2.0, 0.7))
    with pytest.raises(ParamError):
        z_step_overlap(g, zk, a1, b1, np.zeros((0, 6)), 1.0, 1.0)


@settings(max_examples=20, deadline=None)
@given(seeds, st.integers(1, 4))
def test_z_steps_match_quadratic_oracle(seed, copies):
    rng = np.random.default_rng(seed)
    g, zk, a1, b1 = rng.normal(size=(4, 5))
    cs = rng.normal(size=(copies, 5))
    eta_k, rho = rng.uniform(0, 5), rng.uniform(0.1, 3)
    out = z_step_overlap(g, zk, a1, b1, cs, eta_k, rho)
    np.testing.assert_allclose(out, quadratic_oracle(g, zk, [a1, b1, *cs], eta_k, rho), atol=1e-7)
