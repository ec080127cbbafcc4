"""Exact classical probability-vector engine."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qkdcert.cq import (
    ClassicalState,
    StochasticChannel,
    apply_classical,
    compose_stochastic,
    constant_stochastic,
    from_density,
    identity_stochastic,
    marginal,
    permute_classical,
    point_mass,
    tensor_classical,
    to_density,
    tv_distance,
)
from qkdcert.errors import ChannelError, DimensionCapError, LayoutError, StateError
from qkdcert.qstate import Layout, apply, derive_rng, trace_distance

TOL = 1e-12


def random_dist(rng, layout):
    p = rng.dirichlet(np.ones(layout.dim))
    return ClassicalState(p, layout)


def random_stochastic(rng, in_layout, out_layout):
    P = rng.dirichlet(np.ones(out_layout.dim), size=in_layout.dim).T
    return StochasticChannel(P, in_layout, out_layout)


def test_state_validation():
    lay = Layout((("X", 3),))
    with pytest.raises(StateError):
        ClassicalState([0.5, 0.5], lay)
    with pytest.raises(StateError):
        ClassicalState([0.7, 0.7, -0.4], lay)
    with pytest.raises(StateError):
        ClassicalState([0.2, 0.2, 0.2], lay)


def test_channel_validation():
    lay = Layout((("X", 2),))
    with pytest.raises(ChannelError):
        StochasticChannel(np.array([[0.5, 0.0], [0.4, 1.0]]), lay, lay)
    with pytest.raises(ChannelError):
        StochasticChannel(np.array([[1.2, 0.0], [-0.2, 1.0]]), lay, lay)
    with pytest.raises(ChannelError):
        StochasticChannel(np.eye(3), lay, lay)


def test_tv_distance_oracle():
    lay = Layout((("X", 2),))
    a = ClassicalState([1.0, 0.0], lay)
    b = ClassicalState([0.25, 0.75], lay)
    assert tv_distance(a, b) == pytest.approx(0.75, abs=TOL)
    with pytest.raises(LayoutError):
        tv_distance(a, ClassicalState([1.0, 0.0], Layout((("Y", 2),))))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_tv_matches_trace_distance_of_diagonal_embedding(seed):
    rng = derive_rng(seed, "tv-embed")
    lay = Layout((("X", 5),))
    a, b = random_dist(rng, lay), random_dist(rng, lay)
    assert tv_distance(a, b) == pytest.approx(
        trace_distance(to_density(a), to_density(b)), abs=1e-9
    )


def test_permute_and_marginal():
    rng = derive_rng(2, "perm")
    lay = Layout((("A", 2), ("B", 3)))
    st_ab = random_dist(rng, lay)
    st_ba = permute_classical(st_ab, ("B", "A"))
    assert st_ba.layout.names == ("B", "A")
    back = permute_classical(st_ba, ("A", "B"))
    assert np.allclose(back.probs, st_ab.probs, atol=TOL)

    a = random_dist(rng, Layout((("A", 2),)))
    b = random_dist(rng, Layout((("B", 3),)))
    joint = tensor_classical(a, b)
    assert np.allclose(marginal(joint, ("A",)).probs, a.probs, atol=TOL)
    assert np.allclose(marginal(joint, ("B",)).probs, b.probs, atol=TOL)


def test_apply_pads_identity_on_rest():
    lay = Layout((("A", 2), ("B", 2)))
    state = point_mass(lay, 0)
    flip = StochasticChannel(
        np.array([[0.0, 1.0], [1.0, 0.0]]), Layout((("B", 2),)), Layout((("B", 2),))
    )
    out = apply_classical(flip, state)
    # B leads the output layout, flipped to 1; A stays 0
    assert out.layout.names == ("B", "A")
    assert out.probs[2] == pytest.approx(1.0, abs=TOL)


def test_apply_dim_cap():
    lay = Layout((("A", 1024), ("B", 4096),))
    state = point_mass(lay, 0)
    with pytest.raises(DimensionCapError):
        apply_classical(identity_stochastic(Layout((("A", 1024),))), state,
                        dim_cap=2**21)


def test_compose_matches_sequential():
    rng = derive_rng(3, "compose")
    lay = Layout((("X", 4),))
    f = random_stochastic(rng, lay, lay)
    g = random_stochastic(rng, lay, lay)
    state = random_dist(rng, lay)
    chained = apply_classical(compose_stochastic(f, g), state)
    stepped = apply_classical(g, apply_classical(f, state))
    assert np.allclose(chained.probs, stepped.probs, atol=TOL)


def test_constant_stochastic_forgets_input():
    rng = derive_rng(4, "const")
    out = random_dist(rng, Layout((("Y", 3),)))
    chan = constant_stochastic(out, Layout((("X", 2),)))
    for idx in range(2):
        res = apply_classical(chan, point_mass(Layout((("X", 2),)), idx))
        assert np.allclose(res.probs, out.probs, atol=TOL)


def test_density_round_trip_and_classicality_guard():
    rng = derive_rng(5, "dens")
    lay = Layout((("X", 4),))
    state = random_dist(rng, lay)
    assert np.allclose(from_density(to_density(state)).probs, state.probs, atol=TOL)

    coherent = np.array([[0.5, 0.5], [0.5, 0.5]], dtype=complex)
    from qkdcert.qstate import DensityOperator

    with pytest.raises(StateError):
        from_density(DensityOperator(coherent, Layout((("X", 2),))))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_classical_apply_agrees_with_dense_engine(seed):
    """The two engines compute the same evolution on classical inputs."""
    rng = derive_rng(seed, "xengine")
    lay = Layout((("A", 2), ("B", 3)))
    state = random_dist(rng, lay)
    chan = random_stochastic(rng, Layout((("B", 3),)), Layout((("C", 2),)))
    classical = apply_classical(chan, state)
    dense = apply(chan.to_kraus(), to_density(state))
    assert dense.layout.names == classical.layout.names
    assert np.allclose(dense.probabilities(), classical.probs, atol=1e-9)
    assert dense.is_classical()


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_stochastic_maps_contract_tv(seed):
    rng = derive_rng(seed, "contract")
    lay = Layout((("X", 4),))
    a, b = random_dist(rng, lay), random_dist(rng, lay)
    chan = random_stochastic(rng, lay, Layout((("Y", 3),)))
    moved = tv_distance(apply_classical(chan, a), apply_classical(chan, b))
    assert moved <= tv_distance(a, b) + 1e-12
