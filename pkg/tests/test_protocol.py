"""Key registers, replacement maps, per-instance security levels, guessing."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qkdcert.cq import (
    ClassicalState,
    StochasticChannel,
    apply_classical,
    marginal,
    point_mass,
    tensor_classical,
    to_density,
)
from qkdcert.devices import AttackSpec, DeviceModel, instance_channel
from qkdcert.errors import ChannelError, LayoutError, StateError
from qkdcert.protocol import (
    InstanceChannel,
    KeyLayout,
    audit_epsilon,
    eve_guessing_probability,
    exact_classical_epsilon,
    ideal_key_probs,
    ideal_key_state,
    key_replacement_channel,
    key_replacement_stochastic,
    security_difference,
    tags_agree,
)
from qkdcert.qstate import (
    DensityOperator,
    Layout,
    apply,
    basis_state,
    derive_rng,
    diamond_norm_upper_bound,
    induced_norm_lower_bound,
    partial_trace,
    tensor,
)

TOL = 1e-12


# ---------------------------------------------------------------------------
# key register layout


def test_key_layout_register_dims():
    assert KeyLayout(1).register_dim == 3
    assert KeyLayout(2).register_dim == 7
    assert KeyLayout(4).register_dim == 31


@given(st.integers(0, 5))
def test_key_layout_index_decode_round_trip(max_len):
    kl = KeyLayout(max_len)
    seen = set()
    for length in range(max_len + 1):
        for value in range(1 << length):
            idx = kl.index(length, value)
            assert kl.decode(idx) == (length, value)
            seen.add(idx)
    assert seen == set(range(kl.register_dim))


def test_key_layout_rejects_out_of_range():
    kl = KeyLayout(2)
    with pytest.raises(ValueError):
        kl.index(3, 0)
    with pytest.raises(ValueError):
        kl.index(1, 2)
    with pytest.raises(ValueError):
        kl.decode(7)


def test_ideal_key_probs_length_one():
    kl = KeyLayout(1)
    st_ = ideal_key_probs(kl, 1)
    d = kl.register_dim
    expected = np.zeros(d * d)
    expected[1 * d + 1] = 0.5
    expected[2 * d + 2] = 0.5
    assert np.allclose(st_.probs, expected, atol=TOL)
    assert tags_agree(st_, key_layout=kl)


def test_ideal_key_zero_length_is_point_mass():
    kl = KeyLayout(2)
    st_ = ideal_key_probs(kl, 0)
    assert st_.probs[0] == pytest.approx(1.0, abs=TOL)


# ---------------------------------------------------------------------------
# key replacement


def test_replacement_is_idempotent():
    kl = KeyLayout(2)
    R = key_replacement_stochastic(kl).matrix
    assert np.allclose(R @ R, R, atol=1e-12)


def test_replacement_fixes_ideal_states():
    kl = KeyLayout(2)
    repl = key_replacement_stochastic(kl)
    for length in range(kl.max_length + 1):
        ideal = ideal_key_probs(kl, length)
        out = apply_classical(repl, ideal)
        assert np.allclose(out.probs, ideal.probs, atol=TOL)


def test_replacement_dense_matches_classical():
    kl = KeyLayout(1)
    rng = derive_rng(6, "repl")
    pair = kl.pair_layout()
    probs = rng.dirichlet(np.ones(pair.dim))
    state = ClassicalState(probs, pair)
    via_classical = apply_classical(key_replacement_stochastic(kl), state)
    via_dense = apply(key_replacement_channel(kl), to_density(state))
    assert np.allclose(via_dense.probabilities(), via_classical.probs, atol=1e-9)


def test_replacement_measures_before_repreparing():
    """Side registers correlated with the key stay correlated with its length
    block only — the replaced value is fresh randomness."""
    kl = KeyLayout(1)
    d = kl.register_dim
    pair = kl.pair_layout()
    side = Layout((("E", 2),))
    # E records the key bit exactly
    probs = np.zeros((d, d, 2))
    probs[1, 1, 0] = 0.5
    probs[2, 2, 1] = 0.5
    state = ClassicalState(probs.reshape(-1), pair + side)
    out = apply_classical(key_replacement_stochastic(kl), state)
    table = out.probs.reshape(d, d, 2) if out.layout.names == ("KA", "KB", "E") else None
    assert table is not None
    # every (diagonal pair, E) cell now has weight 1/4: E no longer predicts KA
    for e in range(2):
        for idx in (1, 2):
            assert table[idx, idx, e] == pytest.approx(0.25, abs=TOL)
    joint = marginal(out, ("KA", "E"))
    t = joint.probs.reshape(d, 2)
    assert np.allclose(t[1:, :], 0.25, atol=TOL)


def test_tags_agree_detects_mismatched_lengths():
    kl = KeyLayout(1)
    d = kl.register_dim
    bad = np.zeros(d * d)
    bad[kl.index(1, 0) * d + kl.index(0, 0)] = 1.0
    assert not tags_agree(ClassicalState(bad, kl.pair_layout()), key_layout=kl)


# ---------------------------------------------------------------------------
# instance channels and their security levels


def iid_instance(mu_dark, attack=AttackSpec(), length=1, j=1, kl=None):
    model = DeviceModel("iid_detector", {"mu_dark": mu_dark})
    return instance_channel(model, attack, j, kl or KeyLayout(1), length=length)


def test_instance_channel_requires_key_registers():
    kl = KeyLayout(1)
    lay = Layout((("X", 2),))
    chan = StochasticChannel(np.eye(2), lay, lay)
    with pytest.raises(ChannelError):
        InstanceChannel(chan, kl)


def test_instance_channel_output_names():
    inst = iid_instance(0.0, j=3)
    out = inst.channel.output_layout.names
    assert out == ("Q0", "KA3", "KB3", "L3")
    assert inst.is_classical


def test_exact_epsilon_dark_only():
    # with no leakage the only deviation from ideal is the dark-count flip,
    # and the total variation works out to exactly mu_dark
    for mu in (0.0, 0.05, 0.3):
        inst = iid_instance(mu)
        assert exact_classical_epsilon(inst) == pytest.approx(mu, abs=1e-12)


def test_exact_epsilon_coherent_leak():
    # a conclusive unambiguous discrimination leaks the key with the source's
    # coherence; the replaced key is uniform, so the distance is c(1 - 2^-l)
    for c in (0.2, 0.7):
        for length in (1, 2):
            model = DeviceModel("phase_coherent_source", {"coherence": c})
            inst = instance_channel(
                model, AttackSpec("high_loss_usd"), 1, KeyLayout(length),
                length=length,
            )
            expected = c * (1.0 - 2.0 ** -length)
            assert exact_classical_epsilon(inst) == pytest.approx(expected, abs=1e-12)


def test_exact_epsilon_combined_dark_and_copy():
    inst = iid_instance(0.05, AttackSpec("key_copy", 0.4))
    # frozen from a hand computation over the 4 x 4 outcome table
    assert exact_classical_epsilon(inst) == pytest.approx(0.23, abs=1e-12)


def test_audit_brackets_exact_value():
    inst = iid_instance(0.1, AttackSpec("key_copy", 0.3))
    exact = exact_classical_epsilon(inst)
    lower, upper = audit_epsilon(inst, samples=200, seed=3, dim_cap=4096)
    assert lower <= exact + 1e-9
    assert exact <= upper + 1e-6


def test_security_difference_zero_for_ideal_instance():
    inst = iid_instance(0.0)
    assert exact_classical_epsilon(inst) == pytest.approx(0.0, abs=1e-12)
    delta = security_difference(inst)
    lower = induced_norm_lower_bound(delta, samples=50, seed=0)
    assert lower <= 1e-9


# ---------------------------------------------------------------------------
# guessing probability


def test_guessing_ideal_key_is_blind():
    kl = KeyLayout(2)
    st_ = ideal_key_probs(kl, 2)
    # Eve holds nothing (KB is the partner register, excluded by default)
    assert eve_guessing_probability(st_, key="KA") == pytest.approx(0.25, abs=TOL)


def test_guessing_perfect_copy():
    kl = KeyLayout(1)
    d = kl.register_dim
    probs = np.zeros((d, d, 2))
    probs[1, 1, 0] = 0.5
    probs[2, 2, 1] = 0.5
    state = ClassicalState(probs.reshape(-1), kl.pair_layout() + Layout((("L1", 2),)))
    assert eve_guessing_probability(state, key="KA") == pytest.approx(1.0, abs=TOL)


def test_guessing_noisy_copy_is_maximum_likelihood():
    # key bit through a binary symmetric channel with flip 0.1 -> guess 0.9
    lay = Layout((("KA", 2), ("E", 2)))
    p = np.array([0.45, 0.05, 0.05, 0.45])
    assert eve_guessing_probability(
        ClassicalState(p, lay), key="KA"
    ) == pytest.approx(0.9, abs=TOL)


def test_guessing_quantum_binary_helstrom():
    # |0> vs |+> at Eve: optimal guess (1 + sin(pi/4)) / 2... in trace-norm
    # form p = 1/2 (1 + T(rho0, rho1)) with T = sqrt(1 - |<0|+>|^2)
    ket0 = np.array([1.0, 0.0])
    ketp = np.array([1.0, 1.0]) / np.sqrt(2)
    blocks = np.zeros((2, 2, 2, 2), dtype=complex)
    blocks[0, :, 0, :] = 0.5 * np.outer(ket0, ket0)
    blocks[1, :, 1, :] = 0.5 * np.outer(ketp, ketp)
    rho = DensityOperator(
        blocks.reshape(4, 4), Layout((("KA", 2), ("E", 2)))
    )
    expected = 0.5 * (1.0 + np.sqrt(1.0 - 0.5))
    assert eve_guessing_probability(rho, key="KA") == pytest.approx(expected, abs=1e-9)


def test_guessing_three_orthogonal_states_solved_exactly():
    # three orthogonal pure states at Eve are perfectly distinguishable; the
    # measurement program must find the value 1
    blocks = np.zeros((3, 3, 3, 3), dtype=complex)
    u = np.linalg.qr(derive_rng(8, "orth").normal(size=(3, 3)))[0]
    for k in range(3):
        blocks[k, :, k, :] = np.outer(u[:, k], u[:, k].conj()) / 3.0
    rho = DensityOperator(blocks.reshape(9, 9), Layout((("KA", 3), ("E", 3))))
    assert eve_guessing_probability(rho, key="KA") == pytest.approx(1.0, abs=1e-6)


def test_guessing_rejects_coherent_key_register():
    plus = np.full((2, 2), 0.5, dtype=complex)
    rho = DensityOperator(np.kron(plus, np.eye(2) / 2), Layout((("KA", 2), ("E", 2))))
    with pytest.raises(StateError):
        eve_guessing_probability(rho, key="KA")


def test_guessing_key_cannot_be_eve():
    kl = KeyLayout(1)
    st_ = ideal_key_probs(kl, 1)
    with pytest.raises(LayoutError):
        eve_guessing_probability(st_, key="KA", eve=("KA", "KB"))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_guessing_never_below_blind_rate(seed):
    rng = derive_rng(seed, "guess")
    lay = Layout((("KA", 2), ("E", 3)))
    probs = rng.dirichlet(np.ones(lay.dim))
    state = ClassicalState(probs, lay)
    p_key = marginal(state, ("KA",)).probs
    guess = eve_guessing_probability(state, key="KA")
    assert guess >= max(p_key) - 1e-12
    assert guess <= 1.0 + 1e-12
