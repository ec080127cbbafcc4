"""Device families, attacks, and certification observables."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qkdcert.cq import marginal
from qkdcert.devices import (
    FAMILIES,
    AttackSpec,
    DeviceModel,
    ParameterVector,
    RobustSet,
    dark_rate_bounds,
    generator_distribution,
    in_robust_set,
    instance_channel,
    leak_probability,
    observable_names,
    realized_dark_rate,
    sample_cert_observable,
)
from qkdcert.errors import ConfigError, DimensionCapError, LayoutError
from qkdcert.protocol import KeyLayout, tags_agree
from qkdcert.qstate import Layout

TOL = 1e-12


# ---------------------------------------------------------------------------
# parameter plumbing


def test_parameter_vector_lookup_and_bounds():
    pv = ParameterVector({"mu": 0.25}, bounds={"mu": (0.0, 0.5)})
    assert pv.get("mu") == 0.25
    assert pv.get("other", 0.7) == 0.7
    assert pv.bound("mu") == (0.0, 0.5)
    assert pv.has("mu") and not pv.has("other")
    with pytest.raises(KeyError):
        pv.get("other")


def test_parameter_vector_validation():
    with pytest.raises(ConfigError):
        ParameterVector([("a", 0.1), ("a", 0.2)])
    with pytest.raises(ConfigError):
        ParameterVector({"a": 1.5})  # default bounds are [0, 1]
    with pytest.raises(ConfigError):
        ParameterVector({"a": 0.3}, bounds={"a": (0.5, 1.0)})


def test_robust_set_membership_includes_boundary():
    robust = RobustSet({"mu": (0.0, 0.05)})
    assert in_robust_set(ParameterVector({"mu": 0.05}), robust)
    assert in_robust_set(ParameterVector({"mu": 0.0}), robust)
    assert not in_robust_set(ParameterVector({"mu": 0.0500001}), robust)
    with pytest.raises(ConfigError):
        RobustSet({"mu": (0.3, 0.1)})


def test_attack_spec_validation():
    with pytest.raises(ConfigError):
        AttackSpec("bribe_the_vendor")
    with pytest.raises(ConfigError):
        AttackSpec("key_copy", 1.5)
    with pytest.raises(ConfigError):
        AttackSpec("high_loss_usd", 0.2)  # takes no strength
    AttackSpec("high_loss_usd")
    AttackSpec("key_copy", 0.5)


def test_device_model_validation():
    with pytest.raises(ConfigError):
        DeviceModel("teleporter", {"x": 0.1})
    with pytest.raises(ConfigError):
        DeviceModel("iid_detector", {})  # mu_dark required
    with pytest.raises(ConfigError):
        DeviceModel("iid_detector", {"mu_dark": 0.1, "coherence": 0.5})
    with pytest.raises(NotImplementedError):
        DeviceModel("iid_detector", {"mu_dark": 0.1}, memoryless=False)
    model = DeviceModel("iid_detector", {"mu_dark": 0.1})
    assert isinstance(model.params, ParameterVector)


# ---------------------------------------------------------------------------
# per-instance physics


def test_leak_probability_cases():
    src = DeviceModel("phase_coherent_source", {"coherence": 0.4})
    assert leak_probability(src, AttackSpec("high_loss_usd")) == pytest.approx(0.4)
    assert leak_probability(src, AttackSpec("key_copy", 0.5)) == pytest.approx(0.2)
    assert leak_probability(src, AttackSpec()) == 0.0

    det = DeviceModel("iid_detector", {"mu_dark": 0.01, "mu_trojan": 0.03})
    assert leak_probability(det, AttackSpec()) == pytest.approx(0.03)
    assert leak_probability(det, AttackSpec("key_copy", 0.2)) == pytest.approx(0.23)
    assert leak_probability(det, AttackSpec("key_copy", 1.0)) == 1.0  # clipped


def test_dark_rate_envelope_degrading():
    model = DeviceModel("degrading_detector", {"mu_dark0": 0.01, "mu_temp": 1.0})
    lo, hi = dark_rate_bounds(model, 3)
    assert lo == pytest.approx(0.01, abs=TOL)
    assert hi == pytest.approx(0.013, abs=TOL)
    assert realized_dark_rate(model, 3) == pytest.approx(0.013, abs=TOL)
    # iid devices do not drift
    iid = DeviceModel("iid_detector", {"mu_dark": 0.02})
    assert dark_rate_bounds(iid, 50) == (0.02, 0.02)


def test_generator_distribution_is_normalized_and_tagged():
    model = DeviceModel("iid_detector", {"mu_dark": 0.05, "mu_trojan": 0.1})
    kl = KeyLayout(2)
    st_ = generator_distribution(model, AttackSpec(), 1, kl, 2, "KA1", "KB1", "L1")
    assert st_.probs.sum() == pytest.approx(1.0, abs=TOL)
    assert tags_agree(st_, ka="KA1", kb="KB1", key_layout=kl)
    # sender's key marginal is uniform on the realized block
    ka = marginal(st_, ("KA1",)).probs
    block = [kl.index(2, v) for v in range(4)]
    assert np.allclose(ka[block], 0.25, atol=TOL)
    # leak register carries the key exactly mu_trojan of the time
    leak = marginal(st_, ("L1",)).probs
    assert leak[0] == pytest.approx(0.9, abs=TOL)
    assert leak[1:].sum() == pytest.approx(0.1, abs=TOL)


def test_generator_distribution_dark_counts_flip_receiver():
    model = DeviceModel("iid_detector", {"mu_dark": 0.2})
    kl = KeyLayout(1)
    st_ = generator_distribution(model, AttackSpec(), 1, kl, 1, "KA", "KB", "L")
    d = kl.register_dim
    table = st_.probs.reshape(d, d, 3)
    # agreement (1 - dark) / 2 per value, disagreement dark / 2
    assert table[1, 1, 0] == pytest.approx(0.4, abs=TOL)
    assert table[1, 2, 0] == pytest.approx(0.1, abs=TOL)
    assert table[2, 1, 0] == pytest.approx(0.1, abs=TOL)


def test_generator_rejects_overlong_keys():
    model = DeviceModel("iid_detector", {"mu_dark": 0.0})
    with pytest.raises(ConfigError):
        generator_distribution(model, AttackSpec(), 1, KeyLayout(1), 2, "KA", "KB", "L")


def test_instance_channel_appends_fresh_registers():
    model = DeviceModel("iid_detector", {"mu_dark": 0.0})
    kl = KeyLayout(1)
    carried = Layout((("Q0", 2), ("L1", 3)))
    inst = instance_channel(model, AttackSpec(), 2, kl, input_layout=carried)
    assert inst.channel.output_layout.names == ("Q0", "L1", "KA2", "KB2", "L2")
    # the carried registers pass through unchanged
    P = inst.channel.matrix
    fresh_dim = kl.register_dim**2 * 3
    for col in range(carried.dim):
        block = P[:, col].reshape(carried.dim, fresh_dim)
        assert block[col].sum() == pytest.approx(1.0, abs=TOL)
        assert np.all(block[np.arange(carried.dim) != col] == 0.0)


def test_instance_channel_rejects_name_collisions():
    model = DeviceModel("iid_detector", {"mu_dark": 0.0})
    with pytest.raises(LayoutError):
        instance_channel(model, AttackSpec(), 1, KeyLayout(1),
                         input_layout=Layout((("KA1", 3),)))


def test_instance_channel_matrix_size_guard():
    model = DeviceModel("iid_detector", {"mu_dark": 0.0})
    big = Layout((("Q0", 40),))  # 40^2 * 16337 entries > 2^21
    with pytest.raises(DimensionCapError):
        instance_channel(model, AttackSpec(), 1, KeyLayout(4), input_layout=big)


# ---------------------------------------------------------------------------
# certification observables


def test_observable_names_follow_declared_params():
    full = DeviceModel("iid_detector", {"mu_dark": 0.1, "mu_trojan": 0.05})
    assert set(observable_names(full)) == {"dark_count", "trojan_leak"}
    bare = DeviceModel("iid_detector", {"mu_dark": 0.1})
    assert observable_names(bare) == ("dark_count",)


def test_sample_cert_observable_deterministic():
    model = DeviceModel("iid_detector", {"mu_dark": 0.3})
    a = sample_cert_observable(model, "dark_count", 500, seed=4)
    b = sample_cert_observable(model, "dark_count", 500, seed=4)
    c = sample_cert_observable(model, "dark_count", 500, seed=5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert set(np.unique(a)) <= {0.0, 1.0}


def test_sample_cert_observable_mean_within_three_sigma():
    model = DeviceModel("iid_detector", {"mu_dark": 0.25})
    n = 20_000
    draws = sample_cert_observable(model, "dark_count", n, seed=12)
    sigma = np.sqrt(0.25 * 0.75 / n)
    assert abs(draws.mean() - 0.25) <= 3 * sigma


def test_sample_cert_observable_temperature_is_bounded_symmetric():
    model = DeviceModel("degrading_detector", {"mu_dark0": 0.01, "mu_temp": 0.6})
    draws = sample_cert_observable(model, "temperature", 4000, seed=9)
    values = set(np.round(np.unique(draws), 12))
    assert len(values) == 2
    assert np.mean(sorted(values)) == pytest.approx(0.6, abs=1e-12)
    assert np.all((draws >= 0.0) & (draws <= 1.0))


def test_sample_cert_observable_rejects_unknown():
    model = DeviceModel("iid_detector", {"mu_dark": 0.1})
    with pytest.raises(ConfigError):
        sample_cert_observable(model, "coherence", 10, seed=0)
    with pytest.raises(ValueError):
        sample_cert_observable(model, "dark_count", 0, seed=0)


@settings(max_examples=40, deadline=None)
@given(
    st.sampled_from(sorted(FAMILIES)),
    st.floats(0.01, 0.99, allow_nan=False),
)
def test_every_family_produces_valid_distributions(family, value):
    params = {name: value for name in FAMILIES[family]["required"]}
    model = DeviceModel(family, params)
    st_ = generator_distribution(model, AttackSpec(), 2, KeyLayout(1), 1,
                                 "KA2", "KB2", "L2")
    assert st_.probs.sum() == pytest.approx(1.0, abs=1e-9)
    assert tags_agree(st_, ka="KA2", kb="KB2")
