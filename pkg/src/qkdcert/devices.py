"""Toy device families, their parameters, and attack models.

Three families cover the behaviours the verification suite needs:

``iid_detector``
    Prepares a fresh uniform key each instance.  Dark counts at rate
    ``mu_dark`` corrupt the receiver's recorded key (a correctness failure
    the ideal key pair does not have), and a key-copy attack of strength
    ``p`` hands Eve the key value with that probability.  An optional
    ``mu_trojan`` bound adds to the leak probability, modelling light
    injected by the adversary and reflected back out.

``phase_coherent_source``
    Emits key states with residual phase coherence ``coherence``.  Under a
    lossy line the adversary can unambiguously discriminate the emitted
    states; the probability of a conclusive discrimination — and hence of a
    perfect key copy — equals ``coherence`` at high loss, scaling down for
    weaker attacks.  ``coherence = 1`` under high loss leaks every key bit.

``degrading_detector``
    Like ``iid_detector`` but the dark-count rate drifts upward with the
    instance index ``j``: the realized rate equals the envelope
    ``mu_dark0 + j * mu_temp * 1e-3``, staying inside the declared
    per-instance interval by construction.

Every family is memoryless: the channel of instance ``j`` does not depend on
earlier inputs beyond what the protocol explicitly wires through.  Models
declaring memory are rejected, since the sequential bound does not cover
them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, DimensionCapError, LayoutError
from .qstate import Layout, derive_rng
from .cq import CLASSICAL_DIM_CAP, ClassicalState, StochasticChannel
from .protocol import InstanceChannel, KeyLayout

__all__ = [
    "ParameterVector",
    "RobustSet",
    "AttackSpec",
    "DeviceModel",
    "FAMILIES",
    "in_robust_set",
    "leak_probability",
    "dark_rate_bounds",
    "realized_dark_rate",
    "generator_distribution",
    "instance_channel",
    "observable_names",
    "sample_cert_observable",
]


@dataclass(frozen=True)
class ParameterVector:
    """Ordered name -> value mapping with per-parameter physical bounds."""

    entries: tuple[tuple[str, float], ...]
    bounds: tuple[tuple[str, tuple[float, float]], ...] = ()

    def __init__(self, entries, bounds=None):
        ent = tuple((str(n), float(v)) for n, v in
                    (entries.items() if isinstance(entries, dict) else entries))
        names = [n for n, _ in ent]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate parameter names: {names}")
        if bounds is None:
            bnd = tuple((n, (0.0, 1.0)) for n, _ in ent)
        else:
            raw = bounds.items() if isinstance(bounds, dict) else bounds
            bnd = tuple((str(n), (float(a), float(b))) for n, (a, b) in raw)
        bmap = dict(bnd)
        for n, v in ent:
            lo, hi = bmap.get(n, (0.0, 1.0))
            if not lo <= v <= hi:
                raise ConfigError(f"parameter {n}={v} outside its bounds [{lo}, {hi}]")
        object.__setattr__(self, "entries", ent)
        object.__setattr__(self, "bounds", tuple((n, bmap.get(n, (0.0, 1.0))) for n in names))

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.entries)

    def get(self, name: str, default: float | None = None) -> float:
        for n, v in self.entries:
            if n == name:
                return v
        if default is not None:
            return default
        raise KeyError(name)

    def bound(self, name: str) -> tuple[float, float]:
        for n, b in self.bounds:
            if n == name:
                return b
        raise KeyError(name)

    def has(self, name: str) -> bool:
        return name in self.names


@dataclass(frozen=True)
class RobustSet:
    """Componentwise closed intervals the certified parameters must lie in."""

    intervals: tuple[tuple[str, tuple[float, float]], ...]

    def __init__(self, intervals):
        raw = intervals.items() if isinstance(intervals, dict) else intervals
        ivs = tuple((str(n), (float(a), float(b))) for n, (a, b) in raw)
        for n, (a, b) in ivs:
            if a > b:
                raise ConfigError(f"robust interval for {n} is empty: [{a}, {b}]")
        object.__setattr__(self, "intervals", ivs)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.intervals)

    def interval(self, name: str) -> tuple[float, float]:
        for n, iv in self.intervals:
            if n == name:
                return iv
        raise KeyError(name)


def in_robust_set(params: ParameterVector, robust: RobustSet) -> bool:
    """Componentwise closed-interval membership; boundary points belong."""
    for name, (lo, hi) in robust.intervals:
        v = params.get(name)
        if not lo <= v <= hi:
            return False
    return True


@dataclass(frozen=True)
class AttackSpec:
    """Adversarial behaviour applied identically to every instance.

    ``kind`` is one of ``"none"``, ``"key_copy"`` (Eve receives the key with
    probability ``strength``), or ``"high_loss_usd"`` (Eve replaces the lossy
    line and unambiguously discriminates source states; conclusive whenever
    the source's coherence allows).
    """

    kind: str = "none"
    strength: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "key_copy", "high_loss_usd"):
            raise ConfigError(f"unknown attack kind {self.kind!r}")
        if not 0.0 <= self.strength <= 1.0:
            raise ConfigError("attack strength must lie in [0, 1]")
        if self.kind != "key_copy" and self.strength:
            raise ConfigError(f"attack kind {self.kind!r} takes no strength parameter")


# Family registry: required parameters and the observables certification can
# sample, each observable estimating the named parameter.
FAMILIES: dict[str, dict] = {
    "iid_detector": {
        "required": ("mu_dark",),
        "optional": ("mu_trojan",),
        "observables": {"dark_count": "mu_dark", "trojan_leak": "mu_trojan"},
    },
    "phase_coherent_source": {
        "required": ("coherence",),
        "optional": (),
        "observables": {"coherence": "coherence"},
    },
    "degrading_detector": {
        "required": ("mu_dark0", "mu_temp"),
        "optional": (),
        "observables": {"dark_count": "mu_dark0", "temperature": "mu_temp"},
    },
}


@dataclass(frozen=True)
class DeviceModel:
    """A device family with concrete parameter values."""

    family: str
    params: ParameterVector
    memoryless: bool = True

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown device family {self.family!r}")
        if not isinstance(self.params, ParameterVector):
            object.__setattr__(self, "params", ParameterVector(self.params))
        spec = FAMILIES[self.family]
        for name in spec["required"]:
            if not self.params.has(name):
                raise ConfigError(f"{self.family} requires parameter {name!r}")
        for name in self.params.names:
            if name not in spec["required"] and name not in spec["optional"]:
                raise ConfigError(f"{self.family} does not take parameter {name!r}")
        if not self.memoryless:
            raise NotImplementedError(
                "devices with memory across instances are rejected: the "
                "sequential bound verified here does not cover them"
            )


# ---------------------------------------------------------------------------
# per-instance behaviour
# ---------------------------------------------------------------------------

def leak_probability(model: DeviceModel, attack: AttackSpec) -> float:
    """Probability that Eve's register receives the key value this instance."""
    if model.family == "phase_coherent_source":
        c = model.params.get("coherence")
        if attack.kind == "high_loss_usd":
            return c
        if attack.kind == "key_copy":
            return c * attack.strength
        return 0.0
    trojan = model.params.get("mu_trojan", 0.0) if model.params.has("mu_trojan") else 0.0
    base = attack.strength if attack.kind == "key_copy" else 0.0
    return min(1.0, base + trojan)


def dark_rate_bounds(model: DeviceModel, j: int) -> tuple[float, float]:
    """Declared [low, high] envelope for the dark rate at instance ``j``."""
    if model.family == "iid_detector":
        r = model.params.get("mu_dark")
        return r, r
    if model.family == "degrading_detector":
        base = model.params.get("mu_dark0")
        upp = min(1.0, base + j * model.params.get("mu_temp") * 1e-3)
        return base, upp
    return 0.0, 0.0


def realized_dark_rate(model: DeviceModel, j: int) -> float:
    """Actual dark rate at instance ``j``; sits on the declared envelope."""
    return dark_rate_bounds(model, j)[1]


def _leak_layout(name: str, length: int) -> Layout:
    # index 0 is the inconclusive symbol, indices 1..2^length the key values
    return Layout(((name, (1 << length) + 1),))


def generator_distribution(model: DeviceModel, attack: AttackSpec, j: int,
                           key_layout: KeyLayout, length: int,
                           ka: str, kb: str, leak: str) -> ClassicalState:
    """Joint distribution of (key pair, Eve's register) freshly produced at ``j``."""
    if not 0 <= length <= key_layout.max_length:
        raise ConfigError(f"key length {length} exceeds max_length {key_layout.max_length}")
    d = key_layout.register_dim
    block = 1 << length
    p_leak = leak_probability(model, attack)
    dark = realized_dark_rate(model, j)
    leak_dim = block + 1

    probs = np.zeros((d, d, leak_dim))
    for k in range(block):
        a = key_layout.index(length, k)
        p_k = 1.0 / block
        # receiver's recorded key: correct, or re-drawn among the wrong values
        recorded = [(key_layout.index(length, k), 1.0 - dark)]
        if dark > 0.0 and block > 1:
            for w in range(block):
                if w != k:
                    recorded.append((key_layout.index(length, w), dark / (block - 1)))
        elif dark > 0.0:
            recorded = [(a, 1.0)]  # a single-value block has nothing to flip to
        for b, p_b in recorded:
            if p_leak < 1.0:
                probs[a, b, 0] += p_k * p_b * (1.0 - p_leak)
            if p_leak > 0.0:
                probs[a, b, 1 + k] += p_k * p_b * p_leak
    layout = key_layout.pair_layout(ka, kb) + _leak_layout(leak, length)
    return ClassicalState(probs.reshape(-1), layout)


def instance_channel(model: DeviceModel, attack: AttackSpec, j: int,
                     key_layout: KeyLayout, *, length: int | None = None,
                     input_layout: Layout | None = None,
                     stipulated_epsilon: float | None = None) -> InstanceChannel:
    """Channel of instance ``j``: pass the input through to Eve, add fresh keys.

    The input registers (everything the adversary already holds, plus
    whatever earlier instances forwarded) are appended verbatim to the
    output, followed by the fresh key pair ``KA{j}``/``KB{j}`` and Eve's new
    register ``L{j}``.
    """
    if length is None:
        length = key_layout.max_length
    if input_layout is None:
        input_layout = Layout((("Q0", 1),))
    ka, kb, leak = f"KA{j}", f"KB{j}", f"L{j}"
    for name in (ka, kb, leak):
        if name in input_layout.names:
            raise LayoutError(f"input layout already contains register {name!r}")
    fresh = generator_distribution(model, attack, j, key_layout, length, ka, kb, leak)
    if input_layout.dim**2 * fresh.layout.dim > CLASSICAL_DIM_CAP:
        raise DimensionCapError(
            f"instance {j} transition matrix would hold "
            f"{input_layout.dim**2 * fresh.layout.dim} entries; trim the "
            "carried registers with the inter-instance wiring"
        )
    matrix = np.kron(np.eye(input_layout.dim), fresh.probs.reshape(-1, 1))
    channel = StochasticChannel(matrix, input_layout, input_layout + fresh.layout)
    return InstanceChannel(channel, key_layout, ka=ka, kb=kb, index=j,
                           stipulated_epsilon=stipulated_epsilon)


# ---------------------------------------------------------------------------
# certification observables
# ---------------------------------------------------------------------------

def observable_names(model: DeviceModel) -> tuple[str, ...]:
    obs = FAMILIES[model.family]["observables"]
    return tuple(o for o, p in obs.items() if model.params.has(p))


def _parameter_for(model: DeviceModel, observable: str) -> str:
    obs = FAMILIES[model.family]["observables"]
    if observable not in obs or not model.params.has(obs[observable]):
        raise ConfigError(
            f"{model.family} has no observable {observable!r}; "
            f"available: {observable_names(model)}"
        )
    return obs[observable]


def sample_cert_observable(model: DeviceModel, observable: str, trials: int,
                           seed: int) -> np.ndarray:
    """Draw ``trials`` IID certification observations, deterministic in ``seed``.

    Rate-like parameters yield Bernoulli draws with the true parameter as
    mean.  The ``temperature`` observable of the degrading detector is a
    bounded symmetric two-point distribution around the true value, for use
    with a bounded-mean estimator.
    """
    if trials < 1:
        raise ValueError("trials must be positive")
    param = _parameter_for(model, observable)
    value = model.params.get(param)
    rng = derive_rng(seed)
    if observable == "temperature":
        lo, hi = model.params.bound(param)
        width = min(0.25 * (hi - lo), value - lo, hi - value)
        signs = rng.integers(0, 2, size=trials) * 2 - 1
        return value + width * signs
    return (rng.random(trials) < value).astype(float)
