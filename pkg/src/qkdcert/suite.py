"""Randomized verification battery over generated deployment scenarios.

``run_suite`` generates a seeded population of scenarios — families, attacks,
instance counts, wiring, inside/outside-robust parameter draws, classical and
quantum engines — verifies the security bound on each, re-verifies every
named fixture, checks the tightness counterexamples, audits the proof-step
inequalities, and brackets a set of reference channel differences between
the sampled lower bound and the solver upper bound.  Everything is derived
from the master seed, so two runs with the same seed produce identical
results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConsistencyError, QkdcertError
from .qstate import (
    DensityOperator,
    KrausChannel,
    Layout,
    ChannelDifference,
    derive_rng,
    diamond_norm_upper_bound,
    induced_norm_lower_bound,
    random_channel,
    random_density,
)
from .protocol import (
    KeyLayout,
    audit_epsilon,
    exact_classical_epsilon,
    security_difference,
)
from .devices import AttackSpec, DeviceModel, RobustSet, instance_channel
from .certify import CertificationPlan, ParameterPlan, approval_probability
from .compose import (
    AdaptiveScenario,
    InterInstanceSpec,
    ProtocolChoice,
    Scenario,
    TableRule,
    build_counterexample,
    proof_step_audit,
    verify_adaptive_bound,
    verify_main_bound,
)
from .fixtures import FIXTURES, fixture

__all__ = [
    "SIZES",
    "SCENARIO_COLUMNS",
    "SuiteResult",
    "generate_scenario",
    "generate_adaptive",
    "run_suite",
]

SIZES = {
    "tiny": {
        "scenarios": 20,
        "adaptive": 5,
        "metric_trials": 100,
        "telescoping_trials": 10,
    },
    "default": {
        "scenarios": 100,
        "adaptive": 20,
        "metric_trials": 1000,
        "telescoping_trials": 100,
    },
    "large": {
        "scenarios": 250,
        "adaptive": 30,
        "metric_trials": 2000,
        "telescoping_trials": 200,
    },
}

SCENARIO_COLUMNS = (
    "name",
    "family",
    "attack",
    "engine",
    "n_instances",
    "mu_in_robust_set",
    "epsilon_mode",
    "pr_accept",
    "weighted_distance",
    "eps_total_sum",
    "eps_total_max",
    "holds_sum",
    "holds_max",
)

_ROBUST = {
    "iid_detector": {"mu_dark": (0.0, 0.05), "mu_trojan": (0.0, 0.04)},
    "phase_coherent_source": {"coherence": (0.0, 0.5)},
    "degrading_detector": {"mu_dark0": (0.0, 0.05), "mu_temp": (0.0, 0.8)},
}

_OBSERVABLE = {
    "mu_dark": "dark_count",
    "mu_trojan": "trojan_leak",
    "coherence": "coherence",
    "mu_dark0": "dark_count",
    "mu_temp": "temperature",
}


def _draw_params(family: str, inside: bool, rng: np.random.Generator) -> dict:
    robust = _ROBUST[family]
    params = {}
    for name, (low, high) in robust.items():
        params[name] = low + (high - low) * rng.uniform(0.05, 0.9)
    if family == "iid_detector" and rng.random() < 0.5:
        params.pop("mu_trojan")
    if not inside:
        candidates = [n for n in params if _ROBUST[family][n][1] < 1.0]
        name = candidates[int(rng.integers(len(candidates)))]
        low, high = _ROBUST[family][name]
        params[name] = min(1.0, high + (1.0 - high) * rng.uniform(0.2, 0.9))
    return params


def _draw_attack(family: str, rng: np.random.Generator) -> AttackSpec:
    roll = rng.random()
    if roll < 0.4:
        return AttackSpec("none")
    if roll < 0.8 or family != "phase_coherent_source":
        return AttackSpec("key_copy", float(rng.uniform(0.05, 1.0)))
    return AttackSpec("high_loss_usd")


def _probe_epsilon(
    model: DeviceModel, attack: AttackSpec, j: int, kl: KeyLayout, length: int
) -> float:
    """Exact per-instance deviation, independent of the carried input registers."""
    probe = instance_channel(model, attack, j, kl, length=length)
    return exact_classical_epsilon(probe)


def _draw_plan(
    model: DeviceModel, robust: RobustSet, rng: np.random.Generator
) -> CertificationPlan:
    entries = []
    for name in robust.names:
        bernoulli = _OBSERVABLE[name] != "temperature"
        entries.append(
            (
                name,
                ParameterPlan(
                    _OBSERVABLE[name],
                    int(rng.integers(200, 2001)),
                    float(rng.uniform(0.01, 0.1)),
                    estimator="clopper_pearson" if bernoulli else "hoeffding",
                    side="upper" if bernoulli else "two",
                ),
            )
        )
    return CertificationPlan(entries)


def generate_scenario(seed: int, index: int) -> Scenario:
    """Deterministic random scenario number ``index`` for the master ``seed``."""
    rng = derive_rng(seed, "scenario", index)
    family = ("iid_detector", "phase_coherent_source", "degrading_detector")[
        int(rng.integers(3))
    ]
    inside = rng.random() < 0.6
    params = _draw_params(family, inside, rng)
    model = DeviceModel(family, params)
    robust = RobustSet({n: _ROBUST[family][n] for n in params})
    attack = _draw_attack(family, rng)
    quantum = rng.random() < 0.25
    # A carried qubit plus one fresh length-1 block is 54 dimensions, right
    # under the dense cap; longer keys only fit the classical engine.
    max_len = 1 if quantum else int(rng.integers(1, 3))
    kl = KeyLayout(max_len)
    n = int(rng.integers(1, 4 if quantum else 6))
    lengths = tuple(int(rng.integers(1, max_len + 1)) for _ in range(n))
    eps_cert = float(rng.uniform(0.01, 0.1))
    mode = "audited" if rng.random() < 0.3 else "stipulated"
    stipulated = None
    if mode == "stipulated":
        eps_list = []
        for j, length in enumerate(lengths, start=1):
            exact = _probe_epsilon(model, attack, j, kl, length)
            eps_list.append(min(1.0, exact + float(rng.uniform(0.005, 0.05))))
        stipulated = tuple(eps_list)
    initial = None
    wiring = []
    carried = 1
    if quantum:
        rho = random_density(2, derive_rng(seed, "scenario", index, "init"))
        initial = DensityOperator(rho.matrix, Layout((("Q0", 2),)))
        carried = 2
        for _ in range(n - 1):
            if rng.random() < 0.5:
                wiring.append(
                    InterInstanceSpec(
                        "unitary_eve",
                        theta=float(rng.uniform(0.1, math.pi)),
                        target="Q0",
                        keep=("Q0",),
                    )
                )
            else:
                wiring.append(
                    InterInstanceSpec(
                        "depolarize_eve",
                        mix=float(rng.uniform(0.0, 1.0)),
                        target="Q0",
                        keep=("Q0",),
                    )
                )
    else:
        # Largest carried input dimension such that the next instance's
        # transition matrix (carried^2 * fresh entries) stays materializable.
        pair = kl.register_dim**2
        fresh_max = pair * (2**max_len + 1)
        carried_cap = max(1, int((2.0**21 / fresh_max) ** 0.5))
        for j, length in enumerate(lengths[:-1], start=1):
            leak = 2**length + 1
            kind = ("discard_keys", "keep_only_leak", "otp")[int(rng.integers(3))]
            nxt = {
                "discard_keys": carried * leak,
                "keep_only_leak": leak,
                "otp": carried * pair * leak * 2**length,
            }[kind]
            if nxt > carried_cap:
                kind, nxt = "keep_only_leak", leak
            spec = (
                InterInstanceSpec("otp", message=int(rng.integers(2**length)))
                if kind == "otp"
                else InterInstanceSpec(kind)
            )
            wiring.append(spec)
            carried = nxt
    accept = None
    plan = None
    if inside:
        if rng.random() < 0.5:
            accept = float(rng.uniform(0.8, 1.0))
        else:
            plan = _draw_plan(model, robust, rng)
    else:
        plan = _draw_plan(model, robust, rng) if rng.random() < 0.5 else None
        if plan is not None and approval_probability(model, robust, plan) > eps_cert:
            plan = None
        if plan is None:
            accept = eps_cert * float(rng.uniform(0.2, 1.0))
    return Scenario(
        name=f"gen_{seed}_{index}",
        model=model,
        attack=attack,
        key_layout=kl,
        key_lengths=lengths,
        robust=robust,
        eps_cert=eps_cert,
        epsilon_mode=mode,
        stipulated_eps=stipulated,
        inter_instance=tuple(wiring),
        accept_probability=accept,
        cert_plan=plan,
        initial=initial,
    )


def generate_adaptive(seed: int, index: int) -> AdaptiveScenario:
    """Deterministic random adaptive scenario for the master ``seed``."""
    rng = derive_rng(seed, "adaptive", index)
    if rng.random() < 0.5:
        family = "iid_detector"
        params = {"mu_dark": float(rng.uniform(0.0, 0.1))}
    else:
        family = "degrading_detector"
        params = {
            "mu_dark0": float(rng.uniform(0.0, 0.1)),
            "mu_temp": float(rng.uniform(0.0, 0.5)),
        }
    model = DeviceModel(family, params)
    attack = (
        AttackSpec("none")
        if rng.random() < 0.5
        else AttackSpec("key_copy", float(rng.uniform(0.05, 0.6)))
    )
    kl = KeyLayout(1)
    entries = []
    eps_sum = 0.0
    for name in params:
        eps_k = float(rng.uniform(0.01, 0.02))
        eps_sum += eps_k
        estimator = "clopper_pearson"
        side = "two"
        if name == "mu_temp":
            estimator = "hoeffding"
        entries.append(
            (name, ParameterPlan(_OBSERVABLE[name], int(rng.integers(15, 31)), eps_k,
                                 estimator=estimator, side=side))
        )
    plan = CertificationPlan(entries)
    eps_cert = max(0.03, 1.5 * eps_sum)
    gate_param = entries[0][0]
    threshold = float(rng.uniform(0.15, 0.35))
    eps1 = min(1.0, _probe_epsilon(model, attack, 1, kl, 1) + float(rng.uniform(0.01, 0.05)))
    eps2 = min(1.0, _probe_epsilon(model, attack, 2, kl, 1) + float(rng.uniform(0.01, 0.05)))
    table = (
        TableRule(
            ("upper_at_most", gate_param, threshold),
            ProtocolChoice(
                "long", (1, 1), (eps1, eps2), (InterInstanceSpec("keep_only_leak"),)
            ),
        ),
        TableRule(
            ("upper_at_most", gate_param, min(1.0, threshold * 2.5)),
            ProtocolChoice("short", (1,), (eps1,)),
        ),
        TableRule(("always",), ProtocolChoice("reject")),
    )
    return AdaptiveScenario(
        name=f"adaptive_{seed}_{index}",
        model=model,
        attack=attack,
        key_layout=kl,
        plan=plan,
        eps_cert=eps_cert,
        table=table,
    )


# ---------------------------------------------------------------------------
# reference channels for the dual-route bracket


def _bracket_cases(seed: int) -> list[tuple[str, ChannelDifference, float | None]]:
    """Channel differences whose deviation gets bracketed both ways.

    Each case is (label, difference, known exact value or None).  The two
    single-qubit unitary pairs have closed-form diamond distances.
    """
    cases: list[tuple[str, ChannelDifference, float | None]] = []
    q = Layout((("Q", 2),))
    ident = KrausChannel([np.eye(2, dtype=complex)], q, q)
    flip = KrausChannel([np.array([[0, 1], [1, 0]], dtype=complex)], q, q)
    cases.append(("id_vs_bitflip", ChannelDifference(ident, flip), 1.0))
    phase = KrausChannel([np.diag([1.0, np.exp(1j * math.pi / 2)])], q, q)
    cases.append(
        ("id_vs_quarter_phase", ChannelDifference(ident, phase), math.sin(math.pi / 4))
    )
    rng = derive_rng(seed, "bracket")
    a = random_channel(2, 6, kraus_count=2, rng=rng)
    b = random_channel(2, 6, kraus_count=2, rng=rng)
    b = KrausChannel(b.kraus_ops, a.input_layout, a.output_layout)
    cases.append(("random_2_to_6", ChannelDifference(a, b), None))
    inst = instance_channel(
        DeviceModel("iid_detector", {"mu_dark": 0.05}),
        AttackSpec("key_copy", 0.4),
        1,
        KeyLayout(1),
    )
    cases.append(("iid_instance", security_difference(inst), exact_classical_epsilon(inst)))
    return cases


def _check_brackets(seed: int, failures: list[str]) -> list[dict]:
    rows = []
    for label, diff, exact in _bracket_cases(seed):
        lower = induced_norm_lower_bound(diff, samples=300, seed=seed)
        upper = diamond_norm_upper_bound(diff)
        row = {"case": label, "lower": lower, "upper": upper, "exact": exact}
        ok = lower <= upper + 1e-6
        if exact is not None:
            ok = ok and abs(upper - exact) <= 1e-6 and lower <= exact + 1e-6
        row["ok"] = ok
        if not ok:
            failures.append(f"bracket:{label}")
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# the suite


@dataclass(frozen=True)
class SuiteResult:
    seed: int
    size: str
    scenario_rows: tuple[dict, ...]
    adaptive_rows: tuple[dict, ...]
    fixture_rows: tuple[dict, ...]
    counterexample_rows: tuple[dict, ...]
    bracket_rows: tuple[dict, ...]
    proof_audit: dict
    failures: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not self.failures

    def as_dict(self) -> dict:
        return {
            "seed": self.seed,
            "size": self.size,
            "ok": self.ok,
            "counts": {
                "scenarios": len(self.scenario_rows),
                "adaptive": len(self.adaptive_rows),
                "fixtures": len(self.fixture_rows),
            },
            "scenario_rows": list(self.scenario_rows),
            "adaptive_rows": list(self.adaptive_rows),
            "fixture_rows": list(self.fixture_rows),
            "counterexample_rows": list(self.counterexample_rows),
            "bracket_rows": list(self.bracket_rows),
            "proof_audit": self.proof_audit,
            "failures": list(self.failures),
        }


def _scenario_row(scenario: Scenario, report) -> dict:
    return {
        "name": report.scenario,
        "family": scenario.model.family,
        "attack": scenario.attack.kind,
        "engine": report.engine,
        "n_instances": report.n_instances,
        "mu_in_robust_set": report.mu_in_robust_set,
        "epsilon_mode": report.epsilon_mode,
        "pr_accept": report.pr_accept,
        "weighted_distance": report.weighted_distance,
        "eps_total_sum": report.eps_total_sum,
        "eps_total_max": report.eps_total_max,
        "holds_sum": report.holds_sum,
        "holds_max": report.holds_max,
    }


# Fixtures that must refuse verification, mapped to the expected failure.
FIXTURE_EXPECTATIONS = {"bad_stipulated": ConsistencyError}


def run_suite(seed: int, size: str = "default") -> SuiteResult:
    """Run the whole battery; every check failure lands in ``failures``."""
    if size not in SIZES:
        raise QkdcertError(f"unknown suite size {size!r}; pick one of {sorted(SIZES)}")
    knobs = SIZES[size]
    failures: list[str] = []

    scenario_rows = []
    for i in range(knobs["scenarios"]):
        scenario = generate_scenario(seed, i)
        try:
            report = verify_main_bound(scenario, seed=derive_rng(seed, "audit", i).integers(2**31))
        except QkdcertError as exc:
            failures.append(f"scenario:{scenario.name}:{type(exc).__name__}")
            scenario_rows.append({"name": scenario.name, "error": str(exc)})
            continue
        row = _scenario_row(scenario, report)
        scenario_rows.append(row)
        if not (report.holds_sum and report.holds_max):
            failures.append(f"scenario:{scenario.name}:bound_violated")

    adaptive_rows = []
    for i in range(knobs["adaptive"]):
        ascenario = generate_adaptive(seed, i)
        try:
            areport = verify_adaptive_bound(ascenario)
        except QkdcertError as exc:
            failures.append(f"adaptive:{ascenario.name}:{type(exc).__name__}")
            adaptive_rows.append({"name": ascenario.name, "error": str(exc)})
            continue
        adaptive_rows.append(
            {
                "name": areport.scenario,
                "n_regions": areport.n_regions,
                "coverage_defect": areport.coverage_defect,
                "weighted_distance": areport.weighted_distance,
                "eps_total_sum": areport.eps_total_sum,
                "eps_total_max": areport.eps_total_max,
                "holds_sum": areport.holds_sum,
                "holds_max": areport.holds_max,
            }
        )
        if not (areport.holds_sum and areport.holds_max):
            failures.append(f"adaptive:{ascenario.name}:bound_violated")

    fixture_rows = []
    for name in sorted(FIXTURES):
        obj = fixture(name)
        expected = FIXTURE_EXPECTATIONS.get(name)
        try:
            if isinstance(obj, AdaptiveScenario):
                rep = verify_adaptive_bound(obj)
            else:
                rep = verify_main_bound(obj)
        except QkdcertError as exc:
            if expected is not None and isinstance(exc, expected):
                fixture_rows.append({"name": name, "refused": type(exc).__name__, "ok": True})
            else:
                fixture_rows.append({"name": name, "error": str(exc), "ok": False})
                failures.append(f"fixture:{name}:{type(exc).__name__}")
            continue
        if expected is not None:
            fixture_rows.append({"name": name, "ok": False, "error": "expected refusal"})
            failures.append(f"fixture:{name}:missing_refusal")
            continue
        ok = rep.holds_sum and rep.holds_max
        fixture_rows.append(
            {
                "name": name,
                "weighted_distance": rep.weighted_distance,
                "eps_total_sum": rep.eps_total_sum,
                "holds_sum": rep.holds_sum,
                "holds_max": rep.holds_max,
                "ok": ok,
            }
        )
        if not ok:
            failures.append(f"fixture:{name}:bound_violated")

    counterexample_rows = []
    for length in (2, 4):
        sc = build_counterexample(length=length, pr_approve=0.05)
        rep = verify_main_bound(sc)
        expected = 1.0 - 2.0**-length
        ok = (
            abs(rep.conditional_distance - expected) <= 1e-9
            and rep.weighted_distance <= rep.eps_cert + 1e-9
        )
        counterexample_rows.append(
            {
                "length": length,
                "conditional_distance": rep.conditional_distance,
                "expected": expected,
                "weighted_distance": rep.weighted_distance,
                "eps_cert": rep.eps_cert,
                "ok": ok,
            }
        )
        if not ok:
            failures.append(f"counterexample:l{length}")

    bracket_rows = _check_brackets(seed, failures)

    proof_audit = proof_step_audit(
        metric_trials=knobs["metric_trials"],
        telescoping_trials=knobs["telescoping_trials"],
        seed=seed,
    )
    if not proof_audit["ok"]:
        failures.append("proof_audit")

    return SuiteResult(
        seed=seed,
        size=size,
        scenario_rows=tuple(scenario_rows),
        adaptive_rows=tuple(adaptive_rows),
        fixture_rows=tuple(fixture_rows),
        counterexample_rows=tuple(counterexample_rows),
        bracket_rows=tuple(bracket_rows),
        proof_audit=proof_audit,
        failures=tuple(failures),
    )
