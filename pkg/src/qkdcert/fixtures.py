"""Named reference scenarios and strict config-file parsing.

Every deliverable that constructs scenarios — the command line, the suite,
the tests — goes through this module, so a config file and a fixture name
produce identical objects.  Parsing is strict: unknown keys are errors, the
schema version must match, and every config carries an explicit seed.
"""

from __future__ import annotations

import json
from pathlib import Path

from .errors import ConfigError
from .protocol import KeyLayout
from .devices import AttackSpec, DeviceModel, RobustSet
from .certify import CertificationPlan, ParameterPlan
from .compose import (
    AdaptiveScenario,
    InterInstanceSpec,
    ProtocolChoice,
    Scenario,
    TableRule,
    build_counterexample,
)

__all__ = [
    "SCHEMA_VERSION",
    "FIXTURES",
    "load_config",
    "build_from_config",
    "scenario_from_config",
    "adaptive_from_config",
    "certification_from_config",
    "fixture",
]

SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# named fixtures


def _good_device() -> Scenario:
    """Well-behaved detector inside the robust set, OTP wiring, plan-based flag."""
    plan = CertificationPlan(
        [("mu_dark", ParameterPlan("dark_count", 2000, 0.05, side="upper"))]
    )
    return Scenario(
        name="good_device",
        model=DeviceModel("iid_detector", {"mu_dark": 0.01}),
        attack=AttackSpec("none"),
        key_layout=KeyLayout(1),
        key_lengths=(1, 1),
        robust=RobustSet({"mu_dark": (0.0, 0.05)}),
        eps_cert=0.05,
        stipulated_eps=(0.02, 0.02),
        inter_instance=(InterInstanceSpec("otp", message=0),),
        cert_plan=plan,
    )


def _two_instance_otp() -> Scenario:
    """Copy attack with OTP wiring: ciphertext plus a key copy in Eve's hands."""
    return Scenario(
        name="two_instance_otp",
        model=DeviceModel("iid_detector", {"mu_dark": 0.005}),
        attack=AttackSpec("key_copy", 0.02),
        key_layout=KeyLayout(1),
        key_lengths=(1, 1),
        robust=RobustSet({"mu_dark": (0.0, 0.05)}),
        eps_cert=0.05,
        stipulated_eps=(0.02, 0.02),
        inter_instance=(InterInstanceSpec("otp", message=1),),
        accept_probability=1.0,
    )


def _coherent_laser() -> Scenario:
    """Partially coherent source inside the robust set, two instances."""
    return Scenario(
        name="coherent_laser",
        model=DeviceModel("phase_coherent_source", {"coherence": 0.3}),
        attack=AttackSpec("key_copy", 0.5),
        key_layout=KeyLayout(2),
        key_lengths=(2, 2),
        robust=RobustSet({"coherence": (0.0, 0.5)}),
        eps_cert=0.02,
        stipulated_eps=(0.15, 0.15),
        inter_instance=(InterInstanceSpec("keep_only_leak"),),
        accept_probability=1.0,
    )


def _dense_wiring() -> Scenario:
    """Three instances with quantum wiring on a carried qubit register."""
    from .qstate import DensityOperator, Layout, derive_rng, random_density

    rho = random_density(2, derive_rng(11, "fixture-init"))
    return Scenario(
        name="dense_wiring",
        model=DeviceModel("iid_detector", {"mu_dark": 0.01, "mu_trojan": 0.02}),
        attack=AttackSpec("key_copy", 0.5),
        key_layout=KeyLayout(1),
        key_lengths=(1, 1, 1),
        robust=RobustSet({"mu_dark": (0.0, 0.05), "mu_trojan": (0.0, 0.05)}),
        eps_cert=0.01,
        stipulated_eps=(0.3, 0.3, 0.3),
        inter_instance=(
            InterInstanceSpec("unitary_eve", theta=0.7, target="Q0", keep=("Q0",)),
            InterInstanceSpec("depolarize_eve", mix=0.3, target="Q0", keep=("Q0",)),
        ),
        initial=DensityOperator(rho.matrix, Layout((("Q0", 2),))),
        accept_probability=1.0,
    )


def _bad_stipulated() -> Scenario:
    """Stipulation the device cannot meet — verification must refuse it."""
    return Scenario(
        name="bad_stipulated",
        model=DeviceModel("iid_detector", {"mu_dark": 0.04}),
        attack=AttackSpec("none"),
        key_layout=KeyLayout(1),
        key_lengths=(1,),
        robust=RobustSet({"mu_dark": (0.0, 0.05)}),
        eps_cert=0.05,
        stipulated_eps=(0.01,),
        accept_probability=1.0,
    )


def _rejected_trojan() -> Scenario:
    """Out-of-robust-set device: certification keeps Pr[F=1] below eps_cert."""
    plan = CertificationPlan(
        [
            ("mu_dark", ParameterPlan("dark_count", 400, 0.05, side="upper")),
            ("mu_trojan", ParameterPlan("trojan_leak", 400, 0.05, side="upper")),
        ]
    )
    return Scenario(
        name="rejected_trojan",
        model=DeviceModel("iid_detector", {"mu_dark": 0.01, "mu_trojan": 0.2}),
        attack=AttackSpec("key_copy", 1.0),
        key_layout=KeyLayout(1),
        key_lengths=(1,),
        robust=RobustSet({"mu_dark": (0.0, 0.05), "mu_trojan": (0.0, 0.05)}),
        eps_cert=0.05,
        stipulated_eps=(1.0,),
        cert_plan=plan,
    )


def _adaptive_degrading() -> AdaptiveScenario:
    """Two-parameter characterization steering between long/short/reject."""
    plan = CertificationPlan(
        [
            ("mu_dark0", ParameterPlan("dark_count", 30, 0.01, side="two")),
            (
                "mu_temp",
                ParameterPlan("temperature", 25, 0.01, estimator="hoeffding", side="two"),
            ),
        ]
    )
    table = (
        TableRule(
            ("upper_at_most", "mu_dark0", 0.12),
            ProtocolChoice(
                "long", (1, 1), (0.2, 0.2), (InterInstanceSpec("keep_only_leak"),)
            ),
        ),
        TableRule(("upper_at_most", "mu_dark0", 0.4), ProtocolChoice("short", (1,), (0.2,))),
        TableRule(("always",), ProtocolChoice("reject")),
    )
    return AdaptiveScenario(
        name="adaptive_degrading",
        model=DeviceModel("degrading_detector", {"mu_dark0": 0.01, "mu_temp": 0.5}),
        attack=AttackSpec("none"),
        key_layout=KeyLayout(1),
        plan=plan,
        eps_cert=0.02,
        table=table,
    )


def _adaptive_single_region() -> AdaptiveScenario:
    """Deterministic observable: one reachable region, reduces to the plain bound."""
    plan = CertificationPlan(
        [("mu_dark", ParameterPlan("dark_count", 50, 0.05, side="upper"))]
    )
    return AdaptiveScenario(
        name="adaptive_single_region",
        model=DeviceModel("iid_detector", {"mu_dark": 0.0}),
        attack=AttackSpec("key_copy", 0.7),
        key_layout=KeyLayout(1),
        plan=plan,
        eps_cert=0.05,
        table=(TableRule(("always",), ProtocolChoice("only", (1,), (0.5,))),),
    )


def _adaptive_reject() -> AdaptiveScenario:
    """Bad device: regions that look good are improbable, the rest abort."""
    plan = CertificationPlan(
        [("mu_dark", ParameterPlan("dark_count", 200, 0.01, side="two"))]
    )
    table = (
        TableRule(("upper_at_most", "mu_dark", 0.05), ProtocolChoice("run", (1,), (1.0,))),
        TableRule(("always",), ProtocolChoice("reject")),
    )
    return AdaptiveScenario(
        name="adaptive_reject",
        model=DeviceModel("iid_detector", {"mu_dark": 0.3}),
        attack=AttackSpec("key_copy", 1.0),
        key_layout=KeyLayout(1),
        plan=plan,
        eps_cert=0.01,
        table=table,
    )


FIXTURES = {
    "good_device": _good_device,
    "two_instance_otp": _two_instance_otp,
    "coherent_laser": _coherent_laser,
    "dense_wiring": _dense_wiring,
    "bad_stipulated": _bad_stipulated,
    "rejected_trojan": _rejected_trojan,
    "counterexample_l2": lambda: build_counterexample(length=2, pr_approve=0.05),
    "counterexample_l4": lambda: build_counterexample(length=4, pr_approve=0.05),
    "adaptive_degrading": _adaptive_degrading,
    "adaptive_single_region": _adaptive_single_region,
    "adaptive_reject": _adaptive_reject,
}


def fixture(name: str) -> Scenario | AdaptiveScenario:
    try:
        builder = FIXTURES[name]
    except KeyError:
        raise ConfigError(
            f"unknown fixture {name!r}; available: {', '.join(sorted(FIXTURES))}"
        ) from None
    return builder()


# ---------------------------------------------------------------------------
# strict config parsing


def _check_keys(section: str, cfg: dict, required: tuple[str, ...], optional: tuple[str, ...]):
    if not isinstance(cfg, dict):
        raise ConfigError(f"{section}: expected an object, got {type(cfg).__name__}")
    for key in required:
        if key not in cfg:
            raise ConfigError(f"{section}: missing required key {key!r}")
    unknown = set(cfg) - set(required) - set(optional)
    if unknown:
        raise ConfigError(f"{section}: unknown keys {sorted(unknown)}")


def _parse_model(cfg: dict) -> DeviceModel:
    _check_keys("model", cfg, ("family", "params"), ("memoryless",))
    return DeviceModel(cfg["family"], dict(cfg["params"]), cfg.get("memoryless", True))


def _parse_attack(cfg: dict | None) -> AttackSpec:
    if cfg is None:
        return AttackSpec("none")
    _check_keys("attack", cfg, ("kind",), ("strength",))
    if "strength" in cfg:
        return AttackSpec(cfg["kind"], float(cfg["strength"]))
    return AttackSpec(cfg["kind"])


def _parse_robust(cfg: dict) -> RobustSet:
    if not isinstance(cfg, dict):
        raise ConfigError("robust: expected an object mapping names to [low, high]")
    intervals = {}
    for name, pair in cfg.items():
        if not isinstance(pair, (list, tuple)) or len(pair) != 2:
            raise ConfigError(f"robust[{name}]: expected [low, high]")
        intervals[name] = (float(pair[0]), float(pair[1]))
    return RobustSet(intervals)


def _parse_plan(cfg: dict) -> CertificationPlan:
    _check_keys("plan", cfg, ("entries",), ())
    entries = []
    for i, entry in enumerate(cfg["entries"]):
        _check_keys(
            f"plan.entries[{i}]",
            entry,
            ("parameter", "observable", "trials", "epsilon"),
            ("estimator", "side"),
        )
        entries.append(
            (
                entry["parameter"],
                ParameterPlan(
                    entry["observable"],
                    int(entry["trials"]),
                    float(entry["epsilon"]),
                    estimator=entry.get("estimator", "clopper_pearson"),
                    side=entry.get("side", "two"),
                ),
            )
        )
    return CertificationPlan(entries)


def _parse_inter(cfg: list | None) -> tuple[InterInstanceSpec, ...]:
    if cfg is None:
        return ()
    specs = []
    for i, entry in enumerate(cfg):
        _check_keys(
            f"inter_instance[{i}]",
            entry,
            ("kind",),
            ("message", "theta", "mix", "target", "keep"),
        )
        specs.append(
            InterInstanceSpec(
                entry["kind"],
                message=int(entry.get("message", 0)),
                theta=float(entry.get("theta", 0.0)),
                mix=float(entry.get("mix", 0.0)),
                target=entry.get("target", ""),
                keep=tuple(entry.get("keep", ())),
            )
        )
    return tuple(specs)


_SCENARIO_REQUIRED = ("name", "model", "key_layout", "key_lengths", "robust", "eps_cert")
_SCENARIO_OPTIONAL = (
    "schema_version",
    "kind",
    "seed",
    "attack",
    "epsilon_mode",
    "stipulated_eps",
    "inter_instance",
    "accept_probability",
    "cert_plan",
    "cert_rule",
    "dim_cap",
)


def scenario_from_config(cfg: dict) -> Scenario:
    _check_keys("scenario", cfg, _SCENARIO_REQUIRED, _SCENARIO_OPTIONAL)
    stipulated = cfg.get("stipulated_eps")
    return Scenario(
        name=str(cfg["name"]),
        model=_parse_model(cfg["model"]),
        attack=_parse_attack(cfg.get("attack")),
        key_layout=KeyLayout(int(cfg["key_layout"])),
        key_lengths=tuple(int(v) for v in cfg["key_lengths"]),
        robust=_parse_robust(cfg["robust"]),
        eps_cert=float(cfg["eps_cert"]),
        epsilon_mode=cfg.get("epsilon_mode", "stipulated"),
        stipulated_eps=None if stipulated is None else tuple(float(v) for v in stipulated),
        inter_instance=_parse_inter(cfg.get("inter_instance")),
        accept_probability=(
            None if cfg.get("accept_probability") is None else float(cfg["accept_probability"])
        ),
        cert_plan=None if cfg.get("cert_plan") is None else _parse_plan(cfg["cert_plan"]),
        cert_rule=cfg.get("cert_rule", "containment"),
        dim_cap=int(cfg.get("dim_cap", 64)),
    )


_ADAPTIVE_REQUIRED = ("name", "model", "key_layout", "plan", "eps_cert", "table")
_ADAPTIVE_OPTIONAL = ("schema_version", "kind", "seed", "attack", "epsilon_mode", "dim_cap")


def adaptive_from_config(cfg: dict) -> AdaptiveScenario:
    _check_keys("adaptive scenario", cfg, _ADAPTIVE_REQUIRED, _ADAPTIVE_OPTIONAL)
    rules = []
    for i, row in enumerate(cfg["table"]):
        _check_keys(f"table[{i}]", row, ("condition", "choice"), ())
        choice_cfg = row["choice"]
        _check_keys(
            f"table[{i}].choice",
            choice_cfg,
            ("label",),
            ("key_lengths", "stipulated_eps", "inter_instance"),
        )
        choice = ProtocolChoice(
            label=str(choice_cfg["label"]),
            key_lengths=tuple(int(v) for v in choice_cfg.get("key_lengths", ())),
            stipulated_eps=tuple(float(v) for v in choice_cfg.get("stipulated_eps", ())),
            inter_instance=_parse_inter(choice_cfg.get("inter_instance")),
        )
        condition = tuple(row["condition"])
        rules.append(TableRule(condition, choice))
    return AdaptiveScenario(
        name=str(cfg["name"]),
        model=_parse_model(cfg["model"]),
        attack=_parse_attack(cfg.get("attack")),
        key_layout=KeyLayout(int(cfg["key_layout"])),
        plan=_parse_plan(cfg["plan"]),
        eps_cert=float(cfg["eps_cert"]),
        table=tuple(rules),
        epsilon_mode=cfg.get("epsilon_mode", "stipulated"),
        dim_cap=int(cfg.get("dim_cap", 64)),
    )


_CERT_REQUIRED = ("name", "model", "robust", "plan")
_CERT_OPTIONAL = ("schema_version", "kind", "seed", "rule")


def certification_from_config(cfg: dict) -> dict:
    """Parse a certification task: model, robust set, plan, decision rule."""
    _check_keys("certification", cfg, _CERT_REQUIRED, _CERT_OPTIONAL)
    return {
        "name": str(cfg["name"]),
        "model": _parse_model(cfg["model"]),
        "robust": _parse_robust(cfg["robust"]),
        "plan": _parse_plan(cfg["plan"]),
        "rule": cfg.get("rule", "containment"),
    }


def load_config(path: str | Path) -> dict:
    """Read and minimally validate a JSON config file."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"config {path}: top level must be an object")
    version = cfg.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(
            f"config {path}: schema_version must be {SCHEMA_VERSION}, got {version!r}"
        )
    if "seed" in cfg and not isinstance(cfg["seed"], int):
        raise ConfigError(f"config {path}: seed must be an integer")
    return cfg


def build_from_config(cfg: dict):
    """Dispatch a parsed config to the matching constructor by its ``kind``."""
    kind = cfg.get("kind")
    if kind == "fixture":
        _check_keys("fixture config", cfg, ("kind", "name"), ("schema_version", "seed"))
        return fixture(cfg["name"])
    if kind == "scenario":
        return scenario_from_config(cfg)
    if kind == "adaptive":
        return adaptive_from_config(cfg)
    if kind == "certification":
        return certification_from_config(cfg)
    raise ConfigError(
        f"config kind must be one of scenario/adaptive/certification/fixture, got {kind!r}"
    )
