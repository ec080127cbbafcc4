"""Sequential deployment scenarios and verification of the security bound.

A scenario runs ``n`` protocol instances of one certified device model under
a fixed attack, wiring each instance's output into the next through an
inter-instance channel chosen by the protocol (or the adversary).  Running
the sequence twice — once as is, once with every instance followed by the
key-replacement channel — yields the real and ideal final states.  The
quantity the security claim controls is

    Pr[F = 1] * distance(real | F=1, ideal | F=1),

which must not exceed eps_cert + sum_j eps_j (and, in sharpened form, the
max of the two terms): certification contributes the probability of wrongly
approving a bad device, the per-instance security levels contribute the
conditional distance.  Verification checks the preconditions of that claim
(audited instance levels, approval probability below eps_cert for bad
models), computes both sides exactly, and reports margins.

The adaptive variant replaces the binary flag by a characterization region
fed to a protocol table; the bound then weights each reachable region by its
exact probability.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ConsistencyError, DimensionCapError
from .qstate import (
    DEFAULT_DIM_CAP,
    DensityOperator,
    KrausChannel,
    Layout,
    apply,
    basis_state,
    derive_rng,
    permute_subsystems,
    random_channel,
    random_density,
    trace_distance,
)
from .cq import (
    CLASSICAL_DIM_CAP,
    ClassicalState,
    StochasticChannel,
    apply_classical,
    permute_classical,
    point_mass,
    to_density,
    tv_distance,
)
from .protocol import (
    InstanceChannel,
    KeyLayout,
    audit_epsilon,
    exact_classical_epsilon,
    key_replacement_channel,
    key_replacement_stochastic,
)
from .devices import (
    AttackSpec,
    DeviceModel,
    RobustSet,
    in_robust_set,
    instance_channel,
)
from .certify import (
    CertificationPlan,
    approval_probability,
    certify,
    enumerate_regions,
    three_sigma_slack,
)

__all__ = [
    "BOUND_TOL",
    "AUDIT_MARGIN",
    "InterInstanceSpec",
    "Scenario",
    "SequenceResult",
    "BoundReport",
    "TableRule",
    "ProtocolChoice",
    "AdaptiveScenario",
    "AdaptiveReport",
    "otp_leakage_channel",
    "run_sequence",
    "scenario_dims",
    "verify_main_bound",
    "verify_adaptive_bound",
    "build_counterexample",
    "proof_step_audit",
]

# Numerical tolerance on every bound comparison.
BOUND_TOL = 1e-9

# Safety margin added to solver-derived security levels in audited mode, so
# that downstream bound checks never fail on solver accuracy alone.
AUDIT_MARGIN = 1e-6


# ---------------------------------------------------------------------------
# inter-instance wiring


_INTER_KINDS = ("discard_keys", "keep_only_leak", "otp", "unitary_eve", "depolarize_eve")


@dataclass(frozen=True)
class InterInstanceSpec:
    """How instance ``j`` output is wired into instance ``j+1`` input.

    Kinds:

    * ``discard_keys`` — trace out the fresh key pair, pass everything else.
    * ``keep_only_leak`` — trace out everything except the fresh leak
      register (keeps downstream dimensions minimal).
    * ``otp`` — append a one-time-pad ciphertext register ``C{j}`` holding
      ``key XOR message`` (keys pass through).  ``message`` must fit in the
      instance key length.
    * ``unitary_eve`` — rotate the ``target`` register (default the fresh
      leak register) by ``theta`` in its first two basis directions.  Makes
      the run genuinely non-diagonal.
    * ``depolarize_eve`` — depolarize the ``target`` register with strength
      ``mix``.

    For the two quantum kinds a nonempty ``keep`` tuple discards every
    register not listed there (the target is always retained), which is how
    multi-instance quantum runs stay inside the dense dimension cap.
    """

    kind: str = "discard_keys"
    message: int = 0
    theta: float = 0.0
    mix: float = 0.0
    target: str = ""
    keep: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in _INTER_KINDS:
            raise ConfigError(f"unknown inter-instance kind {self.kind!r}")
        if self.kind == "otp" and self.message < 0:
            raise ConfigError("otp message must be a nonnegative integer")
        if self.kind == "depolarize_eve" and not 0.0 <= self.mix <= 1.0:
            raise ConfigError("depolarize_eve mix must lie in [0, 1]")

    @property
    def is_classical(self) -> bool:
        return self.kind in ("discard_keys", "keep_only_leak", "otp")


def otp_leakage_channel(
    key_layout: KeyLayout,
    message: int,
    length: int,
    ka: str = "KA",
    kb: str = "KB",
    cipher: str = "C",
) -> StochasticChannel:
    """One-time-pad encryption as a channel from the key pair to (pair, ciphertext).

    Reads the ``ka`` register; when its tag equals ``length`` the ciphertext
    register (dimension ``2**length``) is set to ``value XOR message``,
    otherwise to 0.  Keys pass through untouched, so composing with the
    surrounding run only appends the ciphertext register.  The all-zero
    message makes the ciphertext a verbatim copy of the key value.
    """
    if not 0 <= length <= key_layout.max_length:
        raise ConfigError(f"message length {length} outside key layout range")
    if not 0 <= message < 2**length:
        raise ConfigError(f"message {message} does not fit in {length} bits")
    dim = key_layout.register_dim
    c_dim = 2**length
    in_layout = Layout(((ka, dim), (kb, dim)))
    out_layout = Layout(((ka, dim), (kb, dim), (cipher, c_dim)))
    matrix = np.zeros((out_layout.dim, in_layout.dim))
    for a in range(dim):
        tag, value = key_layout.decode(a)
        c = value ^ message if tag == length else 0
        for b in range(dim):
            matrix[(a * dim + b) * c_dim + c, a * dim + b] = 1.0
    return StochasticChannel(matrix, in_layout, out_layout)


def _givens_unitary(dim: int, theta: float) -> np.ndarray:
    u = np.eye(dim, dtype=complex)
    u[0, 0] = math.cos(theta)
    u[1, 1] = math.cos(theta)
    u[0, 1] = -math.sin(theta)
    u[1, 0] = math.sin(theta)
    return u


def _depolarize_kraus(dim: int, mix: float) -> list[np.ndarray]:
    ops = [math.sqrt(1.0 - mix) * np.eye(dim, dtype=complex)]
    if mix > 0.0:
        scale = math.sqrt(mix / dim)
        for i in range(dim):
            for j in range(dim):
                op = np.zeros((dim, dim), dtype=complex)
                op[i, j] = scale
                ops.append(op)
    return ops


def _build_inter_channel(
    spec: InterInstanceSpec,
    layout: Layout,
    key_layout: KeyLayout,
    j: int,
    length: int,
):
    """Materialize the wiring channel for the state layout after instance ``j``."""
    ka, kb, leak = f"KA{j}", f"KB{j}", f"L{j}"
    dim = key_layout.register_dim
    if spec.kind == "discard_keys":
        in_layout = Layout(((ka, dim), (kb, dim)))
        return StochasticChannel(np.ones((1, dim * dim)), in_layout, Layout(()))
    if spec.kind == "keep_only_leak":
        rest = tuple(n for n in layout.names if n != leak)
        in_layout = layout.extract(rest)
        return StochasticChannel(np.ones((1, in_layout.dim)), in_layout, Layout(()))
    if spec.kind == "otp":
        return otp_leakage_channel(key_layout, spec.message, length, ka=ka, kb=kb, cipher=f"C{j}")
    target = spec.target or leak
    if target not in layout.names:
        raise ConfigError(f"inter-instance target register {target!r} not present")
    t_dim = layout.dim_of(target)
    if spec.kind == "unitary_eve":
        if t_dim < 2:
            raise ConfigError("unitary_eve needs a register of dimension >= 2")
        ops = [_givens_unitary(t_dim, spec.theta)]
    else:
        ops = _depolarize_kraus(t_dim, spec.mix)
    if not spec.keep:
        t_layout = layout.extract((target,))
        return KrausChannel(ops, t_layout, t_layout)
    retained = set(spec.keep) | {target}
    unknown = retained - set(layout.names)
    if unknown:
        raise ConfigError(f"keep names not present: {sorted(unknown)}")
    dropped = tuple(n for n in layout.names if n not in retained)
    in_layout = layout.extract(dropped + (target,))
    drop_dim = in_layout.dim // t_dim
    kraus = []
    for op in ops:
        for idx in range(drop_dim):
            sel = np.zeros((1, drop_dim))
            sel[0, idx] = 1.0
            kraus.append(np.kron(sel, op))
    return KrausChannel(kraus, in_layout, layout.extract((target,)))


# ---------------------------------------------------------------------------
# scenarios


@dataclass(frozen=True)
class Scenario:
    """A full sequential deployment: device, attack, wiring, and budgets.

    ``key_lengths`` fixes the key length of each instance. ``epsilon_mode``
    selects where per-instance security levels come from: ``"stipulated"``
    takes them from ``stipulated_eps`` (and verification then audits that the
    true deviation does not exceed them whenever the model is inside the
    robust set), while ``"audited"`` computes them from the instance
    channels directly.  Exactly one of ``accept_probability`` (analytic) or
    ``cert_plan`` (exact computation from a certification strategy) supplies
    Pr[F = 1]; if neither is given the worst case Pr[F = 1] = 1 is assumed,
    which is only admissible for models inside the robust set.
    """

    name: str
    model: DeviceModel
    attack: AttackSpec
    key_layout: KeyLayout
    key_lengths: tuple[int, ...]
    robust: RobustSet
    eps_cert: float
    epsilon_mode: str = "stipulated"
    stipulated_eps: tuple[float, ...] | None = None
    inter_instance: tuple[InterInstanceSpec, ...] = ()
    accept_probability: float | None = None
    cert_plan: CertificationPlan | None = None
    cert_rule: str = "containment"
    initial: ClassicalState | DensityOperator | None = None
    dim_cap: int = DEFAULT_DIM_CAP

    def __post_init__(self) -> None:
        if not self.key_lengths:
            raise ConfigError("scenario needs at least one instance")
        for length in self.key_lengths:
            if not 0 <= length <= self.key_layout.max_length:
                raise ConfigError(f"key length {length} outside layout range")
        if self.epsilon_mode not in ("stipulated", "audited"):
            raise ConfigError(f"unknown epsilon_mode {self.epsilon_mode!r}")
        if self.epsilon_mode == "stipulated":
            if self.stipulated_eps is None or len(self.stipulated_eps) != self.n_instances:
                raise ConfigError("stipulated mode needs one epsilon per instance")
            for eps in self.stipulated_eps:
                if not 0.0 <= eps <= 1.0:
                    raise ConfigError("stipulated epsilon outside [0, 1]")
        if len(self.inter_instance) not in (0, self.n_instances - 1):
            raise ConfigError("need one inter-instance spec per gap (or none for defaults)")
        if not 0.0 <= self.eps_cert <= 1.0:
            raise ConfigError("eps_cert outside [0, 1]")
        if self.accept_probability is not None and not 0.0 <= self.accept_probability <= 1.0:
            raise ConfigError("accept_probability outside [0, 1]")
        if self.accept_probability is not None and self.cert_plan is not None:
            raise ConfigError("give accept_probability or cert_plan, not both")

    @property
    def n_instances(self) -> int:
        return len(self.key_lengths)

    @property
    def wiring(self) -> tuple[InterInstanceSpec, ...]:
        if self.inter_instance:
            return self.inter_instance
        return tuple(InterInstanceSpec("discard_keys") for _ in range(self.n_instances - 1))

    @property
    def is_classical(self) -> bool:
        if isinstance(self.initial, DensityOperator):
            return False
        return all(spec.is_classical for spec in self.wiring)

    @property
    def mu_in_robust_set(self) -> bool:
        return in_robust_set(self.model.params, self.robust)


@dataclass(frozen=True)
class SequenceResult:
    """Final states of one sequential run (accepted branch plus full states)."""

    real: ClassicalState | DensityOperator
    ideal: ClassicalState | DensityOperator
    real_full: ClassicalState | DensityOperator
    ideal_full: ClassicalState | DensityOperator
    pr_accept: float
    engine: str
    instances: tuple[InstanceChannel, ...]

    @property
    def conditional_distance(self) -> float:
        if self.engine == "classical":
            return tv_distance(self.real, self.ideal)
        return trace_distance(self.real, self.ideal)

    @property
    def full_distance(self) -> float:
        if self.engine == "classical":
            return tv_distance(self.real_full, self.ideal_full)
        return trace_distance(self.real_full, self.ideal_full)


def _initial_state(scenario: Scenario, engine: str):
    init = scenario.initial
    if init is None:
        layout = Layout((("Q0", 1),))
        if engine == "classical":
            return point_mass(layout, 0)
        return basis_state(layout, 0)
    if engine == "classical":
        return init if isinstance(init, ClassicalState) else None
    if isinstance(init, DensityOperator):
        return init
    return to_density(init)


def _append_flag(state, pr_accept: float, reject, engine: str):
    """Mix accepted/rejected branches with a trailing classical flag register."""
    flag = Layout((("F", 2),))
    layout = state.layout + flag
    p0 = 1.0 - pr_accept
    if engine == "classical":
        probs = np.zeros(layout.dim)
        probs[0::2] = p0 * reject.probs
        probs[1::2] = pr_accept * state.probs
        return ClassicalState(probs, layout)
    d = state.layout.dim
    matrix = np.zeros((2 * d, 2 * d), dtype=complex)
    matrix[0::2, 0::2] = p0 * reject.matrix
    matrix[1::2, 1::2] = pr_accept * state.matrix
    return DensityOperator(matrix, layout)


def run_sequence(scenario: Scenario, pr_accept: float | None = None) -> SequenceResult:
    """Run the real and ideal sequences and assemble flagged final states.

    The real branch applies instance channels and wiring as given; the ideal
    branch additionally applies the key-replacement channel to each fresh
    key pair immediately after its instance.  The rejected branch is the
    zero-length-key point state on the final layout (keys at tag 0, side
    registers empty), identical in both branches, so the flagged full-state
    distance equals ``pr_accept * conditional_distance`` exactly.
    """
    engine = "classical" if scenario.is_classical else "dense"
    cap = CLASSICAL_DIM_CAP if engine == "classical" else scenario.dim_cap
    real = _initial_state(scenario, engine)
    if real is None:
        raise ConfigError("quantum initial state requires the dense engine")
    ideal = real
    wiring = scenario.wiring
    instances: list[InstanceChannel] = []
    for j, length in enumerate(scenario.key_lengths, start=1):
        stip = None
        if scenario.stipulated_eps is not None:
            stip = scenario.stipulated_eps[j - 1]
        inst = instance_channel(
            scenario.model,
            scenario.attack,
            j,
            scenario.key_layout,
            length=length,
            input_layout=real.layout,
            stipulated_epsilon=stip,
        )
        instances.append(inst)
        if engine == "classical":
            chan = inst.channel
            repl = key_replacement_stochastic(scenario.key_layout, inst.ka, inst.kb)
            real = apply_classical(chan, real, dim_cap=cap)
            ideal = apply_classical(chan, ideal, dim_cap=cap)
            ideal = apply_classical(repl, ideal, dim_cap=cap)
            ideal = permute_classical(ideal, real.layout.names)
        else:
            chan = inst.kraus()
            repl = key_replacement_channel(scenario.key_layout, inst.ka, inst.kb)
            real = apply(chan, real, dim_cap=cap)
            ideal = apply(chan, ideal, dim_cap=cap)
            ideal = apply(repl, ideal, dim_cap=cap)
            ideal = permute_subsystems(ideal, real.layout.names)
        if j < scenario.n_instances:
            wire = _build_inter_channel(wiring[j - 1], real.layout, scenario.key_layout, j, length)
            if engine == "classical":
                real = apply_classical(wire, real, dim_cap=cap)
                ideal = apply_classical(wire, ideal, dim_cap=cap)
                ideal = permute_classical(ideal, real.layout.names)
            else:
                if isinstance(wire, StochasticChannel):
                    wire = wire.to_kraus()
                real = apply(wire, real, dim_cap=cap)
                ideal = apply(wire, ideal, dim_cap=cap)
                ideal = permute_subsystems(ideal, real.layout.names)
    if pr_accept is None:
        pr_accept = 1.0
    if engine == "classical":
        reject = point_mass(real.layout, 0)
    else:
        reject = basis_state(real.layout, 0)
    real_full = _append_flag(real, pr_accept, reject, engine)
    ideal_full = _append_flag(ideal, pr_accept, reject, engine)
    return SequenceResult(
        real=real,
        ideal=ideal,
        real_full=real_full,
        ideal_full=ideal_full,
        pr_accept=pr_accept,
        engine=engine,
        instances=tuple(instances),
    )


def scenario_dims(scenario: Scenario) -> list[int]:
    """State-space dimension after every instance and wiring step (cap pre-check)."""
    kl = scenario.key_layout
    if scenario.initial is not None:
        parts = list(zip(scenario.initial.layout.names, scenario.initial.layout.dims))
    else:
        parts = [("Q0", 1)]
    dims: list[int] = []
    for j, length in enumerate(scenario.key_lengths, start=1):
        parts += [
            (f"KA{j}", kl.register_dim),
            (f"KB{j}", kl.register_dim),
            (f"L{j}", 2**length + 1),
        ]
        dims.append(math.prod(d for _, d in parts))
        if j < scenario.n_instances:
            spec = scenario.wiring[j - 1]
            if spec.kind == "discard_keys":
                gone = (f"KA{j}", f"KB{j}")
                parts = [p for p in parts if p[0] not in gone]
            elif spec.kind == "keep_only_leak":
                parts = [p for p in parts if p[0] == f"L{j}"]
            elif spec.kind == "otp":
                parts.append((f"C{j}", 2**length))
            elif spec.keep:
                retained = set(spec.keep) | {spec.target or f"L{j}"}
                parts = [p for p in parts if p[0] in retained]
            dims.append(math.prod(d for _, d in parts))
    return dims


# ---------------------------------------------------------------------------
# verification of the main bound


@dataclass(frozen=True)
class BoundReport:
    """Both sides of the security bound for one scenario, plus audit detail."""

    scenario: str
    engine: str
    n_instances: int
    mu_in_robust_set: bool
    pr_accept: float
    pr_accept_source: str
    conditional_distance: float
    weighted_distance: float
    full_state_distance: float
    eps_cert: float
    eps_qkd: tuple[float, ...]
    epsilon_mode: str
    eps_total_sum: float
    eps_total_max: float
    holds_sum: bool
    holds_max: bool
    audit_detail: tuple[dict, ...] = field(default_factory=tuple)

    def as_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "engine": self.engine,
            "n_instances": self.n_instances,
            "mu_in_robust_set": self.mu_in_robust_set,
            "pr_accept": self.pr_accept,
            "pr_accept_source": self.pr_accept_source,
            "conditional_distance": self.conditional_distance,
            "weighted_distance": self.weighted_distance,
            "full_state_distance": self.full_state_distance,
            "eps_cert": self.eps_cert,
            "eps_qkd": list(self.eps_qkd),
            "epsilon_mode": self.epsilon_mode,
            "eps_total_sum": self.eps_total_sum,
            "eps_total_max": self.eps_total_max,
            "holds_sum": self.holds_sum,
            "holds_max": self.holds_max,
            "audit_detail": [dict(d) for d in self.audit_detail],
        }


def _accept_probability(scenario: Scenario) -> tuple[float, str]:
    if scenario.accept_probability is not None:
        return scenario.accept_probability, "analytic"
    if scenario.cert_plan is not None:
        pr = approval_probability(
            scenario.model, scenario.robust, scenario.cert_plan, rule=scenario.cert_rule
        )
        return pr, "exact_plan"
    return 1.0, "worst_case"


def _audit_instance(
    inst: InstanceChannel,
    mode: str,
    *,
    samples: int,
    seed: int,
    dim_cap: int,
) -> tuple[float, dict]:
    """Return the epsilon charged for one instance plus the audit record.

    Stipulated mode checks that an audit lower bound does not exceed the
    stipulated level (for classical instances the lower bound is the exact
    deviation, so the check is tight).  Audited mode charges the exact value
    for classical instances and a solver upper bound plus margin otherwise.
    """
    if inst.is_classical:
        exact = exact_classical_epsilon(inst)
        detail = {"index": inst.index, "kind": "exact", "value": exact}
        if mode == "audited":
            return exact, detail
        stip = inst.stipulated_epsilon
        detail["stipulated"] = stip
        if exact > stip + BOUND_TOL:
            raise ConsistencyError(
                f"instance {inst.index}: exact deviation {exact:.6g} exceeds "
                f"stipulated level {stip:.6g}"
            )
        return stip, detail
    lower, upper = audit_epsilon(inst, samples=samples, seed=seed, dim_cap=dim_cap)
    detail = {"index": inst.index, "kind": "sandwich", "lower": lower, "upper": upper}
    if mode == "audited":
        return upper + AUDIT_MARGIN, detail
    stip = inst.stipulated_epsilon
    detail["stipulated"] = stip
    if lower > stip + BOUND_TOL:
        raise ConsistencyError(
            f"instance {inst.index}: audited lower bound {lower:.6g} exceeds "
            f"stipulated level {stip:.6g}"
        )
    return stip, detail


def verify_main_bound(
    scenario: Scenario,
    *,
    audit_samples: int = 200,
    seed: int = 0,
    pr_mc_trials: int | None = None,
) -> BoundReport:
    """Run the scenario down both branches and check the security bound.

    Gate checks (raising ``ConsistencyError`` when violated):

    * model inside the robust set — every instance's security level must be
      consistent with its stipulation (or is computed outright in audited
      mode);
    * model outside the robust set — Pr[F = 1] must not exceed ``eps_cert``,
      computed exactly from the certification plan or the analytic value,
      optionally cross-checked by Monte Carlo with a three-sigma allowance
      when ``pr_mc_trials`` is given.

    The returned report carries both bound variants; ``holds_sum`` /
    ``holds_max`` compare the weighted distance against
    ``eps_cert + sum eps_j`` and ``max(eps_cert, sum eps_j)``.
    """
    dims = scenario_dims(scenario)
    cap = CLASSICAL_DIM_CAP if scenario.is_classical else scenario.dim_cap
    if max(dims) > cap:
        raise DimensionCapError(
            f"scenario {scenario.name!r} needs dimension {max(dims)} (cap {cap})"
        )
    pr_accept, pr_source = _accept_probability(scenario)
    inside = scenario.mu_in_robust_set
    if not inside:
        if pr_source == "worst_case":
            raise ConsistencyError(
                "model outside the robust set needs an accept-probability source"
            )
        if pr_accept > scenario.eps_cert + BOUND_TOL:
            raise ConsistencyError(
                f"approval probability {pr_accept:.6g} exceeds eps_cert "
                f"{scenario.eps_cert:.6g} for a model outside the robust set"
            )
        if pr_mc_trials is not None and scenario.cert_plan is not None:
            hits = 0
            for t in range(pr_mc_trials):
                outcome = certify(
                    scenario.model,
                    scenario.robust,
                    scenario.cert_plan,
                    seed=(seed << 20) + t,
                    rule=scenario.cert_rule,
                )
                hits += int(outcome.approved)
            rate = hits / pr_mc_trials
            slack = three_sigma_slack(max(rate, scenario.eps_cert), pr_mc_trials)
            if rate > scenario.eps_cert + slack:
                raise ConsistencyError(
                    f"Monte Carlo approval rate {rate:.6g} exceeds eps_cert plus "
                    f"three-sigma slack ({scenario.eps_cert:.6g} + {slack:.6g})"
                )
    result = run_sequence(scenario, pr_accept=pr_accept)
    eps_qkd: list[float] = []
    detail: list[dict] = []
    for inst in result.instances:
        if inside or scenario.epsilon_mode == "audited":
            eps, rec = _audit_instance(
                inst,
                scenario.epsilon_mode,
                samples=audit_samples,
                seed=(seed << 8) + inst.index,
                dim_cap=scenario.dim_cap,
            )
        else:
            # Outside the robust set nothing constrains the true deviation;
            # the stipulated levels are charged as declared.
            eps = inst.stipulated_epsilon
            rec = {"index": inst.index, "kind": "declared", "stipulated": eps}
        eps_qkd.append(eps)
        detail.append(rec)
    d_cond = result.conditional_distance
    lhs = pr_accept * d_cond
    d_full = result.full_distance
    if abs(d_full - lhs) > 1e-7:
        raise ConsistencyError(
            f"flagged-state distance {d_full:.12g} disagrees with "
            f"pr * conditional distance {lhs:.12g}"
        )
    eps_sum = scenario.eps_cert + sum(eps_qkd)
    eps_max = max(scenario.eps_cert, sum(eps_qkd))
    return BoundReport(
        scenario=scenario.name,
        engine=result.engine,
        n_instances=scenario.n_instances,
        mu_in_robust_set=inside,
        pr_accept=pr_accept,
        pr_accept_source=pr_source,
        conditional_distance=d_cond,
        weighted_distance=lhs,
        full_state_distance=d_full,
        eps_cert=scenario.eps_cert,
        eps_qkd=tuple(eps_qkd),
        epsilon_mode=scenario.epsilon_mode,
        eps_total_sum=eps_sum,
        eps_total_max=eps_max,
        holds_sum=lhs <= eps_sum + BOUND_TOL,
        holds_max=lhs <= eps_max + BOUND_TOL,
        audit_detail=tuple(detail),
    )


# ---------------------------------------------------------------------------
# adaptive protocol choice


@dataclass(frozen=True)
class ProtocolChoice:
    """Protocol selected for one characterization outcome.

    ``n_instances == 0`` encodes rejection: the run is the empty protocol
    whose real and ideal states coincide (zero-length keys), contributing
    nothing to the weighted distance.
    """

    label: str
    key_lengths: tuple[int, ...] = ()
    stipulated_eps: tuple[float, ...] = ()
    inter_instance: tuple[InterInstanceSpec, ...] = ()

    def __post_init__(self) -> None:
        if len(self.stipulated_eps) != len(self.key_lengths):
            raise ConfigError("protocol choice needs one epsilon per instance")

    @property
    def n_instances(self) -> int:
        return len(self.key_lengths)


@dataclass(frozen=True)
class TableRule:
    """One row of a protocol table: a region predicate and the chosen protocol.

    Conditions are small serializable tuples:

    * ``("always",)`` — catch-all;
    * ``("upper_at_most", name, x)`` — region upper endpoint for ``name`` <= x;
    * ``("lower_at_least", name, x)`` — region lower endpoint >= x;
    * ``("contained_in", name, lo, hi)`` — region slice inside [lo, hi].
    """

    condition: tuple
    choice: ProtocolChoice

    def matches(self, region) -> bool:
        cond = self.condition
        if cond[0] == "always":
            return True
        name = cond[1]
        low, high = region.interval(name)
        if cond[0] == "upper_at_most":
            return high <= cond[2]
        if cond[0] == "lower_at_least":
            return low >= cond[2]
        if cond[0] == "contained_in":
            return cond[2] <= low and high <= cond[3]
        raise ConfigError(f"unknown table condition {cond[0]!r}")


@dataclass(frozen=True)
class AdaptiveScenario:
    """Characterize-then-choose deployment: a plan, a table, a device."""

    name: str
    model: DeviceModel
    attack: AttackSpec
    key_layout: KeyLayout
    plan: CertificationPlan
    eps_cert: float
    table: tuple[TableRule, ...]
    epsilon_mode: str = "stipulated"
    dim_cap: int = DEFAULT_DIM_CAP

    def __post_init__(self) -> None:
        if not self.table:
            raise ConfigError("adaptive scenario needs a protocol table")
        if self.epsilon_mode not in ("stipulated", "audited"):
            raise ConfigError(f"unknown epsilon_mode {self.epsilon_mode!r}")
        if not 0.0 <= self.eps_cert <= 1.0:
            raise ConfigError("eps_cert outside [0, 1]")

    def choose(self, region) -> ProtocolChoice:
        for rule in self.table:
            if rule.matches(region):
                return rule.choice
        raise ConsistencyError(
            f"no table rule matches region {region.descriptor()} — add a catch-all"
        )


@dataclass(frozen=True)
class AdaptiveReport:
    """Region-weighted bound for an adaptive scenario."""

    scenario: str
    n_regions: int
    coverage_defect: float
    eps_cert: float
    weighted_distance: float
    eps_qkd_worst: float
    eps_total_sum: float
    eps_total_max: float
    holds_sum: bool
    holds_max: bool
    branches: tuple[dict, ...]

    def as_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "n_regions": self.n_regions,
            "coverage_defect": self.coverage_defect,
            "eps_cert": self.eps_cert,
            "weighted_distance": self.weighted_distance,
            "eps_qkd_worst": self.eps_qkd_worst,
            "eps_total_sum": self.eps_total_sum,
            "eps_total_max": self.eps_total_max,
            "holds_sum": self.holds_sum,
            "holds_max": self.holds_max,
            "branches": [dict(b) for b in self.branches],
        }


def _truth_in_region(model: DeviceModel, region) -> bool:
    return region.contains(model.params)


def verify_adaptive_bound(
    ascenario: AdaptiveScenario,
    *,
    audit_samples: int = 200,
    seed: int = 0,
    max_outcomes: int = 1000,
) -> AdaptiveReport:
    """Enumerate characterization outcomes, run each chosen protocol, sum the bound.

    The left-hand side is ``sum_regions Pr[region] * distance(region branch)``
    where rejection branches (zero instances) contribute zero exactly.  The
    certification budget must cover the exact probability that the region
    misses the true parameters (``coverage_defect <= eps_cert``); the
    instance budget charges the worst total over truth-containing regions.
    """
    regions = enumerate_regions(ascenario.model, ascenario.plan, max_outcomes=max_outcomes)
    tagged = [
        (region, prob, _truth_in_region(ascenario.model, region), ascenario.choose(region))
        for region, prob in regions
    ]
    coverage_defect = sum(prob for _, prob, contains, _ in tagged if not contains)
    # Stipulations only bind on branches a truth-containing region can reach,
    # so decide per protocol choice whether the audit gate applies.
    must_audit: dict[ProtocolChoice, bool] = {}
    for _, _, contains, choice in tagged:
        if choice.n_instances > 0:
            must_audit[choice] = must_audit.get(choice, False) or contains
    runs: dict[ProtocolChoice, tuple[float, tuple[float, ...]]] = {}
    for choice, gate in must_audit.items():
        scenario = Scenario(
            name=f"{ascenario.name}:{choice.label}",
            model=ascenario.model,
            attack=ascenario.attack,
            key_layout=ascenario.key_layout,
            key_lengths=choice.key_lengths,
            robust=RobustSet({}),
            eps_cert=0.0,
            epsilon_mode=ascenario.epsilon_mode,
            stipulated_eps=choice.stipulated_eps,
            inter_instance=choice.inter_instance,
            accept_probability=1.0,
            dim_cap=ascenario.dim_cap,
        )
        result = run_sequence(scenario, pr_accept=1.0)
        eps_list = []
        for inst in result.instances:
            if gate or ascenario.epsilon_mode == "audited":
                eps, _ = _audit_instance(
                    inst,
                    ascenario.epsilon_mode,
                    samples=audit_samples,
                    seed=(seed << 8) + inst.index,
                    dim_cap=ascenario.dim_cap,
                )
            else:
                eps = inst.stipulated_epsilon
            eps_list.append(eps)
        runs[choice] = (result.conditional_distance, tuple(eps_list))
    lhs = 0.0
    eps_worst = 0.0
    branches: list[dict] = []
    for region, prob, contains, choice in tagged:
        d_cond, eps_qkd = (0.0, ()) if choice.n_instances == 0 else runs[choice]
        if contains and choice.n_instances > 0:
            eps_worst = max(eps_worst, sum(eps_qkd))
        lhs += prob * d_cond
        branches.append(
            {
                "region": region.descriptor(),
                "probability": prob,
                "contains_truth": contains,
                "protocol": choice.label,
                "conditional_distance": d_cond,
                "eps_qkd": list(eps_qkd),
            }
        )
    if coverage_defect > ascenario.eps_cert + BOUND_TOL:
        raise ConsistencyError(
            f"characterization coverage defect {coverage_defect:.6g} exceeds "
            f"eps_cert {ascenario.eps_cert:.6g}"
        )
    eps_sum = ascenario.eps_cert + eps_worst
    eps_max = max(ascenario.eps_cert, eps_worst)
    return AdaptiveReport(
        scenario=ascenario.name,
        n_regions=len(regions),
        coverage_defect=coverage_defect,
        eps_cert=ascenario.eps_cert,
        weighted_distance=lhs,
        eps_qkd_worst=eps_worst,
        eps_total_sum=eps_sum,
        eps_total_max=eps_max,
        holds_sum=lhs <= eps_sum + BOUND_TOL,
        holds_max=lhs <= eps_max + BOUND_TOL,
        branches=tuple(branches),
    )


# ---------------------------------------------------------------------------
# tightness counterexample


def build_counterexample(length: int = 4, pr_approve: float = 0.05, seed: int = 0) -> Scenario:
    """A single-instance scenario pinning the bound's weighted distance.

    A fully coherent source under an unambiguous-discrimination attack leaks
    the entire key whenever a key is produced, so the conditional distance
    between the real and ideal branches is exactly ``1 - 2**(-length)``.
    Certification approves this device with probability ``pr_approve``; with
    ``eps_cert = pr_approve`` and the instance level stipulated at 1, the
    weighted distance meets the certification budget to within machine
    precision, so neither bound form can be tightened.
    """
    if length < 1:
        raise ConfigError("counterexample needs length >= 1")
    model = DeviceModel("phase_coherent_source", {"coherence": 1.0})
    attack = AttackSpec("high_loss_usd")
    robust = RobustSet({"coherence": (0.0, 0.5)})
    return Scenario(
        name=f"usd_counterexample_l{length}_s{seed}",
        model=model,
        attack=attack,
        key_layout=KeyLayout(length),
        key_lengths=(length,),
        robust=robust,
        eps_cert=pr_approve,
        epsilon_mode="stipulated",
        stipulated_eps=(1.0,),
        accept_probability=pr_approve,
    )


# ---------------------------------------------------------------------------
# proof-step audits


def proof_step_audit(
    *,
    metric_trials: int = 1000,
    telescoping_trials: int = 100,
    seed: int = 7,
    tol: float = BOUND_TOL,
) -> dict:
    """Numerically audit the inequalities the security argument chains together.

    Checks, on randomized instances:

    * triangle inequality of the trace distance;
    * contractivity of the trace distance under channels (data processing);
    * the assembled two-instance telescoping step
      ``d(E2 E1 s, K2 E2 K1 E1 s) <= d(E1 s, K1 E1 s) + d(E2 r, K2 E2 r)``
      with ``r = K1 E1 s``, using random instance and wiring channels.

    Returns the worst signed violation for each family (negative or tiny
    positive values below ``tol`` mean the inequality held).
    """
    rng = derive_rng(seed, "metric")
    max_triangle = -1.0
    max_dpi = -1.0
    for t in range(metric_trials):
        dim = int(rng.integers(2, 9))
        rho = random_density(dim, rng)
        sigma = random_density(dim, rng)
        tau = random_density(dim, rng)
        lhs = trace_distance(rho, sigma)
        max_triangle = max(
            max_triangle, lhs - trace_distance(rho, tau) - trace_distance(tau, sigma)
        )
        d_out = int(rng.integers(2, 9))
        chan = random_channel(dim, d_out, kraus_count=int(rng.integers(1, 4)), rng=rng)
        moved = trace_distance(
            apply(chan, DensityOperator(rho.matrix, chan.input_layout)),
            apply(chan, DensityOperator(sigma.matrix, chan.input_layout)),
        )
        max_dpi = max(max_dpi, moved - lhs)
    rng = derive_rng(seed, "telescoping")
    kl = KeyLayout(1)
    pair_dim = kl.register_dim
    max_tele = -1.0
    for t in range(telescoping_trials):
        q0 = int(rng.integers(1, 4))
        e_dim = int(rng.integers(1, 3))
        out1 = Layout((("KA1", pair_dim), ("KB1", pair_dim), ("E1", e_dim)))
        e1 = random_channel(q0, out1.dim, kraus_count=2, rng=rng)
        e1 = KrausChannel(e1.kraus_ops, Layout((("Q0", q0),)), out1)
        q1 = int(rng.integers(1, 4))
        f1 = random_channel(out1.dim, q1, kraus_count=2, rng=rng)
        f1 = KrausChannel(f1.kraus_ops, out1, Layout((("Q1", q1),)))
        out2 = Layout((("KA2", pair_dim), ("KB2", pair_dim), ("E2", e_dim)))
        e2 = random_channel(q1, out2.dim, kraus_count=2, rng=rng)
        e2 = KrausChannel(e2.kraus_ops, Layout((("Q1", q1),)), out2)
        k1 = key_replacement_channel(kl, "KA1", "KB1")
        k2 = key_replacement_channel(kl, "KA2", "KB2")
        sigma0 = random_density(q0, rng, name="Q0")
        sigma0 = DensityOperator(sigma0.matrix, Layout((("Q0", q0),)))
        after1 = apply(e1, sigma0)
        replaced1 = apply(k1, after1)
        replaced1 = permute_subsystems(replaced1, after1.layout.names)
        d1 = trace_distance(after1, replaced1)
        real2 = apply(e2, apply(f1, after1))
        ideal_in = apply(e2, apply(f1, replaced1))
        d2 = trace_distance(ideal_in, permute_subsystems(apply(k2, ideal_in), ideal_in.layout.names))
        ideal2 = apply(k2, ideal_in)
        ideal2 = permute_subsystems(ideal2, real2.layout.names)
        lhs = trace_distance(real2, ideal2)
        max_tele = max(max_tele, lhs - d1 - d2)
    return {
        "metric_trials": metric_trials,
        "telescoping_trials": telescoping_trials,
        "max_triangle_violation": max_triangle,
        "max_dpi_violation": max_dpi,
        "max_telescoping_violation": max_tele,
        "tolerance": tol,
        "ok": max(max_triangle, max_dpi, max_tele) <= tol,
    }
