"""Variable-length key registers and the security contract for one instance.

A key register holds a length tag in {0..max_length} together with a key
value of that many bits, encoded as a direct sum of blocks: index(l, k) =
2^l - 1 + k.  Aborting a protocol run is the zero-length outcome.  The ideal
output of one instance is the uniform correlated distribution over equal
keys of the realized length on the Alice/Bob pair; the key-replacement
channel reads the length tag and swaps the actual key pair for that ideal
one, leaving every other register alone.  An instance is secure at level
epsilon when no input (including entangled side information) makes its real
output distinguishable from its key-replaced output by more than epsilon in
trace distance; that worst case is bracketed numerically from both sides.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ChannelError, LayoutError, StateError
from . import qstate
from .qstate import (
    ChannelDifference,
    DEFAULT_DIM_CAP,
    DensityOperator,
    KrausChannel,
    Layout,
    compose,
    diamond_norm_upper_bound,
    extend_channel,
    induced_norm_lower_bound,
    partial_trace,
)
from .cq import (
    ClassicalState,
    StochasticChannel,
    apply_classical,
    marginal,
    permute_classical,
    tv_distance,
)

__all__ = [
    "KeyLayout",
    "InstanceChannel",
    "ideal_key_probs",
    "ideal_key_state",
    "key_replacement_stochastic",
    "key_replacement_channel",
    "reorder_output",
    "tags_agree",
    "security_difference",
    "audit_epsilon",
    "exact_classical_epsilon",
    "eve_guessing_probability",
]


@dataclass(frozen=True)
class KeyLayout:
    """Shape of one variable-length key register."""

    max_length: int = 4

    def __post_init__(self):
        if self.max_length < 0:
            raise ValueError("max_length must be nonnegative")

    @property
    def register_dim(self) -> int:
        """Total dimension: one block of 2^l values per length l."""
        return (1 << (self.max_length + 1)) - 1

    def index(self, length: int, value: int) -> int:
        if not 0 <= length <= self.max_length:
            raise ValueError(f"length {length} outside 0..{self.max_length}")
        if not 0 <= value < (1 << length):
            raise ValueError(f"value {value} outside the length-{length} block")
        return (1 << length) - 1 + value

    def decode(self, index: int) -> tuple[int, int]:
        if not 0 <= index < self.register_dim:
            raise ValueError(f"index {index} outside register of dim {self.register_dim}")
        length = int(index + 1).bit_length() - 1
        return length, index - ((1 << length) - 1)

    def pair_layout(self, ka: str = "KA", kb: str = "KB") -> Layout:
        d = self.register_dim
        return Layout(((ka, d), (kb, d)))


def ideal_key_probs(key_layout: KeyLayout, length: int,
                    ka: str = "KA", kb: str = "KB") -> ClassicalState:
    """Uniform distribution over equal key pairs of the given length."""
    d = key_layout.register_dim
    p = np.zeros(d * d)
    block = 1 << length
    for v in range(block):
        idx = key_layout.index(length, v)
        p[idx * d + idx] = 1.0 / block
    return ClassicalState(p, key_layout.pair_layout(ka, kb))


def ideal_key_state(key_layout: KeyLayout, length: int,
                    ka: str = "KA", kb: str = "KB") -> DensityOperator:
    """Dense form of :func:`ideal_key_probs` (diagonal on the pair)."""
    st = ideal_key_probs(key_layout, length, ka, kb)
    return DensityOperator(np.diag(st.probs.astype(complex)), st.layout)


def _replacement_matrix(key_layout: KeyLayout) -> np.ndarray:
    """Column-stochastic matrix of the key replacement on the pair register.

    Each input pair (a, b) is mapped to the uniform correlated block of
    a's length tag.  On states whose tags agree (every state a protocol
    instance emits) this reproduces the ideal key pair of the realized
    length; the choice of tag for disagreeing inputs merely totalizes the
    map.
    """
    d = key_layout.register_dim
    R = np.zeros((d * d, d * d))
    for a in range(d):
        la, _ = key_layout.decode(a)
        block = 1 << la
        targets = [key_layout.index(la, v) for v in range(block)]
        for b in range(d):
            col = a * d + b
            for t in targets:
                R[t * d + t, col] = 1.0 / block
    return R


def key_replacement_stochastic(key_layout: KeyLayout, ka: str = "KA",
                               kb: str = "KB") -> StochasticChannel:
    pair = key_layout.pair_layout(ka, kb)
    return StochasticChannel(_replacement_matrix(key_layout), pair, pair)


def key_replacement_channel(key_layout: KeyLayout, ka: str = "KA",
                            kb: str = "KB") -> KrausChannel:
    """Kraus form of the key replacement, acting on the (ka, kb) pair only.

    Because the map measures the pair register and reprepares it, applying
    it with identity padding on side registers reproduces the blockwise
    read-and-replace semantics exactly, including on entangled inputs.
    """
    return key_replacement_stochastic(key_layout, ka, kb).to_kraus()


def tags_agree(state, ka: str = "KA", kb: str = "KB",
               key_layout: KeyLayout | None = None, tol: float = 1e-12) -> bool:
    """True when the state has no support on pairs with differing length tags."""
    if isinstance(state, DensityOperator):
        probs = partial_trace(state, (ka, kb)).probabilities()
        d = state.layout.dim_of(ka)
    else:
        m = marginal(state, (ka, kb))
        probs = m.probs
        d = state.layout.dim_of(ka)
    lay = key_layout or _infer_key_layout(d)
    bad = 0.0
    for a in range(d):
        la, _ = lay.decode(a)
        for b in range(d):
            lb, _ = lay.decode(b)
            if la != lb:
                bad += probs[a * d + b]
    return bad <= tol


def _infer_key_layout(register_dim: int) -> KeyLayout:
    n = register_dim + 1
    if n & (n - 1):
        raise LayoutError(f"{register_dim} is not a valid key-register dimension")
    return KeyLayout(n.bit_length() - 2)


# ---------------------------------------------------------------------------
# protocol instances
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InstanceChannel:
    """One protocol instance: a channel emitting a key pair plus side registers.

    ``channel`` may be a :class:`KrausChannel` or, for instances whose
    action is diagonal in the computational basis, a
    :class:`StochasticChannel`.  ``stipulated_epsilon`` is the security level
    claimed for the instance; audits check it from below and replace it when
    the scenario runs in audited mode.
    """

    channel: KrausChannel | StochasticChannel
    key_layout: KeyLayout
    ka: str = "KA"
    kb: str = "KB"
    index: int = 1
    stipulated_epsilon: float | None = None

    def __post_init__(self):
        out = self.channel.output_layout
        d = self.key_layout.register_dim
        for name in (self.ka, self.kb):
            if name not in out.names:
                raise ChannelError(f"instance output lacks key register {name!r}")
            if out.dim_of(name) != d:
                raise ChannelError(
                    f"key register {name!r} has dim {out.dim_of(name)}, expected {d}"
                )
        if self.stipulated_epsilon is not None and not (
                0.0 <= self.stipulated_epsilon <= 1.0):
            raise ValueError("stipulated_epsilon must lie in [0, 1]")

    @property
    def is_classical(self) -> bool:
        return isinstance(self.channel, StochasticChannel)

    def kraus(self) -> KrausChannel:
        if isinstance(self.channel, KrausChannel):
            return self.channel
        return self.channel.to_kraus()

    def replaced_kraus(self) -> KrausChannel:
        """The instance followed by key replacement on its own key pair."""
        ch = self.kraus()
        repl = key_replacement_channel(self.key_layout, self.ka, self.kb)
        return compose(ch, extend_channel(repl, ch.output_layout))

    def replaced_stochastic(self) -> StochasticChannel:
        """Classical form of :meth:`replaced_kraus` (columns replaced one by one)."""
        if not self.is_classical:
            raise ChannelError("instance is not classical")
        ch = self.channel
        repl = key_replacement_stochastic(self.key_layout, self.ka, self.kb)
        cols = []
        out_layout = None
        for i in range(ch.in_dim):
            col = ClassicalState(ch.matrix[:, i], ch.output_layout)
            rep = apply_classical(repl, col)
            out_layout = rep.layout
            cols.append(rep.probs)
        return StochasticChannel(np.stack(cols, axis=1), ch.input_layout, out_layout)


def reorder_output(channel: KrausChannel, order: Sequence[str]) -> KrausChannel:
    """Compose a channel with the unitary that permutes its output registers."""
    if tuple(order) == channel.output_layout.names:
        return channel
    perm = qstate._permutation_matrix(channel.output_layout, order)
    ops = tuple(perm @ K for K in channel.kraus_ops)
    return KrausChannel(ops, channel.input_layout,
                        channel.output_layout.extract(order))


def security_difference(instance: InstanceChannel) -> ChannelDifference:
    """The pair (instance, key-replaced instance) compared on aligned layouts."""
    ch = instance.kraus()
    repl = instance.replaced_kraus()
    aligned = reorder_output(ch, repl.output_layout.names)
    return ChannelDifference(aligned, repl)


def audit_epsilon(instance: InstanceChannel, samples: int = 400, seed: int = 0,
                  solver: str = "CLARABEL",
                  dim_cap: int = DEFAULT_DIM_CAP) -> tuple[float, float]:
    """Bracket the instance's worst-case security level.

    Returns ``(lower, upper)``: the lower bound from Haar-sampled inputs with
    ancilla, the upper bound from the convex norm program.  ``lower <= upper``
    up to solver accuracy, and the true worst case lies in between.
    """
    delta = security_difference(instance)
    lower = induced_norm_lower_bound(delta, samples, seed)
    upper = diamond_norm_upper_bound(delta, solver=solver, dim_cap=dim_cap)
    return lower, upper


def exact_classical_epsilon(instance: InstanceChannel) -> float:
    """Exact worst-case security level of a classical instance.

    A channel that measures its input in the computational basis before
    producing output attains its worst case on a basis-state input, with no
    help from ancillas, so the maximum column-wise total variation between
    the instance and its key-replaced form is the exact stabilized value.
    """
    if not instance.is_classical:
        raise ChannelError("exact audit requires a classical instance channel")
    ch = instance.channel
    repl = instance.replaced_stochastic()
    worst = 0.0
    for i in range(ch.in_dim):
        a = ClassicalState(ch.matrix[:, i], ch.output_layout)
        b = ClassicalState(repl.matrix[:, i], repl.output_layout)
        b = permute_classical(b, a.layout.names)
        worst = max(worst, tv_distance(a, b))
    return worst


# ---------------------------------------------------------------------------
# adversarial guessing
# ---------------------------------------------------------------------------

def _partner_name(key: str) -> str | None:
    if "KA" in key:
        return key.replace("KA", "KB", 1)
    return None


def eve_guessing_probability(state, key: str = "KA",
                             eve: Sequence[str] | None = None) -> float:
    """Optimal probability of guessing the key register from Eve's registers.

    ``eve`` defaults to every register except the key and its partner
    (``KB`` with the same suffix).  The state must be classical on the key
    register.  For classical side information the maximum-likelihood decision
    is exact; for a binary key with quantum side information the optimal
    two-hypothesis measurement has a closed form; any other quantum case is
    solved as a small semidefinite program over the measurement operators.
    """
    layout = state.layout
    if eve is None:
        partner = _partner_name(key)
        eve = tuple(n for n in layout.names if n != key and n != partner)
    eve = tuple(eve)
    if key in eve:
        raise LayoutError("the key register cannot be part of Eve's registers")

    if isinstance(state, ClassicalState):
        joint = marginal(state, (key,) + eve)
        d_key = layout.dim_of(key)
        table = joint.probs.reshape(d_key, -1)
        return float(np.sum(np.max(table, axis=0)))

    rho = partial_trace(state, (key,) + eve)
    d_key = layout.dim_of(key)
    d_eve = rho.dim // d_key
    blocks = rho.matrix.reshape(d_key, d_eve, d_key, d_eve)
    off = 0.0
    for a in range(d_key):
        for b in range(d_key):
            if a != b:
                off = max(off, float(np.max(np.abs(blocks[a, :, b, :]))))
    if off > 1e-9:
        raise StateError("state is not classical on the key register")
    conds = [np.asarray(blocks[k, :, k, :]) for k in range(d_key)]

    diag_defect = max(
        float(np.max(np.abs(B - np.diag(np.diag(B))))) if B.size else 0.0
        for B in conds
    )
    if diag_defect <= 1e-12:
        table = np.stack([np.real(np.diag(B)) for B in conds])
        return float(np.sum(np.max(table, axis=0)))

    live = [B for B in conds if B.trace().real > 1e-15]
    if len(live) <= 1:
        return 1.0 if live else 0.0
    if len(live) == 2:
        evals = np.linalg.eigvalsh(live[0] - live[1])
        t0, t1 = live[0].trace().real, live[1].trace().real
        return float(0.5 * (t0 + t1 + np.sum(np.abs(evals))))

    import cvxpy as cp

    povm = [cp.Variable((d_eve, d_eve), hermitian=True) for _ in conds]
    constraints = [M >> 0 for M in povm]
    constraints.append(sum(povm) == np.eye(d_eve))
    objective = cp.Maximize(
        cp.real(sum(cp.trace(M @ B) for M, B in zip(povm, conds)))
    )
    problem = cp.Problem(objective, constraints)
    problem.solve(solver="CLARABEL")
    if problem.status != "optimal":
        raise StateError(f"guessing program did not converge: {problem.status}")
    return float(problem.value)
