"""Probability-vector engine for fully classical states and channels.

Protocol instances whose states stay diagonal in the computational basis can
be tracked exactly as probability vectors over labelled registers.  This is
what makes large key registers tractable: a 16k-outcome joint distribution is
a vector, not a dense matrix.  The semantics mirror the dense engine in
:mod:`qkdcert.qstate` (same layouts, same padding rules), and converting a
classical object to its dense counterpart commutes with every operation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ChannelError, DimensionCapError, LayoutError, StateError
from .qstate import (
    DensityOperator,
    KrausChannel,
    Layout,
    TOL_CPTP,
    TOL_TRACE,
    classical_channel,
)

__all__ = [
    "CLASSICAL_DIM_CAP",
    "ClassicalState",
    "StochasticChannel",
    "tv_distance",
    "apply_classical",
    "compose_stochastic",
    "tensor_classical",
    "permute_classical",
    "marginal",
    "point_mass",
    "identity_stochastic",
    "constant_stochastic",
    "to_density",
    "from_density",
]

# Probability vectors are cheap; the cap only guards against runaway chains.
CLASSICAL_DIM_CAP = 1 << 21


def _as_layout(obj) -> Layout:
    return obj if isinstance(obj, Layout) else Layout(tuple(obj))


@dataclass(frozen=True)
class ClassicalState:
    """Probability distribution over the computational basis of a layout."""

    probs: np.ndarray
    layout: Layout

    def __init__(self, probs, layout):
        layout = _as_layout(layout)
        p = np.asarray(probs, dtype=float).reshape(-1)
        if p.shape != (layout.dim,):
            raise StateError(f"probability vector length {p.size} != layout dim {layout.dim}")
        if np.any(p < -1e-12):
            raise StateError(f"negative probability {p.min():.3e}")
        if abs(p.sum() - 1.0) > TOL_TRACE:
            raise StateError(f"probabilities sum to {p.sum()!r}, not 1")
        p = np.clip(p, 0.0, None)
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "layout", layout)

    @property
    def dim(self) -> int:
        return self.layout.dim


@dataclass(frozen=True)
class StochasticChannel:
    """Column-stochastic map in the computational basis."""

    matrix: np.ndarray
    input_layout: Layout
    output_layout: Layout

    def __init__(self, matrix, input_layout, output_layout):
        input_layout = _as_layout(input_layout)
        output_layout = _as_layout(output_layout)
        P = np.asarray(matrix, dtype=float)
        if P.shape != (output_layout.dim, input_layout.dim):
            raise ChannelError(
                f"stochastic matrix shape {P.shape} != "
                f"({output_layout.dim}, {input_layout.dim})"
            )
        if np.any(P < -1e-12):
            raise ChannelError("stochastic matrix has negative entries")
        defect = np.max(np.abs(P.sum(axis=0) - 1.0))
        if defect > TOL_CPTP:
            raise ChannelError(f"column sums off by {defect:.3e}")
        P = np.clip(P, 0.0, None)
        P.setflags(write=False)
        object.__setattr__(self, "matrix", P)
        object.__setattr__(self, "input_layout", input_layout)
        object.__setattr__(self, "output_layout", output_layout)

    @property
    def in_dim(self) -> int:
        return self.input_layout.dim

    @property
    def out_dim(self) -> int:
        return self.output_layout.dim

    def to_kraus(self) -> KrausChannel:
        return classical_channel(self.matrix, self.input_layout, self.output_layout)


def tv_distance(a: ClassicalState, b: ClassicalState) -> float:
    """Total variation distance; equals the trace distance of the diagonal states."""
    if a.layout != b.layout:
        raise LayoutError(f"layout mismatch: {a.layout} vs {b.layout}")
    return float(0.5 * np.sum(np.abs(a.probs - b.probs)))


def permute_classical(state: ClassicalState, order: Sequence[str]) -> ClassicalState:
    if tuple(order) == state.layout.names:
        return state
    if sorted(order) != sorted(state.layout.names):
        raise LayoutError(f"{order!r} is not a permutation of {state.layout.names}")
    perm = [state.layout.position(n) for n in order]
    arr = state.probs.reshape(state.layout.dims).transpose(perm).reshape(-1)
    return ClassicalState(arr, state.layout.extract(order))


def marginal(state: ClassicalState, keep: Sequence[str]) -> ClassicalState:
    keep = tuple(keep)
    drop = tuple(n for n in state.layout.names if n not in keep)
    for n in keep:
        state.layout.position(n)
    if not drop:
        return permute_classical(state, keep)
    st = permute_classical(state, keep + drop)
    d_keep = state.layout.extract(keep).dim
    summed = st.probs.reshape(d_keep, -1).sum(axis=1)
    return ClassicalState(summed, state.layout.extract(keep))


def apply_classical(channel: StochasticChannel, state: ClassicalState,
                    dim_cap: int = CLASSICAL_DIM_CAP) -> ClassicalState:
    """Apply a stochastic channel to named registers, identity on the rest."""
    ch_in = channel.input_layout
    for n, d in ch_in.parts:
        if state.layout.dim_of(n) != d:
            raise LayoutError(
                f"register {n!r}: state dim {state.layout.dim_of(n)} != channel dim {d}"
            )
    rest = tuple(n for n in state.layout.names if n not in ch_in.names)
    clash = set(channel.output_layout.names) & set(rest)
    if clash:
        raise LayoutError(f"channel output names collide with passthrough registers: {clash}")
    out_layout = channel.output_layout + state.layout.extract(rest)
    if out_layout.dim > dim_cap:
        raise DimensionCapError(
            f"classical state would reach dimension {out_layout.dim} (cap {dim_cap})"
        )
    st = permute_classical(state, ch_in.names + rest)
    block = st.probs.reshape(ch_in.dim, -1)
    out = channel.matrix @ block
    return ClassicalState(out.reshape(-1), out_layout)


def compose_stochastic(first: StochasticChannel, second: StochasticChannel) -> StochasticChannel:
    if first.output_layout != second.input_layout:
        raise LayoutError(f"cannot chain {first.output_layout} into {second.input_layout}")
    return StochasticChannel(second.matrix @ first.matrix,
                             first.input_layout, second.output_layout)


def tensor_classical(a, b):
    """Tensor two classical states or two stochastic channels."""
    if isinstance(a, ClassicalState) and isinstance(b, ClassicalState):
        return ClassicalState(np.kron(a.probs, b.probs), a.layout + b.layout)
    if isinstance(a, StochasticChannel) and isinstance(b, StochasticChannel):
        return StochasticChannel(np.kron(a.matrix, b.matrix),
                                 a.input_layout + b.input_layout,
                                 a.output_layout + b.output_layout)
    raise TypeError("tensor_classical expects two states or two channels")


def point_mass(layout, index: int) -> ClassicalState:
    layout = _as_layout(layout)
    p = np.zeros(layout.dim)
    p[index] = 1.0
    return ClassicalState(p, layout)


def identity_stochastic(layout) -> StochasticChannel:
    layout = _as_layout(layout)
    return StochasticChannel(np.eye(layout.dim), layout, layout)


def constant_stochastic(output: ClassicalState, input_layout) -> StochasticChannel:
    input_layout = _as_layout(input_layout)
    P = np.tile(output.probs.reshape(-1, 1), (1, input_layout.dim))
    return StochasticChannel(P, input_layout, output.layout)


def to_density(state: ClassicalState) -> DensityOperator:
    return DensityOperator(np.diag(state.probs.astype(complex)), state.layout)


def from_density(rho: DensityOperator, tol: float = 1e-9) -> ClassicalState:
    """Extract the diagonal of a classical (decohered) density operator."""
    if not rho.is_classical(tol):
        raise StateError("density operator has off-diagonal terms; not classical")
    return ClassicalState(rho.probabilities(), rho.layout)
