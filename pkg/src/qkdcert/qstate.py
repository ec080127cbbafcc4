"""Finite-dimensional density operators and channels on labelled subsystems.

States are exact dense matrices tagged with an ordered list of named
subsystems, so that channels acting on a subset of registers can be applied
with implicit identity padding and outputs can be addressed by name.
Distinguishability is measured by the trace distance; channel
distinguishability is bracketed from below by sampling the stabilized induced
norm and from above by a semidefinite program over Choi matrices.
"""

from __future__ import annotations

import warnings
import zlib
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ChannelError, DimensionCapError, LayoutError, StateError

__all__ = [
    "TOL_HERMITIAN",
    "TOL_TRACE",
    "TOL_PSD",
    "TOL_CPTP",
    "DEFAULT_DIM_CAP",
    "Layout",
    "DensityOperator",
    "KrausChannel",
    "ChannelDifference",
    "trace_distance",
    "apply",
    "compose",
    "tensor",
    "tensor_channels",
    "partial_trace",
    "permute_subsystems",
    "extend_channel",
    "identity_channel",
    "constant_channel",
    "trace_out_channel",
    "classical_channel",
    "basis_state",
    "choi_matrix",
    "derive_rng",
    "haar_random_pure",
    "random_density",
    "random_channel",
    "induced_norm_lower_bound",
    "diamond_norm_upper_bound",
]

# Validation tolerances for state and channel constructors.
TOL_HERMITIAN = 1e-9
TOL_TRACE = 1e-9
TOL_PSD = 1e-9
TOL_CPTP = 1e-9

# Operations that grow the live state space refuse to exceed this total
# dimension unless the caller raises the cap explicitly.
DEFAULT_DIM_CAP = 64


# ---------------------------------------------------------------------------
# layouts
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Layout:
    """Ordered collection of named subsystems with their dimensions."""

    parts: tuple[tuple[str, int], ...]

    def __init__(self, parts: Iterable[tuple[str, int]]):
        normalized = tuple((str(n), int(d)) for n, d in parts)
        names = [n for n, _ in normalized]
        if len(set(names)) != len(names):
            raise LayoutError(f"duplicate subsystem names in layout: {names}")
        for n, d in normalized:
            if not n:
                raise LayoutError("empty subsystem name")
            if d < 1:
                raise LayoutError(f"subsystem {n!r} has non-positive dimension {d}")
        object.__setattr__(self, "parts", normalized)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.parts)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(d for _, d in self.parts)

    @property
    def dim(self) -> int:
        out = 1
        for _, d in self.parts:
            out *= d
        return out

    def position(self, name: str) -> int:
        for i, (n, _) in enumerate(self.parts):
            if n == name:
                return i
        raise LayoutError(f"no subsystem named {name!r} in layout {self.names}")

    def dim_of(self, name: str) -> int:
        return self.parts[self.position(name)][1]

    def extract(self, names: Sequence[str]) -> "Layout":
        return Layout(tuple(self.parts[self.position(n)] for n in names))

    def drop(self, names: Sequence[str]) -> "Layout":
        gone = set(names)
        for n in gone:
            self.position(n)  # raises on unknown names
        return Layout(tuple(p for p in self.parts if p[0] not in gone))

    def __add__(self, other: "Layout") -> "Layout":
        return Layout(self.parts + other.parts)

    def __repr__(self) -> str:  # pragma: no cover - cosmetic
        inner = ", ".join(f"{n}:{d}" for n, d in self.parts)
        return f"Layout({inner})"


def _as_layout(obj) -> Layout:
    if isinstance(obj, Layout):
        return obj
    return Layout(tuple(obj))


# ---------------------------------------------------------------------------
# states
# ---------------------------------------------------------------------------

def _check_density_matrix(mat: np.ndarray, dim: int) -> np.ndarray:
    mat = np.asarray(mat, dtype=complex)
    if mat.shape != (dim, dim):
        raise StateError(f"matrix shape {mat.shape} does not match layout dimension {dim}")
    herm_defect = np.max(np.abs(mat - mat.conj().T)) if dim else 0.0
    if herm_defect > TOL_HERMITIAN:
        raise StateError(f"matrix is not Hermitian (defect {herm_defect:.3e})")
    tr = mat.trace()
    if abs(tr - 1.0) > TOL_TRACE:
        raise StateError(f"matrix trace {tr} is not 1 within {TOL_TRACE:.0e}")
    # Symmetrize before the eigenvalue check so roundoff from channel
    # application does not masquerade as a positivity violation.
    sym = 0.5 * (mat + mat.conj().T)
    eigmin = float(np.linalg.eigvalsh(sym)[0])
    if eigmin < -TOL_PSD:
        raise StateError(f"matrix has negative eigenvalue {eigmin:.3e}")
    sym.setflags(write=False)
    return sym


@dataclass(frozen=True)
class DensityOperator:
    """Density matrix together with the layout naming its subsystems."""

    matrix: np.ndarray
    layout: Layout

    def __init__(self, matrix: np.ndarray, layout):
        layout = _as_layout(layout)
        object.__setattr__(self, "layout", layout)
        object.__setattr__(self, "matrix", _check_density_matrix(matrix, layout.dim))

    @property
    def dim(self) -> int:
        return self.layout.dim

    def probabilities(self) -> np.ndarray:
        """Diagonal in the computational basis (real part)."""
        return np.real(np.diag(self.matrix)).copy()

    def is_classical(self, tol: float = TOL_HERMITIAN) -> bool:
        off = self.matrix - np.diag(np.diag(self.matrix))
        return bool(np.max(np.abs(off)) <= tol) if self.dim else True


def basis_state(layout, index: int) -> DensityOperator:
    """Computational-basis state |index><index| on the given layout."""
    layout = _as_layout(layout)
    mat = np.zeros((layout.dim, layout.dim), dtype=complex)
    mat[index, index] = 1.0
    return DensityOperator(mat, layout)


def trace_distance(a: DensityOperator, b: DensityOperator) -> float:
    """Half the trace norm of (a - b).

    Computed from the eigenvalues of the Hermitian difference, which is
    numerically stabler than a singular-value route for nearly-equal states.
    """
    if a.layout != b.layout:
        raise LayoutError(f"layout mismatch: {a.layout} vs {b.layout}")
    diff = a.matrix - b.matrix
    evals = np.linalg.eigvalsh(0.5 * (diff + diff.conj().T))
    return float(0.5 * np.sum(np.abs(evals)))


def permute_subsystems(rho: DensityOperator, order: Sequence[str]) -> DensityOperator:
    """Reorder the subsystems of ``rho`` into ``order`` (a permutation of names)."""
    if tuple(order) == rho.layout.names:
        return rho
    if sorted(order) != sorted(rho.layout.names):
        raise LayoutError(f"{order!r} is not a permutation of {rho.layout.names}")
    perm = [rho.layout.position(n) for n in order]
    dims = rho.layout.dims
    k = len(dims)
    tensor_form = rho.matrix.reshape(dims + dims)
    axes = perm + [p + k for p in perm]
    new_dims = tuple(dims[p] for p in perm)
    new_dim = int(np.prod(new_dims, dtype=np.int64)) if new_dims else 1
    mat = tensor_form.transpose(axes).reshape(new_dim, new_dim)
    return DensityOperator(mat, rho.layout.extract(order))


def partial_trace(rho: DensityOperator, keep: Sequence[str]) -> DensityOperator:
    """Trace out every subsystem not listed in ``keep`` (order preserved)."""
    keep = tuple(keep)
    drop = tuple(n for n in rho.layout.names if n not in keep)
    for n in keep:
        rho.layout.position(n)
    if not drop:
        return permute_subsystems(rho, keep)
    rho_p = permute_subsystems(rho, keep + drop)
    d_keep = rho.layout.extract(keep).dim
    d_drop = rho.layout.extract(drop).dim
    tensor_form = rho_p.matrix.reshape(d_keep, d_drop, d_keep, d_drop)
    mat = np.einsum("abcb->ac", tensor_form)
    return DensityOperator(mat, rho.layout.extract(keep))


def tensor(a: DensityOperator, b: DensityOperator) -> DensityOperator:
    return DensityOperator(np.kron(a.matrix, b.matrix), a.layout + b.layout)


# ---------------------------------------------------------------------------
# channels
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KrausChannel:
    """Completely positive trace-preserving map in Kraus form."""

    kraus_ops: tuple[np.ndarray, ...]
    input_layout: Layout
    output_layout: Layout

    def __init__(self, kraus_ops, input_layout, output_layout):
        input_layout = _as_layout(input_layout)
        output_layout = _as_layout(output_layout)
        d_in, d_out = input_layout.dim, output_layout.dim
        ops = []
        for K in kraus_ops:
            K = np.asarray(K, dtype=complex)
            if K.shape != (d_out, d_in):
                raise ChannelError(
                    f"Kraus operator shape {K.shape} does not match ({d_out}, {d_in})"
                )
            K = K.copy()
            K.setflags(write=False)
            ops.append(K)
        if not ops:
            raise ChannelError("a channel needs at least one Kraus operator")
        total = sum(K.conj().T @ K for K in ops)
        defect = np.max(np.abs(total - np.eye(d_in)))
        if defect > TOL_CPTP:
            raise ChannelError(f"Kraus completeness defect {defect:.3e} exceeds {TOL_CPTP:.0e}")
        object.__setattr__(self, "kraus_ops", tuple(ops))
        object.__setattr__(self, "input_layout", input_layout)
        object.__setattr__(self, "output_layout", output_layout)

    @property
    def in_dim(self) -> int:
        return self.input_layout.dim

    @property
    def out_dim(self) -> int:
        return self.output_layout.dim


def apply(channel: KrausChannel, rho: DensityOperator,
          dim_cap: int | None = DEFAULT_DIM_CAP) -> DensityOperator:
    """Apply ``channel`` to the named subsystems of ``rho``.

    Subsystems of ``rho`` not listed in the channel's input layout are passed
    through unchanged (identity padding).  The output layout is the channel's
    output followed by the untouched subsystems in their original order.
    """
    ch_in = channel.input_layout
    for n, d in ch_in.parts:
        if rho.layout.dim_of(n) != d:
            raise LayoutError(
                f"subsystem {n!r}: state dim {rho.layout.dim_of(n)} != channel dim {d}"
            )
    rest = tuple(n for n in rho.layout.names if n not in ch_in.names)
    clash = set(channel.output_layout.names) & set(rest)
    if clash:
        raise LayoutError(f"channel output names collide with passthrough subsystems: {clash}")
    out_layout = channel.output_layout + rho.layout.extract(rest)
    if dim_cap is not None and out_layout.dim > dim_cap:
        raise DimensionCapError(
            f"apply would produce a {out_layout.dim}-dimensional state "
            f"(cap {dim_cap}); raise dim_cap explicitly if intended"
        )
    rho_p = permute_subsystems(rho, ch_in.names + rest)
    d_in = ch_in.dim
    d_rest = rho.layout.extract(rest).dim
    d_out = channel.out_dim
    block = rho_p.matrix.reshape(d_in, d_rest, d_in, d_rest)
    ops = np.stack(channel.kraus_ops)
    # out[o,b,p,d] = sum_k sum_{a,c} K[k,o,a] rho[a,b,c,d] conj(K)[k,p,c]
    out = np.einsum("koa,abcd,kpc->obpd", ops, block, ops.conj(), optimize=True)
    return DensityOperator(out.reshape(d_out * d_rest, d_out * d_rest), out_layout)


def compose(first: KrausChannel, second: KrausChannel) -> KrausChannel:
    """Sequential composition: apply ``first`` then ``second``.

    The output layout of ``first`` must equal the input layout of ``second``
    exactly; use :func:`extend_channel` to pad a channel with identities first.
    """
    if first.output_layout != second.input_layout:
        raise LayoutError(
            f"cannot chain {first.output_layout} into {second.input_layout}"
        )
    ops = tuple(K2 @ K1 for K1 in first.kraus_ops for K2 in second.kraus_ops)
    return KrausChannel(ops, first.input_layout, second.output_layout)


def tensor_channels(a: KrausChannel, b: KrausChannel) -> KrausChannel:
    ops = tuple(np.kron(Ka, Kb) for Ka in a.kraus_ops for Kb in b.kraus_ops)
    return KrausChannel(ops, a.input_layout + b.input_layout,
                        a.output_layout + b.output_layout)


def extend_channel(channel: KrausChannel, target_layout) -> KrausChannel:
    """Pad ``channel`` with identities so it acts on all of ``target_layout``.

    The target must contain every input subsystem of the channel; the padded
    channel maps the target to the channel's output followed by the untouched
    subsystems, mirroring :func:`apply`.
    """
    target = _as_layout(target_layout)
    ch_in = channel.input_layout
    for n, d in ch_in.parts:
        if target.dim_of(n) != d:
            raise LayoutError(f"subsystem {n!r} has dim {target.dim_of(n)}, expected {d}")
    rest = tuple(n for n in target.names if n not in ch_in.names)
    rest_layout = target.extract(rest)
    in_order = ch_in.names + rest
    perm = _permutation_matrix(target, in_order)
    eye = np.eye(rest_layout.dim)
    ops = tuple(np.kron(K, eye) @ perm for K in channel.kraus_ops)
    return KrausChannel(ops, target, channel.output_layout + rest_layout)


def _permutation_matrix(layout: Layout, order: Sequence[str]) -> np.ndarray:
    """Unitary reordering the computational basis of ``layout`` into ``order``."""
    if tuple(order) == layout.names:
        return np.eye(layout.dim)
    dims = layout.dims
    k = len(dims)
    perm = [layout.position(n) for n in order]
    ident = np.eye(layout.dim).reshape(dims + dims)
    axes = perm + list(range(k, 2 * k))
    return ident.transpose(axes).reshape(layout.dim, layout.dim)


def identity_channel(layout) -> KrausChannel:
    layout = _as_layout(layout)
    return KrausChannel((np.eye(layout.dim),), layout, layout)


def constant_channel(output: DensityOperator, input_layout) -> KrausChannel:
    """Channel that discards its input and prepares ``output``."""
    input_layout = _as_layout(input_layout)
    evals, evecs = np.linalg.eigh(output.matrix)
    ops = []
    for lam, vec in zip(evals, evecs.T):
        if lam < TOL_PSD:
            continue
        for i in range(input_layout.dim):
            K = np.zeros((output.dim, input_layout.dim), dtype=complex)
            K[:, i] = np.sqrt(max(lam, 0.0)) * vec
            ops.append(K)
    return KrausChannel(tuple(ops), input_layout, output.layout)


def trace_out_channel(layout, drop: Sequence[str]) -> KrausChannel:
    """Channel tracing out the named subsystems of ``layout``."""
    layout = _as_layout(layout)
    drop = tuple(drop)
    keep = tuple(n for n in layout.names if n not in drop)
    for n in drop:
        layout.position(n)
    keep_layout = layout.extract(keep)
    drop_layout = layout.extract(drop)
    perm = _permutation_matrix(layout, keep + drop)
    ops = []
    eye = np.eye(keep_layout.dim)
    for b in range(drop_layout.dim):
        bra = np.zeros((1, drop_layout.dim))
        bra[0, b] = 1.0
        ops.append(np.kron(eye, bra) @ perm)
    return KrausChannel(tuple(ops), layout, keep_layout)


def classical_channel(matrix: np.ndarray, input_layout, output_layout) -> KrausChannel:
    """Kraus form of a column-stochastic map acting in the computational basis."""
    input_layout = _as_layout(input_layout)
    output_layout = _as_layout(output_layout)
    P = np.asarray(matrix, dtype=float)
    if P.shape != (output_layout.dim, input_layout.dim):
        raise ChannelError(
            f"stochastic matrix shape {P.shape} does not match "
            f"({output_layout.dim}, {input_layout.dim})"
        )
    if np.any(P < -1e-15):
        raise ChannelError("stochastic matrix has negative entries")
    col_defect = np.max(np.abs(P.sum(axis=0) - 1.0))
    if col_defect > TOL_CPTP:
        raise ChannelError(f"stochastic matrix columns sum to 1 +/- {col_defect:.3e}")
    ops = []
    rows, cols = np.nonzero(P > 0)
    for o, i in zip(rows, cols):
        K = np.zeros((output_layout.dim, input_layout.dim), dtype=complex)
        K[o, i] = np.sqrt(P[o, i])
        ops.append(K)
    if not ops:
        raise ChannelError("stochastic matrix is identically zero")
    return KrausChannel(tuple(ops), input_layout, output_layout)


# ---------------------------------------------------------------------------
# channel differences and norms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChannelDifference:
    """Pair of channels with identical wiring, compared as (minuend - subtrahend)."""

    minuend: KrausChannel
    subtrahend: KrausChannel

    def __post_init__(self):
        if self.minuend.input_layout != self.subtrahend.input_layout:
            raise LayoutError("channel difference: input layouts differ")
        if self.minuend.output_layout != self.subtrahend.output_layout:
            raise LayoutError("channel difference: output layouts differ")

    @property
    def in_dim(self) -> int:
        return self.minuend.in_dim

    @property
    def out_dim(self) -> int:
        return self.minuend.out_dim


def choi_matrix(channel: KrausChannel) -> np.ndarray:
    """Choi matrix on input (x) output, J = sum_ij |i><j| (x) Phi(|i><j|)."""
    d_in, d_out = channel.in_dim, channel.out_dim
    J = np.zeros((d_in * d_out, d_in * d_out), dtype=complex)
    for K in channel.kraus_ops:
        v = np.reshape(K.T, -1)  # sum_i |i> (x) K|i>
        J += np.outer(v, v.conj())
    return J


# ---------------------------------------------------------------------------
# randomness
# ---------------------------------------------------------------------------

def derive_rng(master_seed: int, *stream: int | str) -> np.random.Generator:
    """Independent generator for a (seed, index...) tuple.

    Trials seeded this way are reproducible regardless of evaluation order,
    so batch runs can be resumed or parallelized without changing results.
    String components are allowed as readable stream labels and are hashed
    with crc32, which is stable across platforms and interpreter runs.
    """
    coords = tuple(
        zlib.crc32(s.encode()) if isinstance(s, str) else int(s) for s in stream
    )
    return np.random.default_rng((int(master_seed),) + coords)


def haar_random_pure(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed pure state vector of the given dimension."""
    v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return v / np.linalg.norm(v)


def random_density(dim: int, rng: np.random.Generator, name: str = "S") -> DensityOperator:
    """Full-rank mixed state from the Ginibre ensemble."""
    G = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    mat = G @ G.conj().T
    return DensityOperator(mat / mat.trace(), Layout(((name, dim),)))


def random_channel(d_in: int, d_out: int, kraus_count: int, rng: np.random.Generator,
                   in_name: str = "Q", out_name: str = "R") -> KrausChannel:
    """Random CPTP map sampled from a Haar isometry into ``kraus_count`` branches.

    ``kraus_count`` is raised to ``ceil(d_in / d_out)`` when necessary — below
    that no isometry into the branch space exists.
    """
    kraus_count = max(kraus_count, -(-d_in // d_out))
    G = rng.normal(size=(d_out * kraus_count, d_in)) + \
        1j * rng.normal(size=(d_out * kraus_count, d_in))
    V, _ = np.linalg.qr(G)
    ops = tuple(V[m * d_out:(m + 1) * d_out, :] for m in range(kraus_count))
    return KrausChannel(ops, Layout(((in_name, d_in),)),
                        Layout(((out_name, d_out),)))


# ---------------------------------------------------------------------------
# norm bracketing
# ---------------------------------------------------------------------------

def _apply_to_pure_extended(channel: KrausChannel, psi_block: np.ndarray) -> np.ndarray:
    """Output of (channel (x) id) on |psi><psi| with psi reshaped to (d_in, d_anc)."""
    d_anc = psi_block.shape[1]
    d_out = channel.out_dim
    out = np.zeros((d_out * d_anc, d_out * d_anc), dtype=complex)
    for K in channel.kraus_ops:
        w = (K @ psi_block).reshape(-1)
        out += np.outer(w, w.conj())
    return out


def induced_norm_lower_bound(delta: ChannelDifference, samples: int, seed: int) -> float:
    """Lower bound on the worst-case output trace distance of a channel pair.

    Draws Haar-random pure states on the input space extended by an
    equal-dimension ancilla, pushes them through both channels, and returns
    the largest observed trace distance.  Deterministic in ``seed``.
    """
    if samples < 1:
        raise ValueError("samples must be positive")
    rng = derive_rng(seed)
    d_in = delta.in_dim
    best = 0.0
    for _ in range(samples):
        psi = haar_random_pure(d_in * d_in, rng).reshape(d_in, d_in)
        a = _apply_to_pure_extended(delta.minuend, psi)
        b = _apply_to_pure_extended(delta.subtrahend, psi)
        evals = np.linalg.eigvalsh(a - b)
        best = max(best, 0.5 * float(np.sum(np.abs(evals))))
    return best


def diamond_norm_upper_bound(delta: ChannelDifference, solver: str = "CLARABEL",
                             dim_cap: int = DEFAULT_DIM_CAP) -> float:
    """Half the completely bounded trace norm of a trace-preserving difference.

    Solves the convex program

        maximize   Re <J(delta), W>
        subject to 0 <= W <= rho (x) I_out,  rho a density matrix,

    whose optimum equals half the stabilized worst-case norm whenever both
    channels are trace preserving (the program is exact for such differences,
    which is the only case audited here).  The value is returned to solver
    accuracy; callers needing a strict one-sided guarantee should add their
    own margin.
    """
    import cvxpy as cp

    d_in, d_out = delta.in_dim, delta.out_dim
    n = d_in * d_out
    if n > dim_cap:
        raise DimensionCapError(
            f"Choi dimension {n} exceeds the cap {dim_cap} for the norm program"
        )
    J = choi_matrix(delta.minuend) - choi_matrix(delta.subtrahend)
    # Trace preservation of both channels makes Tr_out(J) vanish; the program
    # below is only exact in that case.
    tp_defect = np.max(np.abs(
        np.trace(J.reshape(d_in, d_out, d_in, d_out), axis1=1, axis2=3)
    ))
    if tp_defect > 1e-7:
        raise ChannelError(
            "diamond norm program requires a difference of trace-preserving maps"
        )
    if np.max(np.abs(J)) <= 1e-12:
        return 0.0
    rho = cp.Variable((d_in, d_in), hermitian=True)
    W = cp.Variable((n, n), hermitian=True)
    with warnings.catch_warnings():
        # cvxpy's kron of a variable with a constant expands through a nested
        # list internally and warns about its own construction; harmless here.
        warnings.simplefilter("ignore", UserWarning)
        constraints = [
            W >> 0,
            rho >> 0,
            cp.trace(rho) == 1,
            cp.kron(rho, cp.Constant(np.eye(d_out))) - W >> 0,
        ]
        problem = cp.Problem(cp.Maximize(cp.real(cp.trace(J.conj().T @ W))), constraints)
        problem.solve(solver=solver)
        if problem.status == "optimal_inaccurate":
            # borderline instances occasionally stall the default solver just
            # short of its tolerance; retry at high accuracy before giving up
            problem.solve(solver="SCS", eps=1e-9, max_iters=100_000)
    if problem.status != "optimal":
        raise ChannelError(f"norm program did not converge: status {problem.status}")
    return float(max(problem.value, 0.0))
