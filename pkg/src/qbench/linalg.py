"""Dense complex linear algebra over tensor-product spaces.

Operators carry an explicit list of subsystem dimensions; the leftmost
subsystem is the slowest-varying index (plain Kronecker order). Nothing is
ever reordered implicitly — callers that need a different system order use
:func:`permute_systems`.

All values are immutable after construction and every function is pure.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    ContractError,
    DimensionError,
    SpectralMismatchError,
)

# Default tolerances, shared repo-wide.
HERM_TOL = 1e-9        # relative Frobenius hermiticity tolerance
RANK_TOL = 1e-12       # eigenvalues below RANK_TOL * lambda_max count as zero
EIG_RESIDUAL_TOL = 1e-10


def _as_complex(a) -> np.ndarray:
    arr = np.asarray(a, dtype=complex)
    if not np.all(np.isfinite(arr.real)) or not np.all(np.isfinite(arr.imag)):
        raise ContractError("matrix entries must be finite (no NaN/Inf)")
    return arr


@dataclass(frozen=True)
class Operator:
    """A dense complex square matrix on a tensor product of subsystems.

    Parameters
    ----------
    matrix:
        Square complex matrix of side ``prod(dims)``.
    dims:
        Ordered subsystem dimensions, leftmost slowest-varying.
    """

    matrix: np.ndarray
    dims: tuple[int, ...]

    def __init__(self, matrix, dims: Sequence[int]):
        mat = _as_complex(matrix)
        dims = tuple(int(d) for d in dims)
        if any(d <= 0 for d in dims):
            raise DimensionError(f"subsystem dimensions must be positive, got {dims}")
        side = int(np.prod(dims))
        if mat.ndim != 2 or mat.shape != (side, side):
            raise DimensionError(
                f"matrix shape {mat.shape} does not match dims {dims} (side {side})"
            )
        mat = mat.copy()
        mat.setflags(write=False)
        object.__setattr__(self, "matrix", mat)
        object.__setattr__(self, "dims", dims)

    @property
    def side(self) -> int:
        return self.matrix.shape[0]

    def is_hermitian(self, tol: float = HERM_TOL) -> bool:
        scale = max(np.linalg.norm(self.matrix), 1.0)
        return np.linalg.norm(self.matrix - self.matrix.conj().T) <= tol * scale

    def is_psd(self, tol: float = HERM_TOL) -> bool:
        if not self.is_hermitian(tol):
            return False
        evals = np.linalg.eigvalsh(0.5 * (self.matrix + self.matrix.conj().T))
        scale = max(abs(evals[-1]), 1.0)
        return evals[0] >= -tol * scale

    def is_unit_trace(self, tol: float = HERM_TOL) -> bool:
        return abs(np.trace(self.matrix) - 1.0) <= tol


@dataclass(frozen=True)
class PureState:
    """A normalized state vector on a tensor product of subsystems."""

    amplitudes: np.ndarray
    dims: tuple[int, ...]
    norm_tol: float = field(default=1e-9)

    def __init__(self, amplitudes, dims: Sequence[int], norm_tol: float = 1e-9):
        vec = _as_complex(amplitudes).reshape(-1)
        dims = tuple(int(d) for d in dims)
        if any(d <= 0 for d in dims):
            raise DimensionError(f"subsystem dimensions must be positive, got {dims}")
        if vec.size != int(np.prod(dims)):
            raise DimensionError(
                f"vector length {vec.size} does not match dims {dims}"
            )
        nrm = np.linalg.norm(vec)
        if abs(nrm - 1.0) > norm_tol:
            raise ContractError(f"state norm {nrm} deviates from 1 beyond {norm_tol}")
        vec = vec.copy()
        vec.setflags(write=False)
        object.__setattr__(self, "amplitudes", vec)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "norm_tol", float(norm_tol))

    def density(self) -> Operator:
        v = self.amplitudes
        return Operator(np.outer(v, v.conj()), self.dims)


# ---------------------------------------------------------------------------
# core tensor operations
# ---------------------------------------------------------------------------

def kron(a: Operator, b: Operator) -> Operator:
    """Kronecker product; ``a`` becomes the slowest-varying factor."""
    return Operator(np.kron(a.matrix, b.matrix), a.dims + b.dims)


def _check_indices(idx: Iterable[int], n: int, what: str) -> tuple[int, ...]:
    idx = tuple(int(i) for i in idx)
    if len(idx) == 0:
        raise DimensionError(f"{what} must not be empty")
    if len(set(idx)) != len(idx):
        raise DimensionError(f"{what} contains duplicates: {idx}")
    if any(i < 0 or i >= n for i in idx):
        raise DimensionError(f"{what} {idx} out of range for {n} subsystems")
    return idx


def ptrace_matrix(mat: np.ndarray, dims: Sequence[int], keep: Iterable[int]) -> np.ndarray:
    """Partial trace on a raw matrix; keeps subsystems listed in ``keep``."""
    dims = tuple(dims)
    n = len(dims)
    keep = _check_indices(keep, n, "keep")
    keep_sorted = sorted(keep)
    t = mat.reshape(dims + dims)
    # trace out the complement, highest axis first so positions stay valid
    for i in reversed([i for i in range(n) if i not in keep_sorted]):
        t = np.trace(t, axis1=i, axis2=i + t.ndim // 2)
    side = int(np.prod([dims[i] for i in keep_sorted]))
    out = t.reshape(side, side)
    if tuple(keep) != tuple(keep_sorted):
        order = np.argsort(np.argsort(keep))  # map sorted positions to requested order
        out = permute_matrix(out, [dims[i] for i in keep_sorted], order)
    return out


def partial_trace(m: Operator, keep: Iterable[int]) -> Operator:
    """Trace out every subsystem not listed in ``keep``.

    The result's dims follow the order given in ``keep``.
    """
    keep = _check_indices(keep, len(m.dims), "keep")
    out = ptrace_matrix(m.matrix, m.dims, keep)
    return Operator(out, tuple(m.dims[i] for i in keep))


def ptranspose_matrix(mat: np.ndarray, dims: Sequence[int], sys: int) -> np.ndarray:
    """Partial transpose of a raw matrix on subsystem ``sys``."""
    dims = tuple(dims)
    n = len(dims)
    if sys < 0 or sys >= n:
        raise DimensionError(f"sys {sys} out of range for {n} subsystems")
    t = mat.reshape(dims + dims)
    t = np.swapaxes(t, sys, sys + n)
    side = int(np.prod(dims))
    return t.reshape(side, side)


def partial_transpose(m: Operator, sys: int) -> Operator:
    """Transpose subsystem ``sys``; an involution."""
    return Operator(ptranspose_matrix(m.matrix, m.dims, sys), m.dims)


def permute_matrix(mat: np.ndarray, dims: Sequence[int], perm: Sequence[int]) -> np.ndarray:
    """Reorder subsystems of a raw matrix: new position i holds old subsystem perm[i]."""
    dims = tuple(dims)
    n = len(dims)
    perm = _check_indices(perm, n, "perm")
    if len(perm) != n:
        raise DimensionError(f"perm {perm} must cover all {n} subsystems")
    t = mat.reshape(dims + dims)
    axes = list(perm) + [p + n for p in perm]
    side = int(np.prod(dims))
    return t.transpose(axes).reshape(side, side)


def permute_systems(m: Operator, perm: Sequence[int]) -> Operator:
    out = permute_matrix(m.matrix, m.dims, perm)
    return Operator(out, tuple(m.dims[p] for p in perm))


def permute_vector(vec: np.ndarray, dims: Sequence[int], perm: Sequence[int]) -> np.ndarray:
    """Reorder subsystems of a raw state vector."""
    dims = tuple(dims)
    perm = _check_indices(perm, len(dims), "perm")
    if len(perm) != len(dims):
        raise DimensionError(f"perm {perm} must cover all {len(dims)} subsystems")
    return vec.reshape(dims).transpose(perm).reshape(-1)


# ---------------------------------------------------------------------------
# spectral operations
# ---------------------------------------------------------------------------

def hermitian_eig(m: Operator | np.ndarray, tol: float = HERM_TOL):
    """Eigendecomposition of a Hermitian operator.

    Returns
    -------
    (w, v):
        ``w`` ascending real eigenvalues, ``v`` unitary with eigenvectors in
        columns. Reconstruction ``v @ diag(w) @ v†`` is checked against the
        input to ``EIG_RESIDUAL_TOL`` (relative Frobenius).
    """
    mat = m.matrix if isinstance(m, Operator) else _as_complex(m)
    scale = max(np.linalg.norm(mat), 1.0)
    if np.linalg.norm(mat - mat.conj().T) > tol * scale:
        raise ContractError("hermitian_eig requires a Hermitian matrix")
    herm = 0.5 * (mat + mat.conj().T)
    w, v = np.linalg.eigh(herm)
    residual = np.linalg.norm((v * w) @ v.conj().T - herm)
    if residual > EIG_RESIDUAL_TOL * scale:
        raise ArithmeticError(
            f"eigendecomposition residual {residual:.3e} exceeds tolerance"
        )
    return w, v


def support_rank(eigenvalues: np.ndarray, rank_tol: float = RANK_TOL) -> int:
    """Number of eigenvalues above the relative rank cutoff."""
    top = float(np.max(np.abs(eigenvalues), initial=0.0))
    if top == 0.0:
        return 0
    return int(np.sum(np.abs(eigenvalues) > rank_tol * top))


def purify(rho: Operator) -> PureState:
    """Purification with a minimal reference system.

    The output lives on dims ``(d, r)`` with ``r`` the numerical rank; the
    reference-side Schmidt basis is the standard basis ordered by descending
    eigenvalue, so the marginal on the first factor reproduces ``rho``.
    """
    if not rho.is_psd():
        raise ContractError("purify requires a PSD operator")
    if not rho.is_unit_trace():
        raise ContractError("purify requires a unit-trace operator")
    d = rho.side
    w, v = hermitian_eig(rho)
    order = np.argsort(-w, kind="stable")
    w, v = w[order], v[:, order]
    r = support_rank(w)
    if r == 0:
        raise ContractError("cannot purify an operator with empty support")
    lam = np.clip(w[:r], 0.0, None)
    vec = (v[:, :r] * np.sqrt(lam)).reshape(-1)  # sum_n sqrt(l_n) |phi_n>|n>
    vec = vec / np.linalg.norm(vec)
    state = PureState(vec, (d, r))
    marginal = ptrace_matrix(state.density().matrix, (d, r), (0,))
    if np.linalg.norm(marginal - rho.matrix) > 1e-10 * max(1.0, np.linalg.norm(rho.matrix)):
        raise ArithmeticError("purification marginal deviates from the input")
    return state


def pairing_isometry(tau_A: Operator, tau_R: Operator, tol: float = 1e-9) -> np.ndarray:
    """Partial isometry T with ``T† tau_A T = tau_R``.

    Pairs eigenvectors of ``tau_R`` with same-eigenvalue eigenvectors of
    ``tau_A``; within a degenerate block the pairing follows eigensolver
    order (the defining equation, not the specific pairing, is the
    contract). ``T†T`` is the projector onto the support of ``tau_R``.

    Returns a plain (possibly rectangular) ``dim(A) x dim(R)`` matrix.
    """
    wa, va = hermitian_eig(tau_A)
    wr, vr = hermitian_eig(tau_R)
    order_a = np.argsort(wa)[::-1]
    order_r = np.argsort(wr)[::-1]
    wa, va = wa[order_a], va[:, order_a]
    wr, vr = wr[order_r], vr[:, order_r]
    ra = support_rank(wa)
    rr = support_rank(wr)
    if ra < rr:
        raise SpectralMismatchError(
            f"tau_A rank {ra} cannot carry tau_R rank {rr}"
        )
    scale = max(float(np.max(np.abs(wa), initial=0.0)), 1e-300)
    mismatch = float(np.max(np.abs(wa[:rr] - wr[:rr]), initial=0.0))
    if mismatch > tol * max(scale, 1.0):
        raise SpectralMismatchError(
            f"nonzero spectra differ by {mismatch:.3e} (tolerance {tol:.1e})"
        )
    T = va[:, :rr] @ vr[:, :rr].conj().T
    check = np.linalg.norm(T.conj().T @ tau_A.matrix @ T - tau_R.matrix)
    if check > tol * max(1.0, np.linalg.norm(tau_R.matrix)):
        # Degenerate blocks straddling the pairing order cannot occur when the
        # spectra match, so reaching here means the tolerance was too loose.
        raise SpectralMismatchError(
            f"pairing identity violated at {check:.3e} after eigenvector matching"
        )
    return T


def psd_power_on_support(mat: np.ndarray, power: float, rank_tol: float = RANK_TOL) -> np.ndarray:
    """Matrix power of a PSD matrix restricted to its support (pseudo-inverse semantics)."""
    w, v = np.linalg.eigh(0.5 * (mat + mat.conj().T))
    top = float(np.max(np.abs(w), initial=0.0))
    keep = np.abs(w) > rank_tol * max(top, 1e-300)
    powered = np.zeros_like(w)
    powered[keep] = np.clip(w[keep], 0.0, None) ** power
    return (v * powered) @ v.conj().T


# ---------------------------------------------------------------------------
# JSON interchange
# ---------------------------------------------------------------------------

def operator_to_json(m: Operator) -> dict:
    """Row-major {"dims", "re", "im"} encoding; NaN/Inf are rejected."""
    return {
        "dims": list(m.dims),
        "re": m.matrix.real.tolist(),
        "im": m.matrix.imag.tolist(),
    }


def operator_from_json(data: dict) -> Operator:
    try:
        dims = data["dims"]
        re = np.asarray(data["re"], dtype=float)
        im = np.asarray(data["im"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise ContractError(f"malformed operator JSON: {exc}") from exc
    if re.shape != im.shape:
        raise ContractError("operator JSON re/im shapes differ")
    return Operator(re + 1j * im, dims)


def state_to_json(s: PureState) -> dict:
    return {
        "dims": list(s.dims),
        "re": s.amplitudes.real.tolist(),
        "im": s.amplitudes.imag.tolist(),
    }


def state_from_json(data: dict) -> PureState:
    try:
        dims = data["dims"]
        re = np.asarray(data["re"], dtype=float)
        im = np.asarray(data["im"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise ContractError(f"malformed state JSON: {exc}") from exc
    if re.shape != im.shape:
        raise ContractError("state JSON re/im shapes differ")
    return PureState(re + 1j * im, dims)
