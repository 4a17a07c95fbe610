"""Reduction of arbitrary tests to a single entangled-input setup.

Any deterministic or probabilistic test — an ensemble of inputs, a
weighted family of observables, anything with a performance operator —
can be replaced by one measurement on the output of the device applied
to half of a fixed pure state.  The recipe here stores that pure state,
the output observable, and the reference state the input half must
reproduce.  Scores are preserved exactly: reconstructing the performance
operator from the recipe returns the original one.

For a performance operator with a negative partial transpose the
observable of the reduced test would not be positive; such operators are
first shifted by their spectral norm (recorded in ``offset``) so the
recipe stays physical, and the benchmark is reported for the raw,
un-shifted test.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .engine import (
    GroupRep,
    PnrConfig,
    PPT_TOL,
    det_benchmark,
    ppt_offset,
)
from .errors import (
    ContractError,
    DimensionError,
    SearchError,
    SupportError,
    VanishingSuccessError,
)
from .linalg import (
    Operator,
    PureState,
    operator_from_json,
    operator_to_json,
    partial_trace,
    partial_transpose,
    state_from_json,
    state_to_json,
    support_rank,
)
from .model import DetTest, ProbTest, Channel, performance_operator

RECIPE_TOL = 1e-9


@dataclass(frozen=True)
class CanonicalTestRecipe:
    """One entangled input, one output observable, a reference marginal.

    ``input_state`` lives on (input, reference) factors, ``observable``
    on (output, reference).  The input marginal of the state always
    equals ``tau_A``.  ``offset`` records a spectral shift applied to
    keep the observable positive; ``benchmark`` (when set) is the
    measure-and-prepare threshold of the raw, un-shifted test.
    """

    input_state: PureState
    observable: Operator
    tau_A: Operator
    offset: float = 0.0
    benchmark: float | None = None

    def __post_init__(self) -> None:
        if len(self.input_state.dims) != 2 or len(self.observable.dims) != 2:
            raise DimensionError("recipe state and observable must be bipartite")
        d_a, r = self.input_state.dims
        d_out, r2 = self.observable.dims
        if r2 != r:
            raise DimensionError(
                f"observable reference dim {r2} must match state reference dim {r}"
            )
        if self.tau_A.side != d_a:
            raise DimensionError(
                f"tau_A side {self.tau_A.side} must match input dim {d_a}"
            )
        if not self.observable.is_hermitian():
            raise ContractError("recipe observable must be Hermitian")
        marginal = partial_trace(self.input_state.density(), keep=[0])
        gap = np.linalg.norm(marginal.matrix - self.tau_A.matrix)
        if gap > RECIPE_TOL:
            raise ContractError(
                f"input marginal misses tau_A by {gap:.3e} (tolerance {RECIPE_TOL:.0e})"
            )

    def as_det_test(self) -> DetTest:
        return DetTest(self.input_state.density(), self.observable)


def _input_support_check(omega_pt: Operator, tau: np.ndarray) -> None:
    """The input factor of omega^{T_A} must live inside tau's support."""
    d_out, d_in = omega_pt.dims
    w, v = np.linalg.eigh(0.5 * (tau + tau.conj().T))
    rank = support_rank(w)
    if rank == d_in:
        return
    kernel = v[:, : d_in - rank]
    proj = np.kron(np.eye(d_out), kernel @ kernel.conj().T)
    resid = np.linalg.norm(proj @ omega_pt.matrix)
    scale = max(1.0, np.linalg.norm(omega_pt.matrix))
    if resid > RECIPE_TOL * scale:
        gram = proj @ omega_pt.matrix @ omega_pt.matrix.conj().T @ proj
        eigs, vecs = np.linalg.eigh(0.5 * (gram + gram.conj().T))
        raise SupportError(
            "performance operator acts outside the reference state's support "
            f"(residual {resid:.3e})",
            direction=vecs[:, -1],
        )


def canonical_det_test(
    omega: Operator, tau_A: Operator | None = None
) -> CanonicalTestRecipe:
    """Single-setup test reproducing a given performance operator.

    Purifies the reference state tau_A (default: maximally mixed on the
    input support of the partially transposed operator), pairs the
    purification's reference factor back onto the input factor, and
    conjugates omega^{T_A} into an output observable.  The returned
    recipe's own performance operator equals omega to within 1e-9.
    """
    if len(omega.dims) != 2:
        raise DimensionError("performance operator must be bipartite")
    if not omega.is_hermitian():
        raise ContractError("performance operator must be Hermitian")
    d_out, d_in = omega.dims
    omega_pt = partial_transpose(omega, 1)

    if tau_A is None:
        # Maximally mixed on the input support of omega^{T_A}; the
        # marginal can be indefinite, so support means eigenvalues of
        # either sign.
        marg = partial_trace(omega_pt, keep=[1])
        w, v = np.linalg.eigh(0.5 * (marg.matrix + marg.matrix.conj().T))
        mag = np.abs(w)
        keep = mag > 1e-12 * max(float(mag.max()), 1e-300)
        if not np.any(keep):
            keep = np.ones_like(mag, dtype=bool)
        rank = int(keep.sum())
        proj = v[:, keep] @ v[:, keep].conj().T
        tau_A = Operator(proj / rank, (d_in,))
    else:
        if tau_A.side != d_in:
            raise DimensionError(
                f"tau_A side {tau_A.side} must match input dim {d_in}"
            )
        if not (tau_A.is_psd() and tau_A.is_unit_trace()):
            raise ContractError("tau_A must be a density operator")

    _input_support_check(omega_pt, tau_A.matrix)

    w, v = np.linalg.eigh(tau_A.matrix)
    # Stable descending sort keeps degenerate eigenvectors in natural
    # order, so a maximally mixed tau pairs along the computational basis.
    order = np.argsort(-w, kind="stable")
    w_desc = w[order]
    v_desc = v[:, order]
    rank = support_rank(w)
    lam = w_desc[:rank]
    basis = v_desc[:, :rank]

    amplitudes = (basis * np.sqrt(lam)[None, :]).reshape(-1)
    input_state = PureState(amplitudes, (d_in, rank))

    # The observable pairs against the *conjugate* eigenbasis: the input
    # state carries the unconjugated one, and their product must close to
    # the support projector, not its transpose.
    embed = np.kron(np.eye(d_out), basis.conj() * (lam ** -0.5)[None, :])
    obs = embed.conj().T @ omega_pt.matrix @ embed
    observable = Operator(0.5 * (obs + obs.conj().T), (d_out, rank))

    recipe = CanonicalTestRecipe(input_state, observable, tau_A)
    rebuilt = performance_operator(recipe.as_det_test())
    gap = np.linalg.norm(rebuilt.matrix - omega.matrix)
    if gap > RECIPE_TOL * max(1.0, np.linalg.norm(omega.matrix)):
        raise ArithmeticError(
            f"canonical reduction failed to reproduce the operator (gap {gap:.3e})"
        )
    return recipe


def canonical_prob_test(t: ProbTest) -> CanonicalTestRecipe:
    """Single-setup reduction of a probabilistic test.

    Uses the test's own reference state as the input marginal; both the
    conditional score and the success probability of every device are
    preserved, because the success probability depends on the device
    only through its action on sigma_A.
    """
    return canonical_det_test(t.omega, t.sigma_A)


def score_recipe(
    recipe: CanonicalTestRecipe, c: Channel, p_min: float = 1e-12
) -> tuple[float, float]:
    """(score, success probability) of a device run through the recipe.

    The observable is the recipe's stored (possibly shifted) one; for a
    shifted deterministic recipe subtract ``recipe.offset`` from the
    score to recover the raw value.
    """
    d_a, r = recipe.input_state.dims
    if c.dims_in != d_a:
        raise DimensionError(
            f"channel input {c.dims_in} does not match recipe input dim {d_a}"
        )
    psi = recipe.input_state.amplitudes.reshape(d_a, r)
    evolved = np.zeros((c.dims_out, r, c.dims_out, r), dtype=complex)
    for k in c.kraus:
        vec = k @ psi
        evolved += np.einsum("xr,ys->xrys", vec, vec.conj())
    p = float(np.real(np.einsum("xrxr->", evolved)))
    if p <= p_min:
        raise VanishingSuccessError(
            f"success probability {p:.3e} at or below threshold {p_min:.0e}"
        )
    d_out = recipe.observable.dims[0]
    o4 = recipe.observable.matrix.reshape(d_out, r, d_out, r)
    num = float(np.real(np.einsum("xrys,ysxr->", o4, evolved)))
    return num / p, p


def tests_equivalent_det(a: DetTest, b: DetTest, tol: float = RECIPE_TOL) -> bool:
    """True iff two deterministic tests score every device identically."""
    om_a = performance_operator(a)
    om_b = performance_operator(b)
    if om_a.dims != om_b.dims:
        raise DimensionError(
            f"tests act on different spaces: {om_a.dims} vs {om_b.dims}"
        )
    return bool(np.linalg.norm(om_a.matrix - om_b.matrix) <= tol)


def tests_equivalent_prob(a: ProbTest, b: ProbTest, tol: float = RECIPE_TOL) -> bool:
    """True iff two probabilistic tests agree in score and success rate."""
    if a.omega.dims != b.omega.dims:
        raise DimensionError(
            f"tests act on different spaces: {a.omega.dims} vs {b.omega.dims}"
        )
    return bool(
        np.linalg.norm(a.omega.matrix - b.omega.matrix) <= tol
        and np.linalg.norm(a.sigma_A.matrix - b.sigma_A.matrix) <= tol
    )


def fully_blackbox_test(
    omega: Operator,
    cfg: PnrConfig | None = None,
    rep: GroupRep | None = None,
) -> CanonicalTestRecipe:
    """Canonical test at the benchmark-minimising reference state.

    Shifts the performance operator into positivity if needed (the shift
    is recorded and the stored benchmark refers to the raw operator),
    finds the reference state minimising the measure-and-prepare
    threshold, and returns the canonical recipe at that state.
    """
    if not omega.is_hermitian():
        raise ContractError("performance operator must be Hermitian")
    d_out, d_in = omega.dims
    pt = partial_transpose(omega, 1)
    low = float(np.min(np.linalg.eigvalsh(pt.matrix)))
    if low < -PPT_TOL:
        shifted, offset = ppt_offset(omega)
    else:
        shifted, offset = omega, 0.0

    try:
        report = det_benchmark(shifted, cfg, rep=rep)
    except SearchError as err:
        best = err.best
        recipe = canonical_det_test(shifted, best.tau_min)
        recipe = replace(
            recipe, offset=offset, benchmark=best.value - offset * d_in
        )
        raise SearchError(str(err), best=recipe) from err

    recipe = canonical_det_test(shifted, report.tau_min)
    return replace(
        recipe, offset=offset, benchmark=report.value - offset * d_in
    )


def recipe_to_json(recipe: CanonicalTestRecipe) -> dict:
    return {
        "input_state": state_to_json(recipe.input_state),
        "observable": operator_to_json(recipe.observable),
        "tau_A": operator_to_json(recipe.tau_A),
        "offset": recipe.offset,
        "benchmark": recipe.benchmark,
    }


def recipe_from_json(data: dict) -> CanonicalTestRecipe:
    try:
        return CanonicalTestRecipe(
            input_state=state_from_json(data["input_state"]),
            observable=operator_from_json(data["observable"]),
            tau_A=operator_from_json(data["tau_A"]),
            offset=float(data.get("offset", 0.0)),
            benchmark=(
                None if data.get("benchmark") is None else float(data["benchmark"])
            ),
        )
    except (KeyError, TypeError, ValueError) as err:
        raise ContractError(f"malformed recipe payload: {err}") from err
