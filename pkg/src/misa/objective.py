"""MISA objective value and analytical gradient.

Both dispersion modes are supported: scale-invariant (dispersion tied to the
sample covariance, objective blind to per-source rescaling) and
scale-controlled (dispersion tied to the sample correlation, model variances
pinned at alpha_k). Gradients are assembled per subspace in source space and
mapped back to each dataset block; the relative-gradient transform used by
the solvers is also provided here.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DefinitenessError, RankError, ShapeError
from .model import (
    PSI_LAPLACE,
    BlockTransform,
    DispersionChoice,
    KotzParams,
    MultiDataset,
    SubspaceAssignment,
    chol_pd,
    kotz_from_psi,
    logdet_from_chol,
)

RANK_RTOL = 1e3 * np.finfo(float).eps


def j_d_term(W_m: np.ndarray) -> float:
    """Sum of log singular values of W_m; ln|det W_m| in the square case."""
    s = np.linalg.svd(W_m, compute_uv=False)
    if s[-1] <= RANK_RTOL * s[0]:
        raise RankError("W block is rank deficient")
    return float(np.sum(np.log(s)))


def pinv_transpose(W_m: np.ndarray) -> np.ndarray:
    """(W_m^-)^T via SVD with singular values clipped at the rank threshold."""
    U, s, Vt = np.linalg.svd(W_m, full_matrices=False)
    if s[-1] <= RANK_RTOL * s[0]:
        raise RankError("W block is rank deficient")
    return (U / s) @ Vt


@dataclass(frozen=True)
class ObjectiveContext:
    """Frozen problem definition: data, subspace structure, Kotz parameters.

    kotz holds one KotzParams per subspace; pass psi to build them all from a
    single (beta, lambda, eta) triple. Per-dataset Gram factors X X^T are
    cached at construction and shared read-only across threads.
    """

    data: MultiDataset
    assignment: SubspaceAssignment
    kotz: tuple
    dispersion: DispersionChoice
    grams: tuple = field(default=())

    def __init__(self, data: MultiDataset, assignment: SubspaceAssignment,
                 dispersion: DispersionChoice = DispersionChoice.SCALE_CONTROLLED,
                 kotz: Optional[Sequence[KotzParams]] = None,
                 psi: Sequence[float] = PSI_LAPLACE):
        if sum(assignment.col_dims) != assignment.n_sources:
            raise ShapeError("assignment inconsistent")
        if data.n_datasets != len(assignment.col_dims):
            raise ShapeError("assignment covers a different number of datasets")
        dims = assignment.subspace_dims
        if kotz is None:
            kotz = [kotz_from_psi(psi, int(d)) for d in dims]
        kotz = tuple(kotz)
        if len(kotz) != assignment.n_subspaces:
            raise ShapeError("need one KotzParams per subspace")
        for k, (pk, d) in enumerate(zip(kotz, dims)):
            if pk.d != d:
                raise ShapeError(f"KotzParams {k} built for d={pk.d}, subspace has d={d}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "assignment", assignment)
        object.__setattr__(self, "kotz", kotz)
        object.__setattr__(self, "dispersion", dispersion)
        object.__setattr__(self, "grams", tuple(X @ X.T for X in data.blocks))

    def gram_rebuild_error(self) -> float:
        """Max abs deviation of the cached Grams from a fresh rebuild."""
        return max(float(np.max(np.abs(G - X @ X.T))) if G.size else 0.0
                   for G, X in zip(self.grams, self.data.blocks))

    @property
    def f_constant(self) -> float:
        """Sum over subspaces of the Kotz log normalizers (W-independent)."""
        return float(sum(p.log_norm_const for p in self.kotz))


@dataclass(frozen=True)
class ObjectiveReport:
    value: float
    terms: dict
    gradient: Optional[BlockTransform] = None


def evaluate(ctx: ObjectiveContext, W: BlockTransform,
             with_gradient: bool = False) -> ObjectiveReport:
    """Objective value (and gradient on request) at the unmixing W."""
    W.check_unmixing(ctx.data, ctx.assignment)
    N = ctx.data.n_obs
    Y = W.transform(ctx.data)

    jd_sum = sum(j_d_term(Wm) for Wm in W.blocks)

    jc_sum = 0.0
    jf_sum = 0.0
    je_sum = 0.0
    G_Y = np.zeros_like(Y) if with_gradient else None

    invariant = ctx.dispersion is DispersionChoice.SCALE_INVARIANT
    for k in range(ctx.assignment.n_subspaces):
        idx = ctx.assignment.sources(k)
        pk = ctx.kotz[k]
        Yk = Y[idx]
        Z = Yk @ Yk.T
        try:
            if invariant:
                Sig = Z / (N - 1)
                L = chol_pd(Sig, "sample covariance")
                # J_C = ln det(alpha^-1 Sigma)
                jc_sum += logdet_from_chol(L) - pk.d * np.log(pk.alpha)
                U = np.linalg.solve(L.T, np.linalg.solve(L, Yk))
                z = pk.alpha * np.einsum("in,in->n", Yk, U)
            else:
                s = np.sqrt(np.diag(Z))
                if np.any(s <= 0):
                    raise DefinitenessError("zero-power source row")
                Vk = Yk * s[:, None]
                L = chol_pd(Z, "source Gram")
                jc_sum += logdet_from_chol(L) - 2.0 * float(np.sum(np.log(s)))
                A = np.linalg.solve(L.T, np.linalg.solve(L, Vk))
                z = np.einsum("in,in->n", Vk, A)
        except DefinitenessError as e:
            raise DefinitenessError(f"subspace {k}: {e}") from None
        if np.any(z <= 0):
            raise DefinitenessError(f"subspace {k}: nonpositive quadratic form")
        jf_sum += (pk.eta - 1.0) / N * float(np.sum(np.log(z)))
        je_sum += pk.lamb / N * float(np.sum(z ** pk.beta))

        if with_gradient:
            t = (2.0 * pk.beta * pk.lamb * z ** pk.beta + 2.0 * (1.0 - pk.eta)) / (N * z)
            if invariant:
                Ut = U * t
                G_Y[idx] = pk.alpha * Ut + U / (N - 1) \
                    - (pk.alpha / (N - 1)) * (Ut @ Yk.T) @ U
            else:
                B = A * t
                g = np.einsum("in,in->i", B, Yk)
                Zinv = np.linalg.solve(L.T, np.linalg.solve(L, np.eye(pk.d)))
                M2 = Zinv - B @ A.T
                np.fill_diagonal(M2, np.diag(M2) + g / s - 1.0 / np.diag(Z))
                G_Y[idx] = B * s[:, None] + M2 @ Yk

    f_const = ctx.f_constant
    value = -jd_sum + 0.5 * jc_sum - f_const - jf_sum + je_sum
    terms = {"J_D": jd_sum, "J_C": jc_sum, "J_F": jf_sum, "J_E": je_sum,
             "f": f_const}

    gradient = None
    if with_gradient:
        off = ctx.assignment.col_offsets
        blocks = []
        for m, (Wm, Xm) in enumerate(zip(W.blocks, ctx.data.blocks)):
            Gm = G_Y[off[m]:off[m + 1]] @ Xm.T - pinv_transpose(Wm)
            blocks.append(Gm)
        gradient = BlockTransform(blocks)

    return ObjectiveReport(value=float(value), terms=terms, gradient=gradient)


def value_from_sources(Y: np.ndarray, assignment: SubspaceAssignment,
                       dispersion: DispersionChoice,
                       psi: Sequence[float] = PSI_LAPLACE,
                       jd_sum: float = 0.0) -> float:
    """Objective value from precomputed sources Y = W X.

    The J_D term depends only on W, so callers comparing candidates at fixed
    W may pass any constant for jd_sum (including 0). Used by the greedy
    reassignment search, which re-scores many assignments per Y.
    """
    N = Y.shape[1]
    invariant = dispersion is DispersionChoice.SCALE_INVARIANT
    total = -jd_sum
    for k in range(assignment.n_subspaces):
        idx = assignment.sources(k)
        pk = kotz_from_psi(psi, len(idx))
        Yk = Y[idx]
        Z = Yk @ Yk.T
        try:
            if invariant:
                Sig = Z / (N - 1)
                L = chol_pd(Sig, "sample covariance")
                jc = logdet_from_chol(L) - pk.d * np.log(pk.alpha)
                U = np.linalg.solve(L.T, np.linalg.solve(L, Yk))
                z = pk.alpha * np.einsum("in,in->n", Yk, U)
            else:
                s = np.sqrt(np.diag(Z))
                if np.any(s <= 0):
                    raise DefinitenessError("zero-power source row")
                Vk = Yk * s[:, None]
                L = chol_pd(Z, "source Gram")
                jc = logdet_from_chol(L) - 2.0 * float(np.sum(np.log(s)))
                A = np.linalg.solve(L.T, np.linalg.solve(L, Vk))
                z = np.einsum("in,in->n", Vk, A)
        except DefinitenessError as e:
            raise DefinitenessError(f"subspace {k}: {e}") from None
        if np.any(z <= 0):
            raise DefinitenessError(f"subspace {k}: nonpositive quadratic form")
        total += 0.5 * jc - pk.log_norm_const
        total -= (pk.eta - 1.0) / N * float(np.sum(np.log(z)))
        total += pk.lamb / N * float(np.sum(z ** pk.beta))
    return float(total)


def relative_gradient(grad: BlockTransform, W: BlockTransform) -> BlockTransform:
    """Per-block gradient preconditioning grad_m W_m^T W_m."""
    if grad.n_datasets != W.n_datasets:
        raise ShapeError("block count mismatch")
    return BlockTransform([G @ Wm.T @ Wm for G, Wm in zip(grad.blocks, W.blocks)])
