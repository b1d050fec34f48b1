"""Two-level iteration operator and its convergence metrics."""
from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, field
from typing import Optional, Union

import numpy as np
import scipy.linalg

from .errors import (
    DegenerateCoarseSpaceError,
    EigensolverError,
    PreconditionError,
    SingularPreconditionedSystemError,
    UnsupportedMetricError,
)
from .model_problem import Eigensystem, GridProblem, JacobiSmoother

AC_COND_MAX = 1e12
RANK_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class CoarseSpace:
    """Prolongation P (n x m); the restriction is always P^T."""

    P: np.ndarray = field(repr=False)
    kind: str = "custom"

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float)
        if P.ndim == 1:
            P = P[:, None]
        object.__setattr__(self, "P", P)
        if P.shape[1] > 0:
            s = np.linalg.svd(P, compute_uv=False)
            if s[-1] <= RANK_TOL * s[0]:
                raise DegenerateCoarseSpaceError(
                    f"P is rank deficient (sigma_min/sigma_max = {s[-1] / s[0]:.2e})")

    @classmethod
    def empty(cls, n: int) -> "CoarseSpace":
        return cls(np.zeros((n, 0)), kind="none")

    @property
    def m(self) -> int:
        return self.P.shape[1]

    @property
    def R(self) -> np.ndarray:
        return self.P.T


@dataclass(frozen=True, eq=False)
class TwoLevelOperator:
    T: np.ndarray = field(repr=False)
    A_c: np.ndarray = field(repr=False)
    lu: Optional[tuple] = field(repr=False)
    problem: GridProblem
    smoother: JacobiSmoother = field(repr=False)
    coarse: CoarseSpace = field(repr=False)

    @property
    def n(self) -> int:
        return self.T.shape[0]

    def projector(self) -> np.ndarray:
        """A-orthogonal projection ``P (P^T A P)^{-1} P^T A`` onto the coarse space."""
        if self.coarse.m == 0:
            return np.zeros_like(self.T)
        P, A = self.coarse.P, self.problem.A
        return P @ scipy.linalg.lu_solve(self.lu, P.T @ A)


@dataclass
class MetricReport:
    rho: float
    energy_norm: Optional[float] = None
    kappa2: Optional[float] = None
    kappa2_eig: Optional[float] = None
    provenance: dict = field(default_factory=dict)

    def to_json(self, **kw) -> str:
        return json.dumps(asdict(self), **kw)


def factor_coarse(A: np.ndarray, P: np.ndarray):
    """Galerkin coarse matrix and its LU factors; raises on near-singularity."""
    A_c = P.T @ A @ P
    cond = np.linalg.cond(A_c)
    if not np.isfinite(cond) or cond > AC_COND_MAX:
        raise DegenerateCoarseSpaceError(f"coarse matrix condition estimate {cond:.2e}")
    return A_c, scipy.linalg.lu_factor(A_c)


def assemble_T(p: GridProblem, s: JacobiSmoother, cs: CoarseSpace) -> TwoLevelOperator:
    """Dense ``T = (I - P (P^T A P)^{-1} P^T A) G``."""
    if cs.P.shape[0] != p.n:
        raise PreconditionError(f"P has {cs.P.shape[0]} rows, expected {p.n}")
    if cs.m == 0:
        return TwoLevelOperator(T=s.G.copy(), A_c=np.zeros((0, 0)), lu=None,
                                problem=p, smoother=s, coarse=cs)
    P = cs.P
    A_c, lu = factor_coarse(p.A, P)
    AG = p.A @ s.G
    T = s.G - P @ scipy.linalg.lu_solve(lu, P.T @ AG)
    return TwoLevelOperator(T=T, A_c=A_c, lu=lu, problem=p, smoother=s, coarse=cs)


def _matrix(t: Union[TwoLevelOperator, np.ndarray]) -> np.ndarray:
    return t.T if isinstance(t, TwoLevelOperator) else np.asarray(t, dtype=float)


def spectral_radius(t: Union[TwoLevelOperator, np.ndarray]) -> float:
    try:
        ev = scipy.linalg.eigvals(_matrix(t))
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise EigensolverError(str(exc)) from exc
    return float(np.abs(ev).max()) if ev.size else 0.0


def sqrtm_spd(A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``(A^{1/2}, A^{-1/2})`` from the symmetric eigendecomposition."""
    w, U = scipy.linalg.eigh(A)
    if w.min() <= 0:
        raise UnsupportedMetricError("A is not positive definite")
    return (U * np.sqrt(w)) @ U.T, (U / np.sqrt(w)) @ U.T


def a_norm(T: np.ndarray, A: np.ndarray) -> float:
    """Operator norm of T induced by the A-inner product (A SPD)."""
    Ah, Aih = sqrtm_spd(A)
    return float(np.linalg.norm(Ah @ T @ Aih, 2))


def energy_norm(t: TwoLevelOperator) -> float:
    A = t.problem.A
    if not np.array_equal(A, A.T):
        raise UnsupportedMetricError("energy norm needs a symmetric A (c = 0)")
    return a_norm(t.T, A)


def preconditioned_condition(t: Union[TwoLevelOperator, np.ndarray], variant: str = "svd") -> float:
    """Condition number of the preconditioned operator ``I - T = B A``.

    ``variant="svd"`` is the 2-norm condition number; ``variant="eig"`` is
    the ratio of the extreme eigenvalue moduli.
    """
    T = _matrix(t)
    K = np.eye(T.shape[0]) - T
    if variant == "svd":
        s = np.linalg.svd(K, compute_uv=False)
    elif variant == "eig":
        s = np.sort(np.abs(scipy.linalg.eigvals(K)))[::-1]
    else:
        raise PreconditionError(f"unknown condition-number variant {variant!r}")
    if s[-1] <= 1e-14 * s[0]:
        raise SingularPreconditionedSystemError("I - T is numerically singular")
    return float(s[0] / s[-1])


def metric_report(t: TwoLevelOperator, **provenance) -> MetricReport:
    p, s = t.problem, t.smoother
    rep = MetricReport(rho=spectral_radius(t))
    if p.is_symmetric:
        rep.energy_norm = energy_norm(t)
    try:
        rep.kappa2 = preconditioned_condition(t, "svd")
        rep.kappa2_eig = preconditioned_condition(t, "eig")
    except SingularPreconditionedSystemError:
        pass
    rep.provenance = {"h": p.h, "c": p.c, "omega": s.omega, "m": t.coarse.m,
                      "coarse_kind": t.coarse.kind, **provenance}
    return rep


def spectral_coarse_space(e: Eigensystem, m: int) -> CoarseSpace:
    """The m slowest modes of G, in the eigensystem's fixed ordering."""
    if not 1 <= m <= e.n:
        raise PreconditionError(f"coarse dimension m={m} outside [1, {e.n}]")
    return CoarseSpace(e.vectors[:, :m].copy(), kind="spectral")


def spectral_coarse_space_choices(e: Eigensystem, m: int) -> list[tuple[tuple[int, ...], CoarseSpace]]:
    """All spectral coarse spaces of dimension m built from the basis ``e.vectors``.

    They differ only when m cuts through a cluster of tied ``|lambda|``: the
    modes before the cluster are always kept and every subset of the
    cluster's basis vectors fills the rest.  Returns ``(columns, space)``
    pairs, the default ordering's choice first.
    """
    if not 1 <= m <= e.n:
        raise PreconditionError(f"coarse dimension m={m} outside [1, {e.n}]")
    lo, hi = e.cluster(m - 1)
    out = []
    for combo in itertools.combinations(range(lo, hi), m - lo):
        cols = tuple(range(lo)) + combo
        out.append((cols, CoarseSpace(e.vectors[:, list(cols)].copy(), kind="spectral")))
    return out


@dataclass
class MbarReport:
    ok: bool
    max_angle: float
    cut_in_cluster: bool
    cluster: tuple
    mbar_eigenvalues: np.ndarray = field(repr=False)
    message: str = ""


def mbar_matrix(p: GridProblem, s: JacobiSmoother) -> np.ndarray:
    """``Mbar = M^{-1} + M^{-T} - M^{-T} A M^{-1}`` for the Jacobi splitting M = D/omega."""
    Minv = s.M_inv_scale * np.eye(p.n)
    return Minv + Minv.T - Minv.T @ p.A @ Minv


def mbar_check(p: GridProblem, s: JacobiSmoother, m: int, e: Optional[Eigensystem] = None,
               tol: float = 1e-8) -> MbarReport:
    """Compare the m lowest modes of ``Mbar A`` with the m slowest modes of G.

    When m cuts through a cluster of tied ``|lambda|`` (the two selections
    are then not unique), the check is that the full clusters before the cut
    agree and both selections lie in the same enclosing invariant subspace.
    """
    if not p.is_symmetric:
        raise PreconditionError("Mbar check requires a symmetric splitting (c = 0)")
    if e is None:
        from .model_problem import eigensystem
        e = eigensystem(p, s)
    if not 1 <= m <= p.n:
        raise PreconditionError(f"m={m} outside [1, {p.n}]")
    Mbar = mbar_matrix(p, s)
    Ah, Aih = sqrtm_spd(p.A)
    try:
        Ah_Mbar = Ah @ Mbar @ Ah
        w, U = scipy.linalg.eigh(0.5 * (Ah_Mbar + Ah_Mbar.T))
    except np.linalg.LinAlgError as exc:
        raise EigensolverError(str(exc)) from exc
    if w.min() <= 0:
        return MbarReport(False, np.nan, False, (0, 0), w, "Mbar is not positive definite")
    # eigenvectors of Mbar A are A^{-1/2} U
    low = Aih @ U[:, :m]
    lo, hi = e.cluster(m - 1)
    cut = hi > m
    V = e.vectors
    if not cut:
        angles = scipy.linalg.subspace_angles(low, V[:, :m])
    else:
        angles = scipy.linalg.subspace_angles(low, V[:, :hi])
        if lo > 0:
            angles = np.concatenate([angles, scipy.linalg.subspace_angles(V[:, :lo], low)])
    max_angle = float(np.max(angles))
    return MbarReport(max_angle <= tol, max_angle, cut, (lo, hi), w)
