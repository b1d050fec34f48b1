"""One-dimensional perturbations of the spectral coarse space.

The coarse space ``span{v1 + eps * v2}`` yields a two-level operator whose
restriction to ``span{v1, v2}`` has spectrum ``{0, lambda(eps, gamma)}``
with the rational function implemented in :func:`lambda_closed_form`.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from .errors import PoleError, PreconditionError, UnclassifiableCaseError
from .model_problem import Eigensystem, GridProblem, JacobiSmoother
from .two_level import CoarseSpace, TwoLevelOperator, assemble_T, spectral_radius

POLE_TOL = 1e-12
GAMMA_ZERO_TOL = 1e-10
HYPOTHESIS_TOL = 1e-8
SWEEP_HEADER = ("epsilon", "abs_lambda_closed", "rho_T_numeric", "case_label")


@dataclass(frozen=True, eq=False)
class SimilarityForm:
    """``T_tilde = (V^{-1} T V)^T`` and its block views for index ``m_tilde``."""

    T_tilde: np.ndarray = field(repr=False)
    m_tilde: int
    lambdas: np.ndarray = field(repr=False)
    hypothesis_ok: bool
    projection_residual: float

    @property
    def T_m(self) -> np.ndarray:
        return self.T_tilde[: self.m_tilde, : self.m_tilde]

    @property
    def X(self) -> np.ndarray:
        return self.T_tilde[self.m_tilde:, : self.m_tilde]

    @property
    def top_right(self) -> np.ndarray:
        return self.T_tilde[: self.m_tilde, self.m_tilde:]

    @property
    def bottom_right(self) -> np.ndarray:
        return self.T_tilde[self.m_tilde:, self.m_tilde:]

    @property
    def Lambda(self) -> np.ndarray:
        return np.diag(self.lambdas[self.m_tilde:])

    def structure_errors(self) -> tuple[float, float]:
        """Max-entry size of the top-right block and of ``bottom_right - Lambda``."""
        tr = float(np.abs(self.top_right).max()) if self.top_right.size else 0.0
        br = float(np.abs(self.bottom_right - self.Lambda).max()) if self.bottom_right.size else 0.0
        return tr, br


def similarity_form(t: TwoLevelOperator, e: Eigensystem, m_tilde: int) -> SimilarityForm:
    if not t.coarse.m <= m_tilde <= e.n:
        raise PreconditionError(f"m_tilde={m_tilde} must lie in [m={t.coarse.m}, n={e.n}]")
    V = e.vectors
    T_tilde = scipy.linalg.solve(V, t.T @ V).T
    P = t.coarse.P
    if P.shape[1]:
        # residual of P after projection onto span{v_1..v_m_tilde}
        Vm = V[:, :m_tilde]
        coef, *_ = np.linalg.lstsq(Vm, P, rcond=None)
        resid = float(np.linalg.norm(P - Vm @ coef) / np.linalg.norm(P))
    else:
        resid = 0.0
    return SimilarityForm(T_tilde=T_tilde, m_tilde=m_tilde, lambdas=e.values_G,
                          hypothesis_ok=resid <= HYPOTHESIS_TOL, projection_residual=resid)


@dataclass(frozen=True)
class PerturbationCase:
    lambda1: float
    lambda2: float
    lambda3: float
    lt1: float
    lt2: float
    gamma: float
    epsilon: float = 0.0

    def __post_init__(self):
        if not -1.0 - 1e-12 <= self.gamma <= 1.0 + 1e-12:
            raise PreconditionError(f"gamma={self.gamma} outside [-1, 1]")
        if not self.lt1 * self.lt2 > 0:
            raise PreconditionError("need lt1 * lt2 > 0")
        if abs(self.lambda2) > abs(self.lambda1) + 1e-12:
            raise PreconditionError("need |lambda2| <= |lambda1|")
        if abs(self.lambda3) > abs(self.lambda2) + 1e-12:
            raise PreconditionError("need |lambda3| <= |lambda2|")

    @property
    def strict(self) -> bool:
        """Whether ``0 < |lambda3| < |lambda2|`` holds strictly (ties are allowed here)."""
        return 0 < abs(self.lambda3) < abs(self.lambda2) - 1e-12

    def at(self, epsilon: float) -> "PerturbationCase":
        return replace(self, epsilon=float(epsilon))

    @classmethod
    def from_eigensystem(cls, e: Eigensystem, pair: tuple[int, int] = (0, 1),
                         epsilon: float = 0.0) -> "PerturbationCase":
        """Case data for ``span{v_a + eps v_b}`` with ``(a, b) = pair`` (0-based).

        ``lambda3`` is the largest ``|lambda|`` over all other modes, so
        multiplicities are honoured.
        """
        a, b = pair
        if a == b:
            raise PreconditionError("the perturbed pair needs two distinct modes")
        others = np.delete(np.arange(e.n), [a, b])
        l3 = e.values_G[others[np.argmax(np.abs(e.values_G[others]))]] if others.size else 0.0
        v1, v2 = e.vectors[:, a], e.vectors[:, b]
        gamma = float(np.clip(v1 @ v2, -1.0, 1.0))
        return cls(lambda1=float(e.values_G[a]), lambda2=float(e.values_G[b]), lambda3=float(l3),
                   lt1=float(e.values_A[a]), lt2=float(e.values_A[b]), gamma=gamma,
                   epsilon=float(epsilon))


def _denominator(pc: PerturbationCase, eps):
    return pc.lt2 * eps**2 + pc.gamma * (pc.lt1 + pc.lt2) * eps + pc.lt1


def _numerator(pc: PerturbationCase, eps):
    return (pc.lambda1 * pc.lt2 * eps**2
            + pc.gamma * (pc.lambda1 * pc.lt2 + pc.lambda2 * pc.lt1) * eps
            + pc.lambda2 * pc.lt1)


def lambda_closed_form(pc: PerturbationCase, eps=None):
    """Nonzero eigenvalue of the 2x2 block for the perturbed coarse space.

    ``eps`` defaults to ``pc.epsilon`` and may be an array.
    """
    eps = pc.epsilon if eps is None else eps
    den = _denominator(pc, np.asarray(eps, dtype=float))
    if np.any(np.abs(den) < POLE_TOL):
        raise PoleError("coarse vector is A-degenerate at this epsilon")
    out = _numerator(pc, np.asarray(eps, dtype=float)) / den
    return float(out) if np.ndim(out) == 0 else out


def lambda_derivative(pc: PerturbationCase, eps=None):
    """d lambda / d eps, written so that gamma = 0 needs no special case."""
    eps = np.asarray(pc.epsilon if eps is None else eps, dtype=float)
    den = _denominator(pc, eps)
    if np.any(np.abs(den) < POLE_TOL):
        raise PoleError("coarse vector is A-degenerate at this epsilon")
    # gamma * (eps^2 + 2 eps / gamma + 1) continued to gamma = 0
    f = pc.gamma * eps**2 + 2 * eps + pc.gamma
    out = (pc.lambda1 - pc.lambda2) * pc.lt1 * pc.lt2 * f / den**2
    return float(out) if np.ndim(out) == 0 else out


def reduced_block(pc: PerturbationCase, eps=None) -> np.ndarray:
    """The 2x2 leading block of ``T_tilde`` for ``span{v1 + eps v2}``, in closed form."""
    eps = pc.epsilon if eps is None else float(eps)
    g = _denominator(pc, eps)
    l1, l2, lt1, lt2, gm = pc.lambda1, pc.lambda2, pc.lt1, pc.lt2, pc.gamma
    a = l1 * lt1 * (1 + eps * gm) / g
    b = l2 * lt2 * (eps + gm) / g
    return np.array([[l1 - a, -eps * a],
                     [-b, l2 - eps * b]])


@dataclass(frozen=True)
class CaseVerdict:
    label: str
    improvable: bool
    description: str


def classify_case(pc: PerturbationCase) -> CaseVerdict:
    l1, l2 = pc.lambda1, pc.lambda2
    if l1 == 0 or l2 == 0:
        raise UnclassifiableCaseError("lambda1 and lambda2 must be nonzero")
    same_sign = (l1 > 0) == (l2 > 0)
    if abs(pc.gamma) <= GAMMA_ZERO_TOL:
        if same_sign:
            return CaseVerdict("B", False, "orthogonal pair, same signs: eps = 0 is optimal")
        return CaseVerdict("C", True, "orthogonal pair, opposite signs: lambda(eps, 0) has a root")
    if same_sign:
        return CaseVerdict("D", True, "non-orthogonal pair, same signs: |lambda| dips below |lambda2|")
    return CaseVerdict("E", True, "non-orthogonal pair, opposite signs: lambda(eps, gamma) has a root")


def _bisect_derivative(pc: PerturbationCase, a: float, b: float, tol: float = 1e-10) -> float:
    fa = lambda_derivative(pc, a)
    while b - a > tol:
        mid = 0.5 * (a + b)
        fm = lambda_derivative(pc, mid)
        if (fm > 0) == (fa > 0):
            a, fa = mid, fm
        else:
            b = mid
    return 0.5 * (a + b)


def solve_epsilon_star(pc: PerturbationCase) -> list[float]:
    """Perturbation sizes that improve on the spectral coarse space.

    Case B returns ``[0.0]``.  Cases C and E return the real roots of the
    numerator of lambda(eps, gamma), where the 2x2 block is nilpotent.  Case D
    returns the minimizer of ``|lambda(eps, gamma)|`` located from the sign
    change of the derivative around the critical points
    ``(-1 -+ sqrt(1 - gamma^2)) / gamma``.
    """
    if abs(pc.gamma) >= 1.0 - 1e-12:
        raise PreconditionError("|gamma| = 1: v1 and v2 do not span a plane")
    verdict = classify_case(pc)
    if verdict.label == "B":
        return [0.0]
    if verdict.label in ("C", "E"):
        qa = pc.lambda1 * pc.lt2
        qb = pc.gamma * (pc.lambda1 * pc.lt2 + pc.lambda2 * pc.lt1)
        qc = pc.lambda2 * pc.lt1
        disc = qb * qb - 4 * qa * qc
        if disc < 0:
            raise PreconditionError(f"negative discriminant {disc:.3e}: inputs violate case {verdict.label}")
        sq = math.sqrt(disc)
        # numerically stable quadratic roots
        t = -0.5 * (qb + math.copysign(sq, qb)) if qb != 0 else 0.5 * sq
        roots = [t / qa, qc / t] if t != 0 else [0.0, 0.0]
        return sorted(roots)
    # case D
    g = pc.gamma
    r = math.sqrt(1.0 - g * g)
    crit = sorted([(-1.0 - r) / g, (-1.0 + r) / g])
    candidates = []
    for c0 in crit:
        w = 1e-3 * max(1.0, abs(c0))
        while True:
            a, b = c0 - w, c0 + w
            try:
                da, db = lambda_derivative(pc, a), lambda_derivative(pc, b)
            except PoleError:
                break
            if (da > 0) != (db > 0):
                candidates.append(_bisect_derivative(pc, a, b))
                break
            w *= 2
            if w > 1e6:
                break
    # a root of the numerator beats any critical point
    qa = pc.lambda1 * pc.lt2
    qb = g * (pc.lambda1 * pc.lt2 + pc.lambda2 * pc.lt1)
    qc = pc.lambda2 * pc.lt1
    disc = qb * qb - 4 * qa * qc
    if disc >= 0:
        candidates += [(-qb - math.sqrt(disc)) / (2 * qa), (-qb + math.sqrt(disc)) / (2 * qa)]
    vals = [(abs(lambda_closed_form(pc, x)), x) for x in candidates]
    return [min(vals)[1]]


def perturbed_coarse_space(e: Eigensystem, epsilon: float, pair: tuple[int, int] = (0, 1)) -> CoarseSpace:
    a, b = pair
    return CoarseSpace(e.vectors[:, a] + epsilon * e.vectors[:, b], kind="perturbed")


@dataclass
class SweepRow:
    epsilon: float
    abs_lambda: Optional[float]
    rho: Optional[float]
    label: str

    @property
    def pole(self) -> bool:
        return self.abs_lambda is None


def sweep_epsilon(p: GridProblem, s: JacobiSmoother, e: Eigensystem, eps_grid: Sequence[float],
                  pair: tuple[int, int] = (0, 1)) -> list[SweepRow]:
    """Closed-form ``|lambda(eps, gamma)|`` next to the assembled ``rho(T(eps))``."""
    base = PerturbationCase.from_eigensystem(e, pair)
    label = classify_case(base).label
    rows = []
    for eps in eps_grid:
        eps = float(eps)
        if abs(_denominator(base, eps)) < POLE_TOL:
            rows.append(SweepRow(eps, None, None, "pole"))
            continue
        lam = abs(lambda_closed_form(base, eps))
        rho = spectral_radius(assemble_T(p, s, perturbed_coarse_space(e, eps, pair)))
        rows.append(SweepRow(eps, lam, rho, label))
    return rows


def write_sweep_csv(path, rows: Sequence[SweepRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_HEADER)
        for r in rows:
            w.writerow([repr(r.epsilon),
                        "" if r.abs_lambda is None else repr(r.abs_lambda),
                        "" if r.rho is None else repr(r.rho),
                        r.label])
