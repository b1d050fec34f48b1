"""Finite-difference advection-diffusion model problem and its Jacobi smoother.

The operator is ``-Δu + c (u_x + u_y)`` on the unit square with homogeneous
Dirichlet data, discretized with the 5-point Laplacian and centered
differences for the advection terms.  Interior nodes are numbered
lexicographically with x running fastest, so node ``(ix, iy)`` has index
``iy * q + ix``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Optional

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .errors import EigensolverError, PreconditionError

TIE_BREAKS = ("negative_first", "positive_first")

# |lambda| values closer than this are treated as tied when ordering modes.
TIE_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class GridProblem:
    h: float
    c: float
    q: int
    A: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.q * self.q

    @property
    def d(self) -> float:
        return 4.0 / self.h**2

    @property
    def is_symmetric(self) -> bool:
        return self.c == 0

    @property
    def real_spectrum(self) -> bool:
        """True when centered advection keeps the spectrum of A real (c <= 2/h)."""
        return self.c * self.h <= 2.0

    @cached_property
    def A_csr(self) -> sp.csr_matrix:
        return sp.csr_matrix(self.A)

    @property
    def couplings(self) -> tuple[float, float]:
        """Magnitudes of the (west/south, east/north) off-diagonal couplings."""
        return (1.0 / self.h**2 + self.c / (2 * self.h),
                1.0 / self.h**2 - self.c / (2 * self.h))


@dataclass(frozen=True, eq=False)
class JacobiSmoother:
    problem: GridProblem = field(repr=False)
    omega: float
    G: np.ndarray = field(repr=False)

    @property
    def M_inv_scale(self) -> float:
        """Scalar action of omega * D^{-1}."""
        return self.omega * self.problem.h**2 / 4.0

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Matrix-free ``G @ x``; works on vectors and on column blocks."""
        return x - self.M_inv_scale * (self.problem.A_csr @ x)


@dataclass(frozen=True, eq=False)
class Eigensystem:
    """Eigenpairs of G (and A), sorted by descending ``|lambda|``.

    ``values_G[j]``, ``values_A[j]`` and ``vectors[:, j]`` describe the
    (j+1)-th slowest mode.  ``ordering`` is the permutation that was applied
    to the raw solver output; ``modes`` holds the ``(i, j)`` frequency pair of
    each column when the analytic path produced it.
    """

    values_G: np.ndarray
    values_A: np.ndarray
    vectors: np.ndarray = field(repr=False)
    ordering: np.ndarray = field(repr=False)
    multiplicity: np.ndarray = field(repr=False)
    tie_break: str = "negative_first"
    method: str = "analytic"
    modes: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return len(self.values_G)

    def cluster(self, j: int) -> tuple[int, int]:
        """Half-open index range of modes whose |lambda| ties with mode ``j``."""
        mags = np.abs(self.values_G)
        lo = j
        while lo > 0 and abs(mags[lo - 1] - mags[j]) <= TIE_TOL:
            lo -= 1
        hi = j + 1
        while hi < self.n and abs(mags[hi] - mags[j]) <= TIE_TOL:
            hi += 1
        return lo, hi


def _inverse_mesh_width(h) -> int:
    if isinstance(h, str):
        h = Fraction(h)
    if isinstance(h, Fraction):
        inv = 1 / h
        if inv.denominator != 1:
            raise PreconditionError(f"1/h must be an integer, got h={h}")
        return int(inv)
    h = float(h)
    if not h > 0:
        raise PreconditionError(f"mesh width must be positive, got {h}")
    inv = 1.0 / h
    N = int(round(inv))
    if abs(inv - N) > 1e-9 * max(N, 1):
        raise PreconditionError(f"1/h must be an integer, got h={h}")
    return N


def build_problem(h, c: float) -> GridProblem:
    """Assemble the model problem on a uniform grid of mesh width ``h``.

    ``h`` may be a float, a :class:`fractions.Fraction` or a string such as
    ``"1/11"``; ``1/h`` must be an integer >= 2, giving ``q = 1/h - 1``
    interior points per direction.
    """
    N = _inverse_mesh_width(h)
    if N < 2:
        raise PreconditionError(f"need 1/h >= 2, got 1/h={N}")
    c = float(c)
    if not c >= 0:
        raise PreconditionError(f"advection coefficient must be >= 0, got {c}")
    h = 1.0 / N
    q = N - 1
    # integer N keeps the stencil exact: 1/h^2 = N^2, c/(2h) = c N / 2
    west = -float(N * N) - c * N / 2
    east = -float(N * N) + c * N / 2
    T1 = sp.diags([np.full(q - 1, west), np.full(q - 1, east)], [-1, 1], shape=(q, q))
    I = sp.identity(q)
    A = (sp.kron(I, T1) + sp.kron(T1, I)).toarray()
    A[np.diag_indices(q * q)] = 4.0 * N * N
    return GridProblem(h=h, c=c, q=q, A=A)


def build_smoother(p: GridProblem, omega: float) -> JacobiSmoother:
    omega = float(omega)
    if not 0.0 < omega <= 1.0:
        raise PreconditionError(f"omega must lie in (0, 1], got {omega}")
    G = np.eye(p.n) - omega * p.h**2 / 4.0 * p.A
    return JacobiSmoother(problem=p, omega=omega, G=G)


def analytic_modes(p: GridProblem):
    """Closed-form eigenpairs of A in raw (lexicographic mode) order.

    For ``c < 2/h`` the matrix is diagonally similar to a symmetric one, so
    the eigenvectors are discrete sines weighted by ``r**(ix + iy)`` with
    ``r = sqrt(west / east)``.  Returns ``(values_A, vectors, modes)`` with
    unnormalized vectors.
    """
    a, b = p.couplings
    if b <= 0:
        raise EigensolverError("A is not diagonalizable for c >= 2/h")
    q, h = p.q, p.h
    k = np.arange(1, q + 1)
    # S[idx, freq] = sin(freq * pi * x_idx)
    S = np.sin(np.pi * h * np.outer(k, k))
    log_r = 0.5 * (np.log(a) - np.log(b))
    idx = np.arange(q)
    weight = np.exp(log_r * (idx - (q - 1)))  # <= 1, avoids overflow
    W = weight[:, None] * S
    # column (j-1)*q + (i-1) holds mode (i, j); entry iy*q + ix holds W[iy, j] W[ix, i]
    vectors = np.kron(W, W)
    ii, jj = np.meshgrid(k, k)  # jj varies slowest
    modes = np.column_stack([ii.ravel(), jj.ravel()])
    cos = np.cos(np.pi * h * k)
    values_A = 4.0 / h**2 - 2.0 * np.sqrt(a * b) * (cos[modes[:, 0] - 1] + cos[modes[:, 1] - 1])
    return values_A, vectors, modes


def _normalize_columns(V: np.ndarray) -> np.ndarray:
    V = V / np.linalg.norm(V, axis=0)
    mags = np.abs(V)
    # first entry within round-off of the column maximum fixes the sign
    first = np.argmax(mags >= mags.max(axis=0) * (1 - 1e-8), axis=0)
    signs = np.sign(V[first, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


def sort_order(values: np.ndarray, tie_break: str = "negative_first") -> np.ndarray:
    """Permutation sorting eigenvalues by descending magnitude.

    Magnitudes within ``TIE_TOL`` are tied; ties are broken by sign (negative
    or positive first, per ``tie_break``) and then by ascending raw index.
    """
    if tie_break not in TIE_BREAKS:
        raise PreconditionError(f"unknown tie_break {tie_break!r}")
    values = np.asarray(values, dtype=float)
    mags = np.abs(values)
    coarse = np.argsort(-mags, kind="stable")
    group = np.zeros(len(values), dtype=int)
    g = 0
    for a, b in zip(coarse[:-1], coarse[1:]):
        if mags[a] - mags[b] > TIE_TOL:
            g += 1
        group[b] = g
    sgn = np.sign(np.where(np.abs(values) <= TIE_TOL, 0.0, values))
    sign_key = sgn if tie_break == "negative_first" else -sgn
    return np.lexsort((np.arange(len(values)), sign_key, group))


def _repair_degenerate(G: np.ndarray, values: np.ndarray, V: np.ndarray) -> np.ndarray:
    # LAPACK may return nearly parallel vectors for a repeated eigenvalue of a
    # nonnormal matrix; take the eigenspace from the null space of G - lambda I.
    V = V.copy()
    done = np.zeros(len(values), dtype=bool)
    for j in range(len(values)):
        if done[j]:
            continue
        members = np.flatnonzero(np.abs(values - values[j]) <= 1e-8)
        done[members] = True
        if len(members) == 1:
            continue
        lam = values[members].mean()
        _, _, Vh = np.linalg.svd(G - lam * np.eye(len(G)))
        V[:, members] = Vh[-len(members):].T
        values[members] = lam
    return V


def _multiplicities(values: np.ndarray) -> np.ndarray:
    diff = np.abs(values[:, None] - values[None, :])
    return (diff <= TIE_TOL).sum(axis=1)


def eigensystem(p: GridProblem, s: JacobiSmoother, method: str = "auto",
                tie_break: str = "negative_first") -> Eigensystem:
    """Eigenpairs shared by G and A, ordered slowest mode first.

    ``method="analytic"`` (the default via ``"auto"``) uses the closed-form
    modes, which gives a canonical basis inside degenerate eigenspaces;
    ``method="numeric"`` calls the dense LAPACK eigensolver.
    """
    if not p.real_spectrum:
        raise PreconditionError(f"c={p.c} exceeds 2/h={2 / p.h}; spectrum is complex")
    scale = s.M_inv_scale
    if method in ("auto", "analytic"):
        values_A, V, modes = analytic_modes(p)
        V = _normalize_columns(V)
        values_G = 1.0 - scale * values_A
        method = "analytic"
    elif method == "numeric":
        modes = None
        try:
            if p.is_symmetric:
                values_G, V = scipy.linalg.eigh(s.G)
            else:
                values_G, V = scipy.linalg.eig(s.G)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise EigensolverError(str(exc)) from exc
        if np.iscomplexobj(values_G):
            if np.abs(values_G.imag).max() > 1e-8 * max(np.abs(values_G).max(), 1.0):
                raise EigensolverError("complex eigenvalues in the real-spectrum regime")
            values_G = values_G.real
            V = V.real
        V = _repair_degenerate(s.G, values_G, V)
        if np.linalg.cond(V) > 1e12:
            raise EigensolverError("eigenvector matrix is numerically singular")
        V = _normalize_columns(V)
        # Rayleigh quotients give the eigenvalues of A independently of G
        values_A = np.einsum("ij,ij->j", V, p.A @ V)
    else:
        raise PreconditionError(f"unknown eigensolver method {method!r}")

    order = sort_order(values_G, tie_break)
    values_G = values_G[order]
    return Eigensystem(
        values_G=values_G,
        values_A=values_A[order],
        vectors=V[:, order],
        ordering=order,
        multiplicity=_multiplicities(values_G),
        tie_break=tie_break,
        method=method,
        modes=None if modes is None else modes[order],
    )


def jacobi_spectrum(q: int, omega: float, h: float) -> np.ndarray:
    """Eigenvalues of G for c = 0 from the tensor-product formula (unsorted)."""
    k = np.arange(1, q + 1)
    cos = np.cos(np.pi * k * h)
    lt = (4.0 - 2.0 * cos[:, None] - 2.0 * cos[None, :]).ravel() / h**2
    return 1.0 - omega * h**2 / 4.0 * lt


def write_coordinate(path, M: np.ndarray, tol: float = 0.0) -> None:
    """Write ``M`` as ``row col value`` lines with 1-based indices."""
    M = np.atleast_2d(np.asarray(M))
    rows, cols = np.nonzero(np.abs(M) > tol)
    with open(path, "w") as fh:
        fh.write(f"% {M.shape[0]} {M.shape[1]}\n")
        for r, c in zip(rows, cols):
            fh.write(f"{r + 1} {c + 1} {float(M[r, c])!r}\n")


def read_coordinate(path) -> np.ndarray:
    with open(path) as fh:
        header = fh.readline().split()
        M = np.zeros((int(header[1]), int(header[2])))
        for line in fh:
            r, c, v = line.split()
            M[int(r) - 1, int(c) - 1] = float(v)
    return M
