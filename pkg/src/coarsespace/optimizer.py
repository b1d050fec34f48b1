"""Stochastic optimization of the prolongation.

The spectral radius of ``T(P)`` is replaced by the unrolled surrogate
``J(P) = (1/N) sum_i ||T(P)^k z_i||^2`` over Rademacher probes ``z_i``, an
unbiased estimate of ``||T(P)^k||_F^2``.  ``J`` and its gradient are computed
matrix-free: each probe block is pushed through ``k`` sweeps of
smooth -> residual -> restrict -> coarse solve -> prolong, and the gradient
is the reverse sweep of that chain with the restriction tied to ``P^T``.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from .errors import DegenerateCoarseSpaceError, NumericalError, PreconditionError
from .model_problem import GridProblem, JacobiSmoother
from .two_level import CoarseSpace, MetricReport, assemble_T, factor_coarse, metric_report, spectral_radius

log = logging.getLogger(__name__)

TRACE_HEADER = ("step", "objective", "grad_norm", "rho_probe")
# Half-width of the uniform initialization.  Small weights matter: J is
# invariant under P -> sP, so the effective step on the coarse space scales
# like lr / |P|^2.
DEFAULT_INIT_SCALE = 0.02


@dataclass
class OptimizerConfig:
    m: int
    k: int = 10
    num_samples: Optional[int] = None  # None -> n
    learning_rate: float = 0.1
    iterations: int = 2000
    batch_size: Optional[int] = None  # None -> num_samples
    seed: int = 0
    init_scale: float = DEFAULT_INIT_SCALE
    resample: bool = False
    probe_every: int = 50
    smoothing_window: int = 50
    early_stop_window: int = 200
    early_stop_tol: float = 1e-6
    max_halvings: int = 20

    def resolved(self, n: int) -> "OptimizerConfig":
        """Copy with the n-dependent defaults filled in, validated."""
        N = n if self.num_samples is None else self.num_samples
        cfg = OptimizerConfig(**{**asdict(self), "num_samples": N,
                                 "batch_size": N if self.batch_size is None else self.batch_size})
        cfg.validate(n)
        return cfg

    def validate(self, n: int) -> None:
        if not 1 <= self.m <= n:
            raise PreconditionError(f"m={self.m} outside [1, {n}]")
        if self.k < 1:
            raise PreconditionError("k must be >= 1")
        if self.num_samples is not None and self.num_samples < 1:
            raise PreconditionError("num_samples must be >= 1")
        if not self.learning_rate > 0:
            raise PreconditionError("learning_rate must be positive")
        if self.batch_size is not None and not 1 <= self.batch_size <= (self.num_samples or n):
            raise PreconditionError("batch_size must lie in [1, num_samples]")
        if self.iterations < 0 or self.init_scale <= 0 or self.probe_every < 1:
            raise PreconditionError("iterations >= 0, init_scale > 0 and probe_every >= 1 required")


def rademacher_probes(n: int, N: int, seed=None) -> np.ndarray:
    """``N`` Rademacher vectors as the columns of an ``n x N`` array."""
    if N < 1:
        raise PreconditionError("need at least one probe")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return (2 * rng.integers(0, 2, size=(n, N)) - 1).astype(float)


def _forward(p: GridProblem, s: JacobiSmoother, P: np.ndarray, lu, Z: np.ndarray, k: int):
    A = p.A_csr
    sc = s.M_inv_scale
    X = Z
    Rs, Ws = [], []
    for _ in range(k):
        Y = X - sc * (A @ X)           # smoothing
        R = A @ Y                      # residual of the homogeneous problem (sign folded in)
        W = scipy.linalg.lu_solve(lu, P.T @ R)
        X = Y - P @ W                  # coarse correction
        Rs.append(R)
        Ws.append(W)
    return X, Rs, Ws


def objective(p: GridProblem, s: JacobiSmoother, P: np.ndarray, probes: np.ndarray, k: int) -> float:
    """Empirical mean of ``||T(P)^k z||^2``; ``inf`` for a singular coarse matrix."""
    P = np.atleast_2d(np.asarray(P, dtype=float).T).T
    try:
        _, lu = factor_coarse(p.A, P)
    except DegenerateCoarseSpaceError:
        return math.inf
    X, _, _ = _forward(p, s, P, lu, probes, k)
    return float(np.sum(X * X) / probes.shape[1])


def objective_and_gradient(p: GridProblem, s: JacobiSmoother, P: np.ndarray, probes: np.ndarray,
                           k: int) -> tuple[float, np.ndarray]:
    P = np.asarray(P, dtype=float)
    A_c, lu = factor_coarse(p.A, P)
    A = p.A_csr
    AT = A.T.tocsr()
    sc = s.M_inv_scale
    N = probes.shape[1]
    X, Rs, Ws = _forward(p, s, P, lu, probes, k)
    J = float(np.sum(X * X) / N)

    Xb = (2.0 / N) * X
    Pb = np.zeros_like(P)
    Acb = np.zeros_like(A_c)
    for R, W in zip(reversed(Rs), reversed(Ws)):
        Pb -= Xb @ W.T                                  # prolongation
        Sb = scipy.linalg.lu_solve(lu, -(P.T @ Xb), trans=1)
        Acb -= Sb @ W.T                                 # d(A_c^{-1}) = -A_c^{-1} dA_c A_c^{-1}
        Pb += R @ Sb.T                                  # restriction P^T, transposed back
        Yb = Xb + AT @ (P @ Sb)
        Xb = Yb - sc * (AT @ Yb)                        # G^T
    # A_c = P^T A P
    Pb += A @ (P @ Acb.T) + AT @ (P @ Acb)
    return J, Pb


def gradient(p: GridProblem, s: JacobiSmoother, P: np.ndarray, probes: np.ndarray, k: int) -> np.ndarray:
    return objective_and_gradient(p, s, P, probes, k)[1]


def dense_objective(T: np.ndarray, probes: np.ndarray, k: int) -> float:
    """Reference value of the objective through an explicit matrix power."""
    Y = np.linalg.matrix_power(T, k) @ probes
    return float(np.sum(Y * Y) / probes.shape[1])


@dataclass
class OptimizationTrace:
    config: OptimizerConfig
    objective: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    rho_probe: dict = field(default_factory=dict)
    step_halvings: int = 0
    aborted: bool = False
    stopped_early: bool = False
    P_initial: Optional[np.ndarray] = field(default=None, repr=False)
    P_final: Optional[np.ndarray] = field(default=None, repr=False)
    P_best: Optional[np.ndarray] = field(default=None, repr=False)
    best_step: int = 0
    best_rho: float = math.inf
    report: Optional[MetricReport] = None

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_HEADER)
            for step, (J, g) in enumerate(zip(self.objective, self.grad_norm)):
                rho = self.rho_probe.get(step)
                w.writerow([step, repr(J), repr(g), "" if rho is None else repr(rho)])


def smoothed(values, window: int) -> np.ndarray:
    alpha = 2.0 / (window + 1)
    out = np.empty(len(values))
    acc = values[0]
    for i, v in enumerate(values):
        acc = alpha * v + (1 - alpha) * acc
        out[i] = acc
    return out


def optimize(p: GridProblem, s: JacobiSmoother, cfg: OptimizerConfig,
             callback: Optional[Callable[[int, float], None]] = None) -> OptimizationTrace:
    """Plain gradient descent on the surrogate, keeping the best-rho iterate.

    ``rho(T(P))`` is probed every ``cfg.probe_every`` steps and at the end.
    A step that makes the coarse matrix singular is retried with half the
    step size, at most ``cfg.max_halvings`` times, before the run is aborted.
    """
    cfg = cfg.resolved(p.n)
    rng = np.random.default_rng(cfg.seed)
    P = rng.uniform(-cfg.init_scale, cfg.init_scale, size=(p.n, cfg.m))
    pool = rademacher_probes(p.n, cfg.num_samples, rng)
    trace = OptimizationTrace(config=cfg, P_initial=P.copy())
    ema_alpha = 2.0 / (cfg.smoothing_window + 1)
    ema = None
    ema_hist = []

    def batch():
        if cfg.resample:
            return rademacher_probes(p.n, cfg.batch_size, rng)
        if cfg.batch_size == cfg.num_samples:
            return pool
        idx = rng.choice(cfg.num_samples, size=cfg.batch_size, replace=False)
        return pool[:, idx]

    def probe(step, P):
        rho = spectral_radius(assemble_T(p, s, CoarseSpace(P)))
        trace.rho_probe[step] = rho
        if rho < trace.best_rho:
            trace.best_rho, trace.best_step, trace.P_best = rho, step, P.copy()

    Z = batch()
    try:
        J, g = objective_and_gradient(p, s, P, Z, cfg.k)
    except DegenerateCoarseSpaceError as exc:
        raise NumericalError(f"degenerate initial prolongation: {exc}") from exc
    step = 0
    while True:
        trace.objective.append(J)
        trace.grad_norm.append(float(np.linalg.norm(g)))
        if step % cfg.probe_every == 0:
            probe(step, P)
        if callback is not None:
            callback(step, J)
        ema = J if ema is None else ema_alpha * J + (1 - ema_alpha) * ema
        ema_hist.append(ema)
        if step >= cfg.iterations:
            break
        w = cfg.early_stop_window
        if step >= w and ema_hist[-w - 1] - ema <= cfg.early_stop_tol * abs(ema_hist[-w - 1]):
            trace.stopped_early = True
            break

        lr = cfg.learning_rate
        Z = batch()
        for _ in range(cfg.max_halvings + 1):
            P_new = P - lr * g
            try:
                J_new, g_new = objective_and_gradient(p, s, P_new, Z, cfg.k)
                if np.isfinite(J_new):
                    break
            except DegenerateCoarseSpaceError:
                pass
            lr *= 0.5
            trace.step_halvings += 1
        else:
            log.warning("step %d: coarse matrix singular after %d halvings, aborting",
                        step, cfg.max_halvings)
            trace.aborted = True
            break
        P, J, g = P_new, J_new, g_new
        step += 1

    if step not in trace.rho_probe:
        probe(step, P)
    trace.P_final = P
    best = assemble_T(p, s, CoarseSpace(trace.P_best, kind="optimized"))
    trace.report = metric_report(best, best_step=trace.best_step, seed=cfg.seed, k=cfg.k)
    return trace
