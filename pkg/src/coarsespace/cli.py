"""Command-line experiment driver.

Usage::

    coarsespace figure1 --out results/fig1
    coarsespace table1 --out results/tab1 --iters 2000 --seed 0
    coarsespace sweep --c 10 --omega 1 --eps-min -5 --eps-max 5 --eps-points 1001
    coarsespace optimize --c 0 --omega 1 --m 15
    coarsespace classify --c 10 --omega 0.5

Exit status is 0 on success, 2 on violated preconditions and 3 on numerical
failures.  ``COARSESPACE_THREADS`` caps the number of worker threads.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import NumericalError, PreconditionError
from .model_problem import build_problem, build_smoother, eigensystem, write_coordinate
from .optimizer import DEFAULT_INIT_SCALE, OptimizerConfig, optimize
from .perturbation import (
    PerturbationCase,
    classify_case,
    lambda_closed_form,
    perturbed_coarse_space,
    solve_epsilon_star,
    sweep_epsilon,
    write_sweep_csv,
)
from .two_level import (
    CoarseSpace,
    assemble_T,
    metric_report,
    preconditioned_condition,
    spectral_coarse_space,
    spectral_coarse_space_choices,
    spectral_radius,
)

log = logging.getLogger("coarsespace")

EXPERIMENTS = ("figure1", "table1", "sweep", "optimize", "classify")
# 10 interior points per direction; this grid reproduces the reported values.
DEFAULT_H = "1/11"
PANELS = ((0.0, 0.5), (0.0, 1.0), (10.0, 0.5), (10.0, 1.0))
TABLE_M = (1, 5, 10, 15)
TABLE_HEADER = ("c", "omega", "m", "coarse_kind", "rho", "energy_norm", "kappa2")


@dataclass
class ExperimentManifest:
    experiment: str
    h: str = DEFAULT_H
    panels: list = field(default_factory=lambda: [list(p) for p in PANELS])
    m: list = field(default_factory=lambda: list(TABLE_M))
    eps_min: float = -3.0
    eps_max: float = 3.0
    eps_points: int = 601
    k: int = 10
    samples: Optional[int] = None
    lr: float = 0.1
    iters: int = 2000
    init_scale: float = DEFAULT_INIT_SCALE
    tie_break: str = "negative_first"
    seed: int = 0
    out: str = "results"

    def validate(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise PreconditionError(f"unknown experiment {self.experiment!r}")
        if self.eps_points < 2 or not self.eps_min < self.eps_max:
            raise PreconditionError("epsilon grid needs eps_min < eps_max and >= 2 points")
        Fraction(self.h)  # raises ValueError on garbage

    def eps_grid(self) -> np.ndarray:
        grid = np.linspace(self.eps_min, self.eps_max, self.eps_points)
        return np.round(grid, 12) + 0.0  # drop -0.0 and representation noise

    def optimizer_config(self, m: int) -> OptimizerConfig:
        return OptimizerConfig(m=m, k=self.k, num_samples=self.samples, learning_rate=self.lr,
                               iterations=self.iters, seed=self.seed, init_scale=self.init_scale)

    def dump(self, path: Path) -> None:
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("COARSESPACE_THREADS", os.cpu_count() or 1)))
    except ValueError:
        return 1


def _pmap(fn, items):
    """Ordered parallel map; results come back in input order."""
    items = list(items)
    workers = min(_threads(), len(items)) or 1
    if workers == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _tag(c: float, omega: float) -> str:
    return f"c{c:g}_omega{omega:g}"


def _setup(man: ExperimentManifest, c: float, omega: float):
    p = build_problem(man.h, c)
    s = build_smoother(p, omega)
    return p, s, eigensystem(p, s, tie_break=man.tie_break)


def classify_panel(man: ExperimentManifest, c: float, omega: float) -> dict:
    """Case data, verdict and epsilon* for one (c, omega), cross-checked against assembled T."""
    p, s, e = _setup(man, c, omega)
    pc = PerturbationCase.from_eigensystem(e)
    verdict = classify_case(pc)
    out = {"c": c, "omega": omega, "h": p.h, "n": p.n,
           "lambda1": pc.lambda1, "lambda2": pc.lambda2, "lambda3": pc.lambda3,
           "lt1": pc.lt1, "lt2": pc.lt2, "gamma": pc.gamma,
           "strict_hypothesis": pc.strict,
           "case": verdict.label, "improvable": verdict.improvable,
           "description": verdict.description}
    eps_star = solve_epsilon_star(pc)
    checks = []
    for eps in eps_star:
        lam = abs(lambda_closed_form(pc, eps))
        rho = spectral_radius(assemble_T(p, s, perturbed_coarse_space(e, eps)))
        checks.append({"epsilon": eps, "abs_lambda": lam, "rho_T": rho,
                       "predicted_rho": max(lam, abs(pc.lambda3))})
    out["epsilon_star"] = checks
    return out


def run_figure1(man: ExperimentManifest) -> list[Path]:
    out = Path(man.out)
    out.mkdir(parents=True, exist_ok=True)
    grid = man.eps_grid()

    def panel(cw):
        c, omega = cw
        p, s, e = _setup(man, c, omega)
        return sweep_epsilon(p, s, e, grid), classify_panel(man, c, omega)

    results = _pmap(panel, [tuple(map(float, pw)) for pw in man.panels])
    paths = []
    for (c, omega), (rows, verdict) in zip(man.panels, results):
        path = out / f"{man.experiment}_{_tag(c, omega)}.csv"
        write_sweep_csv(path, rows)
        valid = [r for r in rows if not r.pole]
        best = min(valid, key=lambda r: r.rho)
        verdict["grid_min_rho"] = {"epsilon": best.epsilon, "rho_T": best.rho}
        (out / f"{man.experiment}_{_tag(c, omega)}.json").write_text(json.dumps(verdict, indent=2) + "\n")
        paths.append(path)
        print(f"{_tag(c, omega)}: case {verdict['case']}, min rho(T) on grid "
              f"{best.rho:.2f} at eps={best.epsilon:g}")
    man.dump(out / "manifest.json")
    return paths


def table1_cell(man: ExperimentManifest, c: float, omega: float, m: int) -> list[dict]:
    """Spectral and optimized metrics for one (c, omega, m) cell."""
    p, s, e = _setup(man, c, omega)
    rows = []
    spec_t = assemble_T(p, s, spectral_coarse_space(e, m))
    trace = optimize(p, s, man.optimizer_config(m))
    opt_t = assemble_T(p, s, CoarseSpace(trace.P_best, kind="optimized"))
    for kind, t, rep in (("spectral", spec_t, metric_report(spec_t)),
                         ("optimized", opt_t, trace.report)):
        # re-verify against a fresh assembly before emitting
        fresh = spectral_radius(assemble_T(p, s, t.coarse))
        if abs(fresh - rep.rho) > 1e-9:
            raise NumericalError(f"rho mismatch {fresh} vs {rep.rho} in cell {(c, omega, m, kind)}")
        rec = {"c": c, "omega": omega, "m": m, "coarse_kind": kind, "rho": rep.rho,
               "energy_norm": rep.energy_norm if c == 0 else None,
               "kappa2": rep.kappa2 if omega == 1 else None,
               "kappa2_eig": rep.kappa2_eig, "h": p.h, "seed": man.seed}
        if kind == "spectral" and omega == 1:
            # the spectral space is not unique when m cuts a cluster of tied |lambda|
            ks = [preconditioned_condition(assemble_T(p, s, cs)) for _, cs in spectral_coarse_space_choices(e, m)]
            rec["kappa2_tied_range"] = [min(ks), max(ks)]
        if kind == "optimized":
            rec.update(best_step=trace.best_step, steps=len(trace.objective) - 1,
                       final_objective=trace.objective[-1])
        rows.append(rec)
    return rows


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def run_table1(man: ExperimentManifest) -> Path:
    out = Path(man.out)
    out.mkdir(parents=True, exist_ok=True)
    cells = [(float(c), float(w), int(m)) for c, w in man.panels for m in man.m]
    results = _pmap(lambda cell: table1_cell(man, *cell), cells)
    records = [r for rows in results for r in rows]
    path = out / "table1.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TABLE_HEADER)
        for r in records:
            w.writerow([f"{r['c']:g}", f"{r['omega']:g}", r["m"], r["coarse_kind"],
                        _fmt(r["rho"]), _fmt(r["energy_norm"]), _fmt(r["kappa2"])])
    (out / "table1.json").write_text(json.dumps(records, indent=2, sort_keys=True) + "\n")
    man.dump(out / "manifest.json")
    _print_table(records, man)
    return path


def _print_table(records: list[dict], man: ExperimentManifest) -> None:
    index = {(r["c"], r["omega"], r["m"], r["coarse_kind"]): r for r in records}
    for metric, label in (("rho", "rho(T)"), ("energy_norm", "||T||_A"), ("kappa2", "kappa_2")):
        print(label)
        for c, w in man.panels:
            cells = []
            for m in man.m:
                a = index[(float(c), float(w), int(m), "spectral")][metric]
                b = index[(float(c), float(w), int(m), "optimized")][metric]
                if a is None:
                    break
                cells.append(f"{a:.2f} - {b:.2f}")
            if cells:
                print(f"  c={c:<4g} omega={w:<4g} " + "  ".join(cells))


def run_sweep(man: ExperimentManifest) -> list[Path]:
    return run_figure1(man)


def run_optimize(man: ExperimentManifest) -> Path:
    out = Path(man.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for c, omega in man.panels:
        p, s, e = _setup(man, c, omega)
        for m in man.m:
            trace = optimize(p, s, man.optimizer_config(int(m)))
            tag = f"{_tag(c, omega)}_m{m}"
            trace.write_csv(out / f"trace_{tag}.csv")
            write_coordinate(out / f"P_{tag}.coo", trace.P_best)
            spec = metric_report(assemble_T(p, s, spectral_coarse_space(e, int(m))))
            report = {"optimized": asdict(trace.report), "spectral": asdict(spec),
                      "aborted": trace.aborted, "stopped_early": trace.stopped_early}
            (out / f"report_{tag}.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
            print(f"{tag}: rho spectral {spec.rho:.2f} -> optimized {trace.report.rho:.2f} "
                  f"(best at step {trace.best_step})")
            paths.append(out / f"trace_{tag}.csv")
    man.dump(out / "manifest.json")
    return paths[0]


def run_case_classify(man: ExperimentManifest) -> Path:
    out = Path(man.out)
    out.mkdir(parents=True, exist_ok=True)
    report = [classify_panel(man, float(c), float(w)) for c, w in man.panels]
    path = out / "classify.json"
    path.write_text(json.dumps(report, indent=2) + "\n")
    for r in report:
        eps = ", ".join(f"{x['epsilon']:.4g}" for x in r["epsilon_star"])
        print(f"{_tag(r['c'], r['omega'])}: case {r['case']}, eps* = [{eps}]")
    man.dump(out / "manifest.json")
    return path


RUNNERS = {"figure1": run_figure1, "table1": run_table1, "sweep": run_sweep,
           "optimize": run_optimize, "classify": run_case_classify}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="coarsespace", description=__doc__.splitlines()[0])
    ap.add_argument("experiment", choices=EXPERIMENTS)
    ap.add_argument("--h", help="mesh width, e.g. 1/11 (default: 1/11, 10 interior points)")
    ap.add_argument("--c", type=float, help="advection coefficient (single panel)")
    ap.add_argument("--omega", type=float, help="Jacobi damping (single panel)")
    ap.add_argument("--m", type=int, nargs="+", help="coarse dimension(s)")
    ap.add_argument("--eps-min", type=float)
    ap.add_argument("--eps-max", type=float)
    ap.add_argument("--eps-points", type=int)
    ap.add_argument("--k", type=int, help="power of T in the surrogate")
    ap.add_argument("--samples", type=int, help="number of Rademacher probes (default n)")
    ap.add_argument("--lr", type=float)
    ap.add_argument("--iters", type=int)
    ap.add_argument("--init-scale", type=float)
    ap.add_argument("--tie-break", choices=("negative_first", "positive_first"))
    ap.add_argument("--seed", type=int)
    ap.add_argument("--out")
    ap.add_argument("--config", help="JSON manifest; explicit flags override it")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def manifest_from_args(args: argparse.Namespace) -> ExperimentManifest:
    data = {"experiment": args.experiment, "out": f"results/{args.experiment}"}
    if args.config:
        data.update(json.loads(Path(args.config).read_text()))
        data["experiment"] = args.experiment
    if args.experiment in ("sweep", "optimize", "classify") and "panels" not in data:
        data["panels"] = [[0.0, 1.0]]
    for key in ("h", "eps_min", "eps_max", "eps_points", "k", "samples", "lr", "iters",
                "init_scale", "tie_break", "seed", "out", "m"):
        val = getattr(args, key)
        if val is not None:
            data[key] = val
    if args.c is not None or args.omega is not None:
        c = args.c if args.c is not None else 0.0
        w = args.omega if args.omega is not None else 1.0
        data["panels"] = [[c, w]]
    man = ExperimentManifest(**data)
    man.validate()
    return man


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        man = manifest_from_args(args)
        RUNNERS[man.experiment](man)
    except PreconditionError as exc:
        log.error("precondition violated: %s", exc)
        return 2
    except (ValueError, TypeError) as exc:
        log.error("invalid input: %s", exc)
        return 2
    except NumericalError as exc:
        log.error("numerical failure: %s", exc)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
