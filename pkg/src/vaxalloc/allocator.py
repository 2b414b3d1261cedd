"""Budget-constrained vaccine allocation with a fairness-efficiency trade-off.

Two solvers over the feasible set {v : v_prev <= v <= 1, sum((v - v_prev) * P)
<= budget}:

* an exact greedy solver for the efficiency-only objective (continuous
  knapsack: fill countries in order of risk reduction per dose), and
* a projected-gradient solver with Armijo backtracking and deterministic
  multi-starts for the Jain-index-weighted objective, which is non-concave
  in the fairness term.

Rates are per-country vaccination fractions in [0, 1]; doses convert via
(v_new - v_prev) * population. Allocation never lowers a country's rate:
the box lower bound is the prior rate, which makes the aggregate
lower bound on distributed doses redundant.
"""

from __future__ import annotations

import csv
import datetime as dt
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .errors import DataQualityWarning, InfeasibleProblemError
from .ingest import CountryStatic
from .regression import RiskModelFit
from .risk_metrics import RiskPanel

#: Below this sum of squares the Jain index is taken as 1 with zero gradient
#: (the index is 0/0 at the origin).
EPS_ZERO = 1e-15

_ARMIJO_C = 1e-4
_ALPHA_MIN = 1e-18
_ALPHA_MAX = 1e9
_PROJECTION_ITERS = 200

ALLOCATION_COLUMNS = (
    "country_id",
    "population",
    "v_prev",
    "v_new",
    "doses",
    "doses_rounded",
    "risk_before",
    "risk_after",
    "risk_reduction",
)

SWEEP_COLUMNS = ("omega", "jain", "total_risk_reduction", "converged", "iterations")


class CountryTerm(NamedTuple):
    """One country's linear risk terms and allocation state."""

    country_id: str
    beta0_tilde: float
    beta1: float
    beta2: float
    death_rate: float
    v_prev: float
    population: float


@dataclass
class AllocationProblem:
    """Vectorized allocation inputs; one entry per country, order preserved."""

    country_ids: list[str]
    beta0_tilde: np.ndarray
    beta1: np.ndarray
    beta2: np.ndarray
    death_rate: np.ndarray
    v_prev: np.ndarray
    population: np.ndarray
    budget_doses: float
    omega: float = 0.0

    def __post_init__(self) -> None:
        for name in ("beta0_tilde", "beta1", "beta2", "death_rate", "v_prev", "population"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        j = len(self.country_ids)
        if j < 1:
            raise ValueError("allocation problem needs at least one country")
        for name in ("beta0_tilde", "beta1", "beta2", "death_rate", "v_prev", "population"):
            if getattr(self, name).shape != (j,):
                raise ValueError(f"{name} must have one entry per country")
        if np.any(self.population <= 0):
            raise ValueError("populations must be positive")
        if np.any(self.v_prev < 0):
            raise ValueError("prior vaccination rates must be >= 0")
        if np.any(self.v_prev > 1):
            raise InfeasibleProblemError(
                "prior vaccination rate above 1; feasible set is empty"
            )
        if self.budget_doses < 0:
            raise ValueError("dose budget must be >= 0")
        if self.omega < 0:
            raise ValueError("fairness weight must be >= 0")
        self.budget_doses = float(self.budget_doses)
        self.omega = float(self.omega)

    @property
    def j_count(self) -> int:
        return len(self.country_ids)

    @classmethod
    def from_terms(
        cls, terms: list[CountryTerm], budget_doses: float, omega: float = 0.0
    ) -> "AllocationProblem":
        return cls(
            country_ids=[t.country_id for t in terms],
            beta0_tilde=[t.beta0_tilde for t in terms],
            beta1=[t.beta1 for t in terms],
            beta2=[t.beta2 for t in terms],
            death_rate=[t.death_rate for t in terms],
            v_prev=[t.v_prev for t in terms],
            population=[t.population for t in terms],
            budget_doses=budget_doses,
            omega=omega,
        )


class SolverReport(NamedTuple):
    iterations: int
    converged: bool
    grad_norm: float


@dataclass
class AllocationResult:
    """Solver output: new rates, dose counts, risk accounting, diagnostics."""

    v_new: np.ndarray
    doses: np.ndarray
    risk_before: np.ndarray
    risk_after: np.ndarray
    risk_reduction: np.ndarray
    jain: float
    objective: float
    solver_report: SolverReport


@dataclass
class SolverConfig:
    """Projected-gradient settings; all randomness flows from `seed`."""

    max_iters: int = 10000
    tol: float = 1e-8
    backtrack: float = 0.5
    n_starts: int = 8
    seed: int = 0


@dataclass
class SweepEntry:
    omega: float
    result: AllocationResult | None
    error: str | None = None


def jain_index(v) -> float:
    """Jain's fairness index (sum v)^2 / (J * sum v^2).

    Equals 1 for any all-equal positive vector and 1/J for a one-hot vector.
    The all-zero vector is defined as perfectly fair (index 1).
    """
    arr = np.asarray(v, dtype=float)
    if arr.size == 0:
        raise ValueError("Jain index needs at least one entry")
    if np.any(arr < 0):
        raise ValueError("Jain index is defined for nonnegative entries only")
    q = float(arr @ arr)
    if q < EPS_ZERO:
        return 1.0
    s = float(arr.sum())
    return (s * s) / (arr.size * q)


def fairness_gradient(v) -> np.ndarray:
    """Gradient of :func:`jain_index`; zero at the guarded origin.

    Component k is 2*S*(Q - S*v_k) / (J*Q^2) with S = sum v, Q = sum v^2.
    """
    arr = np.asarray(v, dtype=float)
    if arr.size == 0:
        raise ValueError("Jain gradient needs at least one entry")
    if np.any(arr < 0):
        raise ValueError("Jain gradient is defined for nonnegative entries only")
    return _jain_gradient(arr)


def _jain_gradient(arr: np.ndarray) -> np.ndarray:
    q = float(arr @ arr)
    if q < EPS_ZERO:
        return np.zeros_like(arr)
    s = float(arr.sum())
    return (2.0 * s) * (q - s * arr) / (arr.size * q * q)


def objective_value(p: AllocationProblem, v) -> float:
    """Aggregate predicted risk at rates `v`, minus omega times the Jain index."""
    arr = np.asarray(v, dtype=float)
    if arr.shape != (p.j_count,):
        raise ValueError("candidate rates must have one entry per country")
    risk = float(np.sum(p.beta0_tilde + p.beta1 * p.death_rate + p.beta2 * arr))
    return risk - p.omega * jain_index(arr)


def risk_reduction(p: AllocationProblem, v_new) -> np.ndarray:
    """Per-country risk drop from raising rates: -beta2 * (v_new - v_prev)."""
    arr = np.asarray(v_new, dtype=float)
    return -p.beta2 * (arr - p.v_prev)


def _per_country_risk(p: AllocationProblem, v: np.ndarray) -> np.ndarray:
    return p.beta0_tilde + p.beta1 * p.death_rate + p.beta2 * v


def _build_result(
    p: AllocationProblem, v_new: np.ndarray, report: SolverReport, objective: float
) -> AllocationResult:
    return AllocationResult(
        v_new=v_new,
        doses=(v_new - p.v_prev) * p.population,
        risk_before=_per_country_risk(p, p.v_prev),
        risk_after=_per_country_risk(p, v_new),
        risk_reduction=risk_reduction(p, v_new),
        jain=jain_index(v_new),
        objective=objective,
        solver_report=report,
    )


def solve_op_greedy(p: AllocationProblem) -> AllocationResult:
    """Exact efficiency-only allocation (the fairness weight is ignored).

    The objective is linear in the rates, so the budget polytope is a
    continuous knapsack: fill countries to rate 1 in descending order of
    risk reduction per dose |beta2|/P, with the final partial fill going to
    the next country in that order. Countries with beta2 >= 0 (vaccination
    not risk-reducing, a data artifact) receive no doses. Ties break by
    ascending prior rate, then country id. Returns a global optimum.
    """
    v = p.v_prev.astype(float).copy()
    budget = p.budget_doses
    order = sorted(
        (j for j in range(p.j_count) if p.beta2[j] < 0),
        key=lambda j: (
            -(-float(p.beta2[j]) / float(p.population[j])),
            float(p.v_prev[j]),
            p.country_ids[j],
        ),
    )
    filled = 0
    for j in order:
        if budget <= 0:
            break
        capacity = (1.0 - v[j]) * p.population[j]
        if capacity <= 0:
            continue
        filled += 1
        if capacity <= budget:
            v[j] = 1.0
            budget -= capacity
        else:
            v[j] += budget / p.population[j]
            budget = 0.0
    objective = float(np.sum(_per_country_risk(p, v)))
    report = SolverReport(iterations=filled, converged=True, grad_norm=0.0)
    return _build_result(p, v, report, objective)


def project_feasible(p: AllocationProblem, w) -> np.ndarray:
    """Euclidean projection of `w` onto the box-plus-budget feasible set.

    Box clipping handles the rate bounds; if the dose budget is then
    violated, a multiplier lambda >= 0 is bisected with
    v(lambda) = clip(w - lambda * P, v_prev, 1) until the budget binds
    within 1e-10 * budget (the returned point is always on the feasible
    side). Raises InfeasibleProblemError when some prior rate exceeds 1.
    """
    arr = np.asarray(w, dtype=float)
    if arr.shape != (p.j_count,):
        raise ValueError("rate vector must have one entry per country")
    if not np.all(np.isfinite(arr)):
        raise ValueError("rate vector must be finite")
    if np.any(p.v_prev > 1):
        raise InfeasibleProblemError("prior vaccination rate above 1")
    return _project_box_budget(arr, p.v_prev, p.population, p.budget_doses)


def _project_box_budget(
    w: np.ndarray, lo: np.ndarray, pop: np.ndarray, budget: float
) -> np.ndarray:
    v = np.clip(w, lo, 1.0)
    spend = (v - lo) @ pop
    if spend <= budget:
        return v
    if budget <= 0.0:
        return lo.copy()
    tol = 1e-10 * budget
    lam_lo = 0.0
    lam_hi = float(np.max((w - lo) / pop))  # v(lam_hi) = lo, so feasible
    v_feasible = np.clip(w - lam_hi * pop, lo, 1.0)
    for _ in range(_PROJECTION_ITERS):
        lam = 0.5 * (lam_lo + lam_hi)
        v = np.clip(w - lam * pop, lo, 1.0)
        spend = (v - lo) @ pop
        if spend > budget:
            lam_lo = lam
        else:
            lam_hi = lam
            v_feasible = v
            if budget - spend <= tol:
                break
    return v_feasible


def _level_fill(p: AllocationProblem) -> np.ndarray:
    """Raise every country toward a common rate level within the budget."""
    lo, pop, budget = p.v_prev, p.population, p.budget_doses
    if float((1.0 - lo) @ pop) <= budget:
        return np.ones(p.j_count)
    t_lo = float(np.min(lo))
    t_hi = 1.0
    v = lo.copy()
    for _ in range(100):
        t = 0.5 * (t_lo + t_hi)
        candidate = np.maximum(lo, t)
        if float((candidate - lo) @ pop) > budget:
            t_hi = t
        else:
            t_lo = t
            v = candidate
    return v


def _pgd_single(
    p: AllocationProblem, start: np.ndarray, cfg: SolverConfig
) -> tuple[np.ndarray, float, SolverReport]:
    """Projected gradient descent with Armijo backtracking from one start."""
    lo, pop, budget, omega = p.v_prev, p.population, p.budget_doses, p.omega
    beta2 = p.beta2
    risk_const = float(np.sum(p.beta0_tilde + p.beta1 * p.death_rate))
    j = p.j_count

    def f_val(v: np.ndarray) -> float:
        q = float(v @ v)
        if q < EPS_ZERO:
            fair = 1.0
        else:
            s = float(v.sum())
            fair = (s * s) / (j * q)
        return risk_const + float(beta2 @ v) - omega * fair

    def grad(v: np.ndarray) -> np.ndarray:
        if omega == 0.0:
            return beta2
        return beta2 - omega * _jain_gradient(v)

    def residual(v: np.ndarray, g: np.ndarray) -> float:
        return float(np.linalg.norm(v - _project_box_budget(v - g, lo, pop, budget)))

    v = _project_box_budget(np.asarray(start, dtype=float), lo, pop, budget)
    f = f_val(v)
    g = grad(v)
    alpha = 1.0
    iterations = 0
    converged = False
    grad_norm = math.inf

    while iterations < cfg.max_iters:
        iterations += 1
        accepted = False
        while alpha >= _ALPHA_MIN:
            trial = _project_box_budget(v - alpha * g, lo, pop, budget)
            d = trial - v
            step = float(np.linalg.norm(d))
            if step > 0.0:
                f_trial = f_val(trial)
                if f_trial <= f + _ARMIJO_C * float(g @ d):
                    accepted = True
                    break
            alpha *= cfg.backtrack
        if not accepted:
            # no feasible descent at machine precision; report honestly
            grad_norm = residual(v, g)
            converged = grad_norm <= cfg.tol
            break
        v, f = trial, f_trial
        g = grad(v)
        proxy = step / alpha
        if proxy <= cfg.tol:
            # ||G_a(v)||/a is non-increasing in a, so for a <= 1 the proxy
            # upper-bounds the unit-step gradient mapping norm
            if alpha <= 1.0:
                grad_norm = proxy
                converged = True
                break
            grad_norm = residual(v, g)
            if grad_norm <= cfg.tol:
                converged = True
                break
        alpha = min(alpha * 2.0, _ALPHA_MAX)
    else:
        grad_norm = residual(v, g)
        converged = grad_norm <= cfg.tol

    return v, f, SolverReport(iterations=iterations, converged=converged, grad_norm=grad_norm)


def _starting_points(p: AllocationProblem, cfg: SolverConfig) -> list[np.ndarray]:
    anchors = [
        solve_op_greedy(p).v_new,
        p.v_prev.copy(),
        _level_fill(p),
    ]
    points = anchors[: max(cfg.n_starts, 1)]
    rng = np.random.default_rng(cfg.seed)
    while len(points) < cfg.n_starts:
        w = rng.uniform(p.v_prev, np.ones(p.j_count))
        points.append(_project_box_budget(w, p.v_prev, p.population, p.budget_doses))
    return points


def solve_op_fair(
    p: AllocationProblem, cfg: SolverConfig | None = None
) -> AllocationResult:
    """Minimize aggregate risk minus omega * Jain index over the feasible set.

    Runs projected gradient descent from deterministic multi-starts (the
    prior rates, the greedy solution, an equal-level fill, and seeded random
    feasible points) and keeps the best local solution. At omega = 0 the
    objective is linear and the result matches the greedy solver. A start
    that exhausts max_iters is reported with converged=False rather than
    raised.
    """
    cfg = cfg or SolverConfig()
    best: tuple[np.ndarray, float, SolverReport] | None = None
    for start in _starting_points(p, cfg):
        v, f, report = _pgd_single(p, start, cfg)
        if best is None or f < best[1]:
            best = (v, f, report)
    assert best is not None
    v, f, report = best
    if not report.converged:
        warnings.warn(
            f"projected-gradient solver stopped after {report.iterations} iterations "
            f"with residual {report.grad_norm:.3e} > tol {cfg.tol:.1e}",
            RuntimeWarning,
            stacklevel=2,
        )
    return _build_result(p, v, report, f)


def sweep_omega(
    p: AllocationProblem, omegas: list[float], cfg: SolverConfig | None = None
) -> list[SweepEntry]:
    """Solve once per fairness weight with shared multi-start seeds.

    After the per-omega solves, each entry may adopt another entry's rate
    vector when that vector scores strictly better under its own objective.
    Selecting every final point from the same candidate pool makes the
    efficiency/fairness trade-off consistent across the sweep (in particular
    the Jain index is non-decreasing in omega), which independent local
    solves cannot guarantee for a non-concave fairness term.
    """
    cfg = cfg or SolverConfig()
    entries: list[SweepEntry] = []
    for omega in omegas:
        try:
            problem = replace(
                p,
                omega=float(omega),
                country_ids=list(p.country_ids),
            )
            entries.append(SweepEntry(omega=float(omega), result=solve_op_fair(problem, cfg)))
        except (ValueError, InfeasibleProblemError) as exc:
            entries.append(SweepEntry(omega=float(omega), result=None, error=str(exc)))

    pool = [e.result.v_new for e in entries if e.result is not None]
    for entry in entries:
        if entry.result is None:
            continue
        problem = replace(p, omega=entry.omega, country_ids=list(p.country_ids))
        best_f = objective_value(problem, entry.result.v_new)
        best_v = None
        for v in pool:
            f = objective_value(problem, v)
            if f < best_f:
                best_f, best_v = f, v
        if best_v is not None:
            g = problem.beta2 - problem.omega * _jain_gradient(best_v)
            resid = float(
                np.linalg.norm(best_v - project_feasible(problem, best_v - g))
            )
            report = SolverReport(
                iterations=entry.result.solver_report.iterations,
                converged=resid <= cfg.tol,
                grad_norm=resid,
            )
            entry.result = _build_result(problem, best_v.copy(), report, best_f)
    return entries


def round_doses(doses) -> np.ndarray:
    """Integral dose counts: floor per country, remainder to largest fractions.

    The rounded total equals round(sum(doses)), so a budget-respecting real
    allocation stays budget-respecting after rounding.
    """
    arr = np.asarray(doses, dtype=float)
    floors = np.floor(arr)
    remainder = int(round(float(arr.sum()))) - int(floors.sum())
    out = floors.astype(np.int64)
    if remainder > 0:
        fractions = arr - floors
        order = np.lexsort((np.arange(arr.size), -fractions))
        out[order[:remainder]] += 1
    return out


def allocation_date_rows(
    panel: RiskPanel, allocation_date: dt.date | None
) -> tuple[int, int, bool]:
    """Panel indices for the allocation day t and the prior day t-1.

    Picks the latest panel date <= allocation_date (or the last date when
    None); falls back to the first row when the panel starts later. Returns
    (t_index, prev_index, fell_back).
    """
    if allocation_date is None:
        t_idx = len(panel) - 1
        fell_back = False
    else:
        candidates = [i for i, d in enumerate(panel.dates) if d <= allocation_date]
        if candidates:
            t_idx = candidates[-1]
            fell_back = panel.dates[t_idx] != allocation_date
        else:
            t_idx = 0
            fell_back = True
    return t_idx, max(t_idx - 1, 0), fell_back


def build_problem(
    fits: list[RiskModelFit],
    statics: dict[str, CountryStatic],
    panels: dict[str, RiskPanel],
    allocation_date: dt.date | None,
    budget_doses: float,
    omega: float,
) -> AllocationProblem:
    """Assemble an allocation problem from fitted models and panels.

    The regression coefficients act on normalized features, while the
    allocator's decision variable is the raw vaccination fraction (so dose
    counts and the 100% bound are physical). The vaccination coefficient is
    therefore rescaled by the stored normalization span, and the matching
    offset folds into the collapsed intercept; the death-rate term keeps its
    normalized value, which is constant during the solve.
    """
    terms = []
    fallbacks = []
    for fit in sorted(fits, key=lambda f: f.country_id):
        cid = fit.country_id
        panel = panels[cid]
        static = statics[cid]
        t_idx, prev_idx, fell_back = allocation_date_rows(panel, allocation_date)
        if fell_back:
            fallbacks.append(f"{cid}->{panel.dates[t_idx]}")
        lo_v, hi_v = fit.norm_params["vacc_rate"]
        if hi_v > lo_v:
            span = hi_v - lo_v
            beta2 = fit.beta2 / span
            intercept = fit.beta0_tilde - fit.beta2 * lo_v / span
        else:
            beta2 = 0.0  # vaccination signal was flat over the window
            intercept = fit.beta0_tilde
        terms.append(
            CountryTerm(
                country_id=cid,
                beta0_tilde=intercept,
                beta1=fit.beta1,
                beta2=beta2,
                death_rate=float(panel.death_rate[t_idx]),
                v_prev=float(panel.vacc_rate_raw[prev_idx]),
                population=float(static.population),
            )
        )
    if fallbacks:
        warnings.warn(
            "allocation date missing from some panels; used latest available: "
            + ", ".join(fallbacks),
            DataQualityWarning,
            stacklevel=2,
        )
    return AllocationProblem.from_terms(terms, budget_doses=budget_doses, omega=omega)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_allocation_csv(p: AllocationProblem, result: AllocationResult, path) -> None:
    """Per-country allocation table in the documented column order."""
    rounded = round_doses(result.doses)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(ALLOCATION_COLUMNS)
        for j, cid in enumerate(p.country_ids):
            writer.writerow(
                [
                    cid,
                    _fmt(p.population[j]),
                    _fmt(p.v_prev[j]),
                    _fmt(result.v_new[j]),
                    _fmt(result.doses[j]),
                    str(int(rounded[j])),
                    _fmt(result.risk_before[j]),
                    _fmt(result.risk_after[j]),
                    _fmt(result.risk_reduction[j]),
                ]
            )


def write_sweep_csv(entries: list[SweepEntry], path) -> None:
    """One row per fairness weight; failed solves leave metric cells empty."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_COLUMNS)
        for entry in entries:
            if entry.result is None:
                writer.writerow([_fmt(entry.omega), "", "", "false", "0"])
                continue
            writer.writerow(
                [
                    _fmt(entry.omega),
                    _fmt(entry.result.jain),
                    _fmt(float(np.sum(entry.result.risk_reduction))),
                    "true" if entry.result.solver_report.converged else "false",
                    str(entry.result.solver_report.iterations),
                ]
            )
