"""Constrained many-objective solver.

NSGA-III with constraint domination and reference-direction niching,
Riesz s-energy generation of evenly spread simplex directions, and AASF
scalarization to reduce a Pareto front to a handful of representative
candidates. Runs are bit-reproducible: all randomness flows from one
counter-based Philox stream consumed on the driver thread only.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np


class SolverError(ValueError):
    """Raised on invalid solver inputs (arity mismatches, bad budgets)."""


@dataclass(frozen=True)
class Individual:
    genome: np.ndarray
    objectives: np.ndarray
    violations: np.ndarray
    cv: float

    @property
    def feasible(self) -> bool:
        return self.cv == 0.0

    def to_dict(self) -> dict:
        return {
            "genome": [float(v) for v in self.genome],
            "objectives": [float(v) for v in self.objectives],
            "violations": [float(v) for v in self.violations],
            "feasible": self.feasible,
        }


@dataclass(frozen=True)
class ReferenceDirections:
    m: int
    dirs: np.ndarray

    def __post_init__(self):
        if self.dirs.ndim != 2 or self.dirs.shape[1] != self.m:
            raise SolverError("reference directions must be an (n, m) array")
        if np.any(self.dirs < 0) or np.any(np.abs(self.dirs.sum(axis=1) - 1.0) > 1e-9):
            raise SolverError("reference directions must lie on the unit simplex")

    def __len__(self) -> int:
        return len(self.dirs)


@dataclass
class GenerationStats:
    generation: int
    best_cv: float
    mean_cv: float
    n_feasible: int
    hv_proxy: float


@dataclass
class ParetoSet:
    individuals: List[Individual]
    generation_log: List[GenerationStats] = field(default_factory=list)

    def objectives_matrix(self) -> np.ndarray:
        return np.array([ind.objectives for ind in self.individuals])

    def __len__(self) -> int:
        return len(self.individuals)


@dataclass
class CandidateSet:
    members: List[Individual]
    weights_used: np.ndarray

    def __len__(self) -> int:
        return len(self.members)


@dataclass(frozen=True)
class SolverParams:
    population: int = 100
    generations: int = 40
    seed: int = 42
    crossover_prob: float = 1.0
    crossover_eta: float = 30.0
    mutation_eta: float = 20.0
    workers: int = 1

    def __post_init__(self):
        if self.population < 4 or self.population % 4 != 0:
            raise SolverError("population must be >= 4 and a multiple of 4")
        if self.generations < 1:
            raise SolverError("generations must be >= 1")


class Problem:
    """Minimal problem interface the solver drives.

    Subclasses define n_var, n_obj, bounds xl/xu (arrays of length n_var) and
    evaluate(X) returning (F, G): objective values and non-negative constraint
    violation magnitudes, row per genome.
    """

    n_var: int
    n_obj: int
    n_constr: int = 0
    xl: np.ndarray
    xu: np.ndarray

    def evaluate(self, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError


# ---------------------------------------------------------------------------
# Domination and sorting


def dominates(a: Individual, b: Individual) -> bool:
    """Constraint domination: feasibility first, then total violation, then
    componentwise objective domination."""
    if len(a.objectives) != len(b.objectives):
        raise SolverError("objective arity mismatch")
    if a.feasible and not b.feasible:
        return True
    if not a.feasible and b.feasible:
        return False
    if not a.feasible and not b.feasible:
        return a.cv < b.cv
    return bool(np.all(a.objectives <= b.objectives) and np.any(a.objectives < b.objectives))


def _domination_matrix(F: np.ndarray, cv: np.ndarray) -> np.ndarray:
    """D[i, j] True iff individual i constraint-dominates individual j."""
    feas = cv == 0.0
    le = np.all(F[:, None, :] <= F[None, :, :], axis=2)
    lt = np.any(F[:, None, :] < F[None, :, :], axis=2)
    obj_dom = le & lt
    both_feas = feas[:, None] & feas[None, :]
    both_infeas = ~feas[:, None] & ~feas[None, :]
    return (
        (feas[:, None] & ~feas[None, :])
        | (both_infeas & (cv[:, None] < cv[None, :]))
        | (both_feas & obj_dom)
    )


def nondominated_sort(pop: Sequence[Individual]) -> List[List[int]]:
    """Fast non-dominated sorting under constraint domination; returns fronts
    as index lists, best first."""
    if not pop:
        raise SolverError("cannot sort an empty population")
    F = np.array([ind.objectives for ind in pop])
    cv = np.array([ind.cv for ind in pop])
    return _sort_matrix(F, cv)


def _sort_matrix(F: np.ndarray, cv: np.ndarray) -> List[List[int]]:
    D = _domination_matrix(F, cv)
    n_dominators = D.sum(axis=0)
    fronts: List[List[int]] = []
    remaining = np.ones(len(F), dtype=bool)
    while remaining.any():
        current = np.flatnonzero(remaining & (n_dominators == 0))
        if len(current) == 0:  # pragma: no cover - guards malformed domination
            current = np.flatnonzero(remaining)
        fronts.append([int(i) for i in current])
        remaining[current] = False
        n_dominators = n_dominators - D[current].sum(axis=0)
    return fronts


# ---------------------------------------------------------------------------
# Reference directions


def _project_simplex(points: np.ndarray) -> np.ndarray:
    """Euclidean projection of each row onto the unit simplex."""
    n, m = points.shape
    u = np.sort(points, axis=1)[:, ::-1]
    css = np.cumsum(u, axis=1) - 1.0
    k = np.arange(1, m + 1)
    cond = u - css / k > 0
    rho = m - np.argmax(cond[:, ::-1], axis=1) - 1
    tau = css[np.arange(n), rho] / (rho + 1)
    return np.maximum(points - tau[:, None], 0.0)


def riesz_energy(dirs: np.ndarray, s: float) -> float:
    diff = dirs[:, None, :] - dirs[None, :, :]
    d = np.linalg.norm(diff, axis=2)
    iu = np.triu_indices(len(dirs), k=1)
    return float(np.sum(np.maximum(d[iu], 1e-12) ** (-s)))


def riesz_refdirs(m: int, n: int, seed: int = 0, iterations: int = 1000) -> ReferenceDirections:
    """n directions on the unit m-simplex minimizing the pairwise inverse-power
    energy sum_{i<j} |v_i - v_j|^(-s), s = m^2, by projected gradient descent
    with adaptive step halving. Deterministic for a given seed."""
    if m < 2:
        raise SolverError("need at least 2 objectives for reference directions")
    if n < 2:
        raise SolverError("need at least 2 reference directions")
    rng = np.random.Generator(np.random.Philox(seed))
    x = rng.exponential(size=(n, m))
    x = x / x.sum(axis=1, keepdims=True)
    s = float(m * m)
    energy = riesz_energy(x, s)
    step = 0.05
    for _ in range(iterations):
        diff = x[:, None, :] - x[None, :, :]
        d = np.maximum(np.linalg.norm(diff, axis=2), 1e-12)
        np.fill_diagonal(d, np.inf)
        coef = -s * d ** (-s - 2.0)
        grad = np.sum(coef[:, :, None] * diff, axis=1)
        gnorm = float(np.max(np.linalg.norm(grad, axis=1)))
        if gnorm < 1e-15:
            break
        improved = False
        while step > 1e-14:
            cand = _project_simplex(x - (step / gnorm) * grad)
            cand_energy = riesz_energy(cand, s)
            if cand_energy < energy:
                x, energy = cand, cand_energy
                improved = True
                break
            step *= 0.5
        if not improved:
            break
        step *= 1.5
    return ReferenceDirections(m=m, dirs=x)


def das_dennis_refdirs(m: int, partitions: int) -> ReferenceDirections:
    """All simplex lattice points with denominator = partitions;
    count = C(partitions + m - 1, m - 1)."""
    if partitions < 1:
        raise SolverError("partitions must be >= 1")

    points: List[List[float]] = []

    def expand(prefix: List[int], remaining: int, slots: int):
        if slots == 1:
            points.append([v / partitions for v in prefix + [remaining]])
            return
        for v in range(remaining + 1):
            expand(prefix + [v], remaining - v, slots - 1)

    expand([], partitions, m)
    return ReferenceDirections(m=m, dirs=np.array(points))


# ---------------------------------------------------------------------------
# Variation operators


def _sbx(parents1, parents2, xl, xu, rng, prob, eta):
    n_pairs, n_var = parents1.shape
    u = rng.random((n_pairs, n_var))
    beta = np.where(
        u <= 0.5,
        (2.0 * u) ** (1.0 / (eta + 1.0)),
        (2.0 - 2.0 * u) ** (-1.0 / (eta + 1.0)),
    )
    beta = beta * (-1.0) ** rng.integers(0, 2, (n_pairs, n_var))
    beta[rng.random((n_pairs, n_var)) < 0.5] = 1.0
    beta[np.repeat(rng.random((n_pairs, 1)) > prob, n_var, axis=1)] = 1.0
    mid = 0.5 * (parents1 + parents2)
    half = 0.5 * beta * (parents1 - parents2)
    c1 = np.clip(mid + half, xl, xu)
    c2 = np.clip(mid - half, xl, xu)
    return c1, c2


def _polynomial_mutation(X, xl, xu, rng, eta):
    n, n_var = X.shape
    Y = X.copy()
    span = xu - xl
    site = rng.random((n, n_var)) < (1.0 / n_var)
    u = rng.random((n, n_var))
    delta1 = (Y - xl) / span
    delta2 = (xu - Y) / span
    lo = site & (u <= 0.5)
    hi = site & (u > 0.5)
    Y[lo] += span[np.newaxis].repeat(n, 0)[lo] * (
        (2.0 * u[lo] + (1.0 - 2.0 * u[lo]) * (1.0 - delta1[lo]) ** (eta + 1.0))
        ** (1.0 / (eta + 1.0))
        - 1.0
    )
    Y[hi] += span[np.newaxis].repeat(n, 0)[hi] * (
        1.0
        - (2.0 * (1.0 - u[hi]) + 2.0 * (u[hi] - 0.5) * (1.0 - delta2[hi]) ** (eta + 1.0))
        ** (1.0 / (eta + 1.0))
    )
    return np.clip(Y, xl, xu)


# ---------------------------------------------------------------------------
# NSGA-III internals


def _achievement_extremes(translated: np.ndarray) -> np.ndarray:
    m = translated.shape[1]
    weights = np.full((m, m), 1e-6) + np.eye(m)
    idx = np.empty(m, dtype=int)
    for i in range(m):
        idx[i] = int(np.argmin(np.max(translated / weights[i], axis=1)))
    return idx


def _normalize(translated: np.ndarray) -> np.ndarray:
    """Scale translated objectives by hyperplane intercepts through the extreme
    points, falling back to the per-axis maximum when the solve is singular."""
    m = translated.shape[1]
    extremes = translated[_achievement_extremes(translated)]
    intercepts = None
    try:
        plane = np.linalg.solve(extremes, np.ones(m))
        if np.all(np.isfinite(plane)) and np.all(plane > 1e-12):
            intercepts = 1.0 / plane
    except np.linalg.LinAlgError:
        intercepts = None
    if intercepts is None or np.any(intercepts < 1e-12):
        intercepts = translated.max(axis=0)
    intercepts = np.where(intercepts > 1e-12, intercepts, 1.0)
    return translated / intercepts


def _associate(normalized: np.ndarray, dirs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    unit = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    proj = normalized @ unit.T
    sq = np.sum(normalized**2, axis=1, keepdims=True) - proj**2
    dist = np.sqrt(np.maximum(sq, 0.0))
    nearest = np.argmin(dist, axis=1)
    return nearest, dist[np.arange(len(normalized)), nearest]


def _niching(
    need: int,
    rho: np.ndarray,
    assoc: np.ndarray,
    dist: np.ndarray,
    rng: np.random.Generator,
) -> List[int]:
    """Pick `need` members of the split front by reference-direction niche
    counts; ties and crowded-niche picks resolved by the seeded RNG."""
    chosen: List[int] = []
    available = np.ones(len(assoc), dtype=bool)
    dir_alive = np.ones(len(rho), dtype=bool)
    rho = rho.copy()
    while len(chosen) < need:
        alive = np.flatnonzero(dir_alive)
        min_rho = rho[alive].min()
        tied = alive[rho[alive] == min_rho]
        j = int(tied[rng.integers(0, len(tied))]) if len(tied) > 1 else int(tied[0])
        members = np.flatnonzero(available & (assoc == j))
        if len(members) == 0:
            dir_alive[j] = False
            continue
        if rho[j] == 0:
            pick = int(members[np.argmin(dist[members])])
        else:
            pick = int(members[rng.integers(0, len(members))])
        chosen.append(pick)
        available[pick] = False
        rho[j] += 1
    return chosen


def _environmental_selection(F, G, cv, n_survivors, refdirs, rng):
    fronts = _sort_matrix(F, cv)
    selected: List[int] = []
    li = 0
    while len(selected) + len(fronts[li]) <= n_survivors:
        selected.extend(fronts[li])
        li += 1
        if li == len(fronts):
            return selected
    last = fronts[li]
    need = n_survivors - len(selected)
    consider = selected + last
    ideal = F.min(axis=0)
    translated = F[consider] - ideal
    normalized = _normalize(translated)
    assoc, dist = _associate(normalized, refdirs.dirs)
    n_sel = len(selected)
    rho = np.bincount(assoc[:n_sel], minlength=len(refdirs.dirs)).astype(float)
    picked = _niching(need, rho, assoc[n_sel:], dist[n_sel:], rng)
    selected.extend(last[i] for i in picked)
    return selected


def _evaluate_rows(problem: Problem, X: np.ndarray, workers: int) -> Tuple[np.ndarray, np.ndarray]:
    if workers <= 1 or len(X) < 2:
        F, G = problem.evaluate(X)
    else:
        chunks = np.array_split(X, workers)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(problem.evaluate, chunks))
        F = np.vstack([p[0] for p in parts])
        G = np.vstack([p[1] for p in parts])
    F = np.asarray(F, dtype=float)
    G = np.asarray(G, dtype=float).reshape(len(X), -1)
    if not np.all(np.isfinite(F)):
        raise SolverError("objective evaluation produced non-finite values")
    return F, G


def _hv_proxy(F: np.ndarray, cv: np.ndarray) -> float:
    feas = F[cv == 0.0] if np.any(cv == 0.0) else F
    lo, hi = feas.min(axis=0), feas.max(axis=0)
    span = np.where(hi - lo > 1e-12, hi - lo, 1.0)
    norm = (feas - lo) / span
    return float(np.mean(np.prod(np.maximum(1.1 - norm, 0.0), axis=1)))


def nsga3_run(
    problem: Problem,
    params: SolverParams,
    refdirs: ReferenceDirections,
    on_generation: Optional[Callable[[GenerationStats], None]] = None,
) -> ParetoSet:
    """Run NSGA-III and return the first (constraint-dominated) front of the
    final population. Deterministic for a given (problem, params, seed)."""
    if problem.n_obj < 2:
        raise SolverError("solver requires at least 2 objectives")
    if refdirs.m != problem.n_obj:
        raise SolverError(
            f"reference directions have m={refdirs.m}, problem has {problem.n_obj} objectives"
        )
    rng = np.random.Generator(np.random.Philox(params.seed))
    xl = np.asarray(problem.xl, dtype=float)
    xu = np.asarray(problem.xu, dtype=float)
    X = rng.uniform(xl, xu, (params.population, problem.n_var))
    try:
        F, G = _evaluate_rows(problem, X, params.workers)
    except Exception as exc:
        raise SolverError(f"evaluation failed at initialization: {exc}") from exc
    cv = G.sum(axis=1)
    log: List[GenerationStats] = []
    for gen in range(params.generations):
        perm = rng.permutation(params.population)
        half = params.population // 2
        p1, p2 = X[perm[:half]], X[perm[half:]]
        c1, c2 = _sbx(p1, p2, xl, xu, rng, params.crossover_prob, params.crossover_eta)
        offspring = _polynomial_mutation(np.vstack([c1, c2]), xl, xu, rng, params.mutation_eta)
        try:
            Fo, Go = _evaluate_rows(problem, offspring, params.workers)
        except Exception as exc:
            raise SolverError(f"evaluation failed at generation {gen}: {exc}") from exc
        Xm = np.vstack([X, offspring])
        Fm = np.vstack([F, Fo])
        Gm = np.vstack([G, Go])
        cvm = Gm.sum(axis=1)
        keep = _environmental_selection(Fm, Gm, cvm, params.population, refdirs, rng)
        X, F, G, cv = Xm[keep], Fm[keep], Gm[keep], cvm[keep]
        stats = GenerationStats(
            generation=gen,
            best_cv=float(cv.min()),
            mean_cv=float(cv.mean()),
            n_feasible=int(np.count_nonzero(cv == 0.0)),
            hv_proxy=_hv_proxy(F, cv),
        )
        log.append(stats)
        if on_generation is not None:
            on_generation(stats)
    fronts = _sort_matrix(F, cv)
    individuals = [
        Individual(genome=X[i].copy(), objectives=F[i].copy(), violations=G[i].copy(), cv=float(cv[i]))
        for i in fronts[0]
    ]
    return ParetoSet(individuals=individuals, generation_log=log)


# ---------------------------------------------------------------------------
# AASF scalarization


def aasf_scores(normalized: np.ndarray, weights: np.ndarray, rho: float = 1e-4) -> np.ndarray:
    """Score matrix (n_weights, n_points): max_i(f_i/w_i) + rho * sum_i(f_i/w_i)."""
    ratios = normalized[None, :, :] / weights[:, None, :]
    return ratios.max(axis=2) + rho * ratios.sum(axis=2)


def aasf_select(
    front: ParetoSet | Sequence[Individual],
    k: int,
    rho: float = 1e-4,
    seed: int = 0,
) -> CandidateSet:
    """Reduce a front to k representative members, one per Riesz weight vector,
    deduplicated on exact objective-vector equality and backfilled with the
    next-lowest-scoring distinct members."""
    members = front.individuals if isinstance(front, ParetoSet) else list(front)
    if not members:
        raise SolverError("cannot select candidates from an empty front")
    if k < 1:
        raise SolverError("candidate count must be >= 1")
    F = np.array([ind.objectives for ind in members])
    m = F.shape[1]
    ideal = F.min(axis=0)
    nadir = F.max(axis=0)
    span = np.where(nadir - ideal > 1e-12, nadir - ideal, 1.0)
    normalized = (F - ideal) / span
    if k == 1:
        weights = np.full((1, m), 1.0 / m)
    else:
        weights = riesz_refdirs(m, k, seed=seed).dirs
    weights = np.maximum(weights, 1e-6)
    scores = aasf_scores(normalized, weights, rho)

    chosen: List[int] = []
    seen_vectors: List[np.ndarray] = []

    def is_new(i: int) -> bool:
        return all(not np.array_equal(F[i], v) for v in seen_vectors)

    for w in range(len(weights)):
        i = int(np.argmin(scores[w]))
        if is_new(i):
            chosen.append(i)
            seen_vectors.append(F[i])
    target = min(k, len(members))
    if len(chosen) < target:
        order = np.argsort(scores.min(axis=0), kind="stable")
        for i in order:
            if len(chosen) >= target:
                break
            if int(i) not in chosen and is_new(int(i)):
                chosen.append(int(i))
                seen_vectors.append(F[int(i)])
    return CandidateSet(members=[members[i] for i in chosen], weights_used=weights)


# ---------------------------------------------------------------------------
# Export


def pareto_to_dict(result: ParetoSet, metadata: Optional[dict] = None) -> dict:
    return {
        "individuals": [ind.to_dict() for ind in result.individuals],
        "generations": [
            {
                "generation": g.generation,
                "best_cv": g.best_cv,
                "mean_cv": g.mean_cv,
                "n_feasible": g.n_feasible,
                "hv_proxy": g.hv_proxy,
            }
            for g in result.generation_log
        ],
        "metadata": metadata or {},
    }


def pareto_to_csv(result: ParetoSet) -> str:
    """One row per individual: f1..fm, g1..gk, cv."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    if not result.individuals:
        return ""
    m = len(result.individuals[0].objectives)
    ncon = len(result.individuals[0].violations)
    writer.writerow(
        [f"f{i + 1}" for i in range(m)] + [f"g{i + 1}" for i in range(ncon)] + ["cv"]
    )
    for ind in result.individuals:
        writer.writerow(
            [repr(float(v)) for v in ind.objectives]
            + [repr(float(v)) for v in ind.violations]
            + [repr(float(ind.cv))]
        )
    return out.getvalue()


def igd(obtained: np.ndarray, reference_front: np.ndarray) -> float:
    """Inverted generational distance: mean distance from reference-front
    samples to the nearest obtained point."""
    diff = reference_front[:, None, :] - obtained[None, :, :]
    d = np.linalg.norm(diff, axis=2)
    return float(d.min(axis=1).mean())
