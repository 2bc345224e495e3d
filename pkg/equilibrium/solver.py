"""
Equilibrium search: minimise the convexified Nikaido-Isoda residual over the
original coupled strategy set.

The binary vector q of the auxiliary agent splits the coupled set into convex
pieces X_q. Each piece is searched by multistart projected descent; pieces are
enumerated exhaustively for small K and explored best-first otherwise. A
Gauss-Seidel best-response iteration supplies the warm start.

The residual at x is evaluated at the slack-maximizing auxiliary decision, so
the shared rows seen by each agent are as wide as the chance constraint allows.
By strong duality the inner minimum of the single-level objective over the
multipliers equals this residual; descending on it is descending on the
single-level objective jointly in (x, lambda).
"""

import heapq
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from typing import List, Optional

import numpy as np
from django.conf import settings
from scipy.optimize import linprog

from drcc_gnep.exceptions import InfeasibleGameError, ProblemValidationError, QPInfeasibleError
from ni_residual.qp import qp_solve
from ni_residual.residual import ResidualEvaluator, problem_class
from reformulation.bigm import build_system, enumeration_order, widest_auxiliary
from reformulation.relaxation import relax_canonical
from wasserstein_drcc.distances import distance_mass

logger = logging.getLogger(__name__)

_AUX_REGULARIZATION = 1e-9
_ARMIJO = 1e-4


class EquilibriumStatus(str, Enum):
    GNE = 'GNE'
    NON_EXISTENCE = 'NonExistence'
    INCONCLUSIVE = 'Inconclusive'


@dataclass(frozen=True)
class SolverOptions:
    """Budgets and tolerances of the equilibrium search."""

    tol_eq: float = 1e-6
    multistart: int = 16
    max_outer_iter: int = 500
    enum_threshold: int = 12
    seed: int = 42
    node_order: str = 'popcount'
    node_budget: int = 256
    bri_max_sweeps: int = 500
    bri_tol: float = 1e-9
    pg_tol: float = 1e-8
    workers: int = 1
    warm_start: bool = True

    def __post_init__(self):
        if self.tol_eq <= 0:
            raise ProblemValidationError('tol_eq must be positive', field='tol_eq')
        for name in ('multistart', 'max_outer_iter', 'node_budget', 'bri_max_sweeps', 'workers'):
            if getattr(self, name) < 1:
                raise ProblemValidationError(f'{name} must be at least 1', field=name)
        if self.enum_threshold < 0:
            raise ProblemValidationError('enum_threshold must be nonnegative', field='enum_threshold')
        if self.node_order not in ('popcount',):
            raise ProblemValidationError(f'unknown node order {self.node_order!r}', field='node_order')

    @classmethod
    def from_settings(cls, **overrides):
        """Options from settings.GNEP_SOLVER, with keyword overrides (None values ignored)."""
        solver = settings.GNEP_SOLVER
        values = {
            'tol_eq': solver['TOL_EQ'],
            'multistart': solver['MULTISTART'],
            'max_outer_iter': solver['MAX_OUTER_ITER'],
            'enum_threshold': solver['ENUM_THRESHOLD'],
            'seed': solver['SEED'],
            'node_budget': solver['NODE_BUDGET'],
            'bri_max_sweeps': solver['BRI_MAX_SWEEPS'],
            'bri_tol': solver['BRI_TOL'],
            'pg_tol': solver['PG_TOL'],
            'workers': solver['WORKERS'],
        }
        known = {f.name for f in fields(cls)}
        values.update({key: value for key, value in overrides.items() if value is not None and key in known})
        return cls(**values)

    def replace(self, **changes):
        return replace(self, **changes)


@dataclass
class NodeRecord:
    """Outcome of the search on one binary pattern q."""

    q: tuple
    feasible: bool
    best_value: Optional[float] = None
    starts_used: int = 0
    full_budget: bool = False

    def to_dict(self):
        return {
            'q': list(self.q),
            'feasible': self.feasible,
            'best_value': self.best_value,
            'starts_used': self.starts_used,
        }


@dataclass
class BestResponseTrace:
    profile: object
    sweeps: int
    converged: bool
    changes: List[float] = field(default_factory=list)
    failed_agent: Optional[int] = None


@dataclass
class CertificationReport:
    verdict: bool
    drcc_mass: float
    transport_budget: float
    drcc_feasible: bool
    local_violations: List[list]
    residual: Optional[float] = None
    gaps: List[float] = field(default_factory=list)
    reason: str = ''
    aux: object = None

    @property
    def local_feasible(self):
        return not any(self.local_violations)


@dataclass
class EquilibriumResult:
    x_star: object
    aux_star: object
    residual: float
    status: EquilibriumStatus
    nodes: List[NodeRecord]
    wall_ms: float
    problem_class: str
    certification: Optional[CertificationReport] = None
    warm_start: Optional[BestResponseTrace] = None


@dataclass
class _Descent:
    x: np.ndarray
    value: float
    iterations: int
    stationary: bool


@dataclass
class _Search:
    records: List[NodeRecord]
    best: Optional[_Descent]
    exhaustive: bool = False
    certified: Optional[CertificationReport] = None
    open_nodes: int = 0


class GnepSolver:
    """Search machinery bound to one problem and one set of options."""

    def __init__(self, problem, options=None):
        self.problem = problem
        self.options = options or SolverOptions.from_settings()
        self.system = build_system(problem)
        self.relaxation = relax_canonical(self.system)
        self.evaluator = ResidualEvaluator(problem, self.system, workers=self.options.workers)
        self.lower, self.upper = problem.box_hull()
        self.local_G, self.local_h = problem.stacked_local_rows()
        self.tol_feas = settings.GNEP_SOLVER['TOL_FEAS']

    # residual helpers

    def widest(self, x):
        return widest_auxiliary(x, self.system)

    def residual_at(self, x):
        """Residual with the slack-maximizing auxiliary decision; inf when a subproblem is empty."""
        aux = self.widest(x).aux
        try:
            report = self.evaluator.residual(x, aux)
        except QPInfeasibleError:
            return np.inf, aux, None
        return report.value, aux, report

    def residual_gradient(self, x, aux, report):
        """Envelope gradient plus the effect of moving (tau', s') with x."""
        lambdas = [duals.stacked for duals in report.duals]
        gradient = self.evaluator.minlp_gradient(x, lambdas, aux)
        total = gradient.x.copy()
        for j in range(x.shape[0]):
            step = 1e-7 * (1.0 + abs(x[j]))
            shifted = x.copy()
            shifted[j] += step
            moved = self.widest(shifted).aux
            d_tau = (moved.tau_prime - aux.tau_prime) / step
            d_s = (moved.s_prime - aux.s_prime) / step
            total[j] += gradient.tau_prime * d_tau + float(gradient.s_prime @ d_s)
        return total

    # node geometry

    def _node_qp(self, q, free=None):
        G_node, h_node = self.relaxation.rows_for_node(q, free)
        K = self.system.K
        n = self.problem.n
        extra = G_node.shape[1] - n
        free_count = extra - 1 - K
        G_local = np.hstack([self.local_G, np.zeros((self.local_G.shape[0], extra))])
        G = np.vstack([G_node, G_local])
        h = np.concatenate([h_node, self.local_h])
        lower = np.concatenate([self.lower, np.full(1 + K, -np.inf), np.zeros(free_count)])
        upper = np.concatenate([self.upper, np.full(1 + K, np.inf), np.ones(free_count)])
        return G, h, lower, upper

    def node_feasible(self, q, free=None):
        G, h, lower, upper = self._node_qp(q, free)
        bounds = [(None if np.isinf(lo) else lo, None if np.isinf(hi) else hi) for lo, hi in zip(lower, upper)]
        result = linprog(np.zeros(G.shape[1]), A_ub=G, b_ub=h, bounds=bounds, method='highs')
        return result.status == 0

    def contains(self, x, q, free=None):
        """Whether some auxiliary decision completes x to a point of the node polyhedron."""
        x = np.asarray(x, dtype=float)
        if np.any(x < self.lower - self.tol_feas) or np.any(x > self.upper + self.tol_feas):
            return False
        G, h, lower, upper = self._node_qp(q, free)
        n = self.problem.n
        rhs = h - G[:, :n] @ np.clip(x, self.lower, self.upper)
        bounds = [(None if np.isinf(lo) else lo, None if np.isinf(hi) else hi) for lo, hi in zip(lower[n:], upper[n:])]
        result = linprog(np.zeros(G.shape[1] - n), A_ub=G[:, n:], b_ub=rhs, bounds=bounds, method='highs')
        return result.status == 0

    def project(self, x0, q, free=None):
        """
        Euclidean projection of x0 onto X_q (the x-part of the node polyhedron).
        Points already in X_q come back unchanged.
        """
        if self.contains(x0, q, free):
            return np.clip(np.asarray(x0, dtype=float), self.lower, self.upper)
        G, h, lower, upper = self._node_qp(q, free)
        n = self.problem.n
        extra = G.shape[1] - n
        Q = np.diag(np.concatenate([np.ones(n), np.full(extra, _AUX_REGULARIZATION)]))
        c = np.concatenate([-np.asarray(x0, dtype=float), np.zeros(extra)])
        solution = qp_solve(Q, c, G, h, box=(lower, upper))
        return np.clip(solution.x[:n], self.lower, self.upper)

    # descent

    def descend(self, x, q, free=None):
        """
        Projected gradient with Barzilai-Borwein steps and Armijo backtracking,
        one projection per iteration.
        """
        options = self.options
        value, aux, report = self.residual_at(x)
        if report is None:
            return _Descent(x=x, value=value, iterations=0, stationary=False)
        step = None
        previous = None
        for iteration in range(1, options.max_outer_iter + 1):
            if value <= 0.0:
                return _Descent(x=x, value=value, iterations=iteration, stationary=True)
            gradient = self.residual_gradient(x, aux, report)
            if previous is not None:
                dx, dg = x - previous[0], gradient - previous[1]
                curvature = float(dx @ dg)
                step = float(dx @ dx) / curvature if curvature > 0 else None
            if step is None:
                step = 1.0 / max(np.abs(gradient).max(), 1e-12)
            step = min(max(step, 1e-12), 1e12)
            try:
                target = self.project(x - step * gradient, q, free)
            except QPInfeasibleError:
                return _Descent(x=x, value=value, iterations=iteration, stationary=False)
            direction = target - x
            if np.abs(direction).max() <= options.pg_tol:
                return _Descent(x=x, value=value, iterations=iteration, stationary=True)
            slope = float(gradient @ direction)
            t = 1.0
            accepted = False
            for _ in range(30):
                candidate = x + t * direction
                candidate_value, candidate_aux, candidate_report = self.residual_at(candidate)
                if candidate_report is not None and candidate_value <= value + _ARMIJO * t * slope:
                    accepted = True
                    break
                t *= 0.5
            if not accepted:
                return _Descent(x=x, value=value, iterations=iteration, stationary=True)
            previous = (x, gradient)
            x, value, aux, report = candidate, candidate_value, candidate_aux, candidate_report
        return _Descent(x=x, value=value, iterations=options.max_outer_iter, stationary=False)

    # starts

    def start_point(self, node_key, start):
        rng = np.random.default_rng([self.options.seed, node_key, start])
        return rng.uniform(self.lower, self.upper)

    def _run_start(self, args):
        node_key, start, q, free, warm = args
        origin = warm if (start == 0 and warm is not None) else self.start_point(node_key, start)
        try:
            x0 = self.project(origin, q, free)
        except QPInfeasibleError:
            return None
        return self.descend(x0, q, free)

    def search_node(self, q, free=None, warm=None, stop_on_warm=False):
        """
        Multistart descent on one node.

        Returns:
            tuple: (NodeRecord, best _Descent or None, early-exit flag)
        """
        q = np.asarray(q, dtype=float)
        node_key = int(sum(int(bit) << k for k, bit in enumerate(q.astype(int))))
        if free is not None:
            node_key += int(sum(1 << (self.system.K + k) for k, flag in enumerate(free) if flag))
        record = NodeRecord(q=tuple(int(v) for v in q.astype(int)), feasible=self.node_feasible(q, free))
        if not record.feasible:
            return record, None, False

        options = self.options
        jobs = [(node_key, start, q, free, warm) for start in range(options.multistart)]
        best = None
        early = False
        if stop_on_warm and warm is not None:
            first = self._run_start(jobs[0])
            record.starts_used = 1
            if first is not None:
                best = first
                if first.value <= options.tol_eq and self.certify(first.x).verdict:
                    record.best_value = first.value
                    return record, best, True
            jobs = jobs[1:]

        if options.workers > 1 and len(jobs) > 1:
            with ThreadPoolExecutor(max_workers=options.workers) as pool:
                outcomes = list(pool.map(self._run_start, jobs))
        else:
            outcomes = [self._run_start(job) for job in jobs]
        for outcome in outcomes:
            record.starts_used += 1
            if outcome is None:
                continue
            if best is None or (outcome.value, tuple(outcome.x)) < (best.value, tuple(best.x)):
                best = outcome
        record.full_budget = record.starts_used == options.multistart
        record.best_value = None if best is None else float(best.value)
        return record, best, early

    # warm start

    def best_response_iteration(self, x0):
        """
        Gauss-Seidel sweeps; the auxiliary decision is refreshed before every
        agent update.
        """
        options = self.options
        profile = self.problem.profile(np.clip(self.problem.profile(x0).vector, self.lower, self.upper))
        changes = []
        for sweep in range(1, options.bri_max_sweeps + 1):
            previous = profile.vector
            for i in range(self.problem.num_agents):
                aux = self.widest(profile.vector).aux
                try:
                    response = self.evaluator.best_response(i, profile.vector, aux)
                except QPInfeasibleError as exc:
                    logger.warning(f'best-response iteration: agent {i} infeasible in sweep {sweep}: {exc}')
                    return BestResponseTrace(profile, sweep, False, changes, failed_agent=i)
                profile = profile.with_block(i, response.y)
            change = float(np.abs(profile.vector - previous).max())
            changes.append(change)
            logger.debug(f'sweep {sweep}: max block change {change:.3e}')
            if change <= options.bri_tol:
                return BestResponseTrace(profile, sweep, True, changes)
        return BestResponseTrace(profile, options.bri_max_sweeps, False, changes)

    def polish(self, incumbent):
        """
        Best-response sweeps started at the incumbent. The swept point replaces
        the incumbent only when it certifies with a residual no larger.

        Returns:
            tuple: (_Descent, CertificationReport), or (None, None) when the incumbent stays
        """
        trace = self.best_response_iteration(incumbent.x)
        if trace.failed_agent is not None:
            return None, None
        report = self.certify(trace.profile.vector)
        if not report.verdict or report.residual > max(incumbent.value, 0.0):
            return None, None
        logger.debug(f'polish: residual {incumbent.value:.3e} -> {report.residual:.3e} in {trace.sweeps} sweeps')
        polished = _Descent(
            x=trace.profile.vector, value=report.residual, iterations=incumbent.iterations,
            stationary=incumbent.stationary,
        )
        return polished, report

    # certification

    def certify(self, x, aux=None):
        """
        Re-check a claimed equilibrium: chance constraint by sample sorting,
        local rows, then the residual from fresh subproblem solves.
        """
        problem = self.problem
        x = problem.profile(x)
        local = [problem.local_feasible(i, x.block(i)).violations for i in range(problem.num_agents)]
        mass = distance_mass(x, problem.drcc)
        budget = problem.drcc.transport_budget
        drcc_ok = mass >= budget - self.tol_feas
        report = CertificationReport(
            verdict=False, drcc_mass=mass, transport_budget=budget, drcc_feasible=drcc_ok,
            local_violations=local,
        )
        if not drcc_ok:
            report.reason = f'chance constraint violated: mass {mass:.6g} < theta*K {budget:.6g}'
            return report
        if any(local):
            report.reason = 'local constraints violated'
            return report
        aux = self.widest(x.vector).aux if aux is None else aux
        report.aux = aux
        try:
            residual = ResidualEvaluator(problem, self.system, workers=1).residual(x, aux)
        except QPInfeasibleError as exc:
            report.reason = f'agent {exc.agent} has no feasible response: {exc}'
            return report
        report.residual = residual.value
        report.gaps = list(residual.gaps)
        report.verdict = residual.value <= self.options.tol_eq
        report.reason = 'certified' if report.verdict else f'residual {residual.value:.3e} above tolerance'
        return report

    # driver

    def _warm_start(self):
        midpoint = 0.5 * (self.lower + self.upper)
        origin = midpoint
        zeros = np.zeros(self.system.K)
        if self.node_feasible(zeros):
            origin = self.project(midpoint, zeros)
        trace = self.best_response_iteration(origin)
        logger.info(
            f'best-response iteration: {trace.sweeps} sweeps, converged={trace.converged}'
        )
        return trace

    def _exhaustive_nodes(self, first):
        grid = enumeration_order(self.system.K)
        if first is not None:
            first_row = np.asarray(first, dtype=int)
            matches = np.all(grid == first_row, axis=1)
            grid = np.vstack([first_row[None, :], grid[~matches]])
        return grid

    def solve(self):
        started = time.perf_counter()
        options = self.options
        K = self.system.K
        kind = problem_class(self.problem)
        logger.info(
            f'Solving {self.problem!r}: class {kind}, K={K}, multistart={options.multistart}, seed={options.seed}'
        )

        trace = None
        warm = None
        first_q = None
        if options.warm_start:
            trace = self._warm_start()
            if trace.failed_agent is None:
                warm = trace.profile.vector
                first_q = self.widest(warm).aux.q.astype(int)

        if K <= options.enum_threshold:
            search = self._enumerate(warm, first_q)
        else:
            search = self._branch_and_bound(warm, first_q)
        records, best = search.records, search.best

        if not any(record.feasible for record in records) and not search.open_nodes:
            raise InfeasibleGameError('no binary pattern q admits a feasible strategy profile')

        if best is None:
            status = EquilibriumStatus.INCONCLUSIVE
            x_star = self.problem.profile(np.clip(warm if warm is not None else self.lower, self.lower, self.upper))
            certification = None
            residual_value = float('inf')
        else:
            polished, polished_report = self.polish(best)
            certification = search.certified
            if polished is not None:
                best, certification = polished, polished_report
            x_star = self.problem.profile(best.x)
            certification = certification or self.certify(best.x)
            residual_value = float(best.value)
            if certification.verdict:
                status = EquilibriumStatus.GNE
                residual_value = float(certification.residual)
            elif search.exhaustive and all(
                record.full_budget and record.best_value is not None and record.best_value > options.tol_eq
                for record in records if record.feasible
            ):
                status = EquilibriumStatus.NON_EXISTENCE
            else:
                status = EquilibriumStatus.INCONCLUSIVE

        aux_star = self.widest(x_star.vector).aux
        wall_ms = (time.perf_counter() - started) * 1000.0
        logger.info(f'Solve finished: status {status.value}, residual {residual_value:.3e}, {wall_ms:.1f} ms')
        return EquilibriumResult(
            x_star=x_star, aux_star=aux_star, residual=residual_value, status=status, nodes=records,
            wall_ms=wall_ms, problem_class=kind, certification=certification, warm_start=trace,
        )

    @staticmethod
    def _better(candidate, incumbent):
        if candidate is None:
            return False
        if incumbent is None:
            return True
        return (candidate.value, tuple(candidate.x)) < (incumbent.value, tuple(incumbent.x))

    def _enumerate(self, warm, first_q):
        records = []
        best = None
        for position, q in enumerate(self._exhaustive_nodes(first_q)):
            record, node_best, early = self.search_node(q, warm=warm, stop_on_warm=(position == 0))
            records.append(record)
            logger.debug(f'node {record.q}: feasible={record.feasible}, best={record.best_value}')
            if self._better(node_best, best):
                best = node_best
            if early:
                logger.info(f'warm start certified on node {record.q}')
                return _Search(records, best, certified=self.certify(best.x))
        return _Search(records, best, exhaustive=True)

    def _branch_and_bound(self, warm, first_q):
        """
        Best-first search over partial assignments of q; unfixed entries are
        relaxed to [0, 1]. There is no valid lower bound on the residual, so
        nothing is pruned and the node budget caps the search. Residuals below
        tol_eq count as equal and ties go to the deeper node, so the search
        reaches leaves before the budget runs out.
        """
        K = self.system.K
        options = self.options
        records = []
        best = None
        counter = 0
        heap = []

        def push(fixed_values, depth, priority):
            nonlocal counter
            key = (max(priority, options.tol_eq), -depth, counter)
            heapq.heappush(heap, (key, depth, tuple(fixed_values)))
            counter += 1

        if first_q is not None:
            record, leaf_best, early = self.search_node(first_q, warm=warm, stop_on_warm=True)
            records.append(record)
            best = leaf_best
            if early:
                return _Search(records, best, certified=self.certify(best.x))
        push([0] * K, 0, 0.0)
        evaluated = 0
        while heap and evaluated < options.node_budget:
            _, depth, fixed_values = heapq.heappop(heap)
            q = np.array(fixed_values, dtype=float)
            if depth == K:
                if first_q is not None and np.array_equal(q.astype(int), first_q):
                    continue
                record, leaf_best, _ = self.search_node(q, warm=warm)
                records.append(record)
                evaluated += 1
                if self._better(leaf_best, best):
                    best = leaf_best
                    if best.value <= options.tol_eq and self.certify(best.x).verdict:
                        return _Search(records, best, open_nodes=len(heap))
                continue
            for bit in (0, 1):
                child = list(fixed_values)
                child[depth] = bit
                free = np.arange(K) > depth
                if not self.node_feasible(np.array(child, dtype=float), free):
                    continue
                try:
                    x0 = self.project(warm if warm is not None else 0.5 * (self.lower + self.upper),
                                      np.array(child, dtype=float), free)
                except QPInfeasibleError:
                    continue
                value, _, _ = self.residual_at(x0)
                evaluated += 1
                push(child, depth + 1, float(value))
        if heap:
            logger.warning(f'node budget {options.node_budget} exhausted with {len(heap)} open nodes')
        return _Search(records, best, open_nodes=len(heap))


def solve(problem, options=None):
    """
    Search for a generalized Nash equilibrium.

    Returns:
        EquilibriumResult
    """
    return GnepSolver(problem, options).solve()


def best_response_iteration(problem, x0, options=None):
    return GnepSolver(problem, options).best_response_iteration(x0)


def certify(problem, x, aux=None, options=None):
    return GnepSolver(problem, options).certify(x, aux)
