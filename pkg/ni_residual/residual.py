"""
Convexified Nikaido-Isoda residual and its single-level (dual) form.

For a fixed auxiliary decision (tau', s', q) every agent faces a convex QP:
its local rows (box folded in) plus the shared rows A_bar_i y <= g_s. The
residual is the sum over agents of J_i(x) - min_y J_i(y, x_-i). The auxiliary
agent has a zero objective and contributes nothing.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List

import numpy as np
from django.conf import settings
from scipy.linalg import cho_factor, cho_solve

from drcc_gnep.exceptions import DimensionError, QPInfeasibleError

from .qp import qp_solve

logger = logging.getLogger(__name__)


class StackedAgentSystem:
    """H* = [H_local; A_bar_i] and g*(x_-i, aux) = [g_local; g_s] for one agent."""

    def __init__(self, problem, system, i):
        self.index = i
        self.agent = problem.agents[i]
        self.columns = problem.layout[i]
        self.system = system
        self.H_local, self.g_local = self.agent.local_rows()
        self.A_shared = system.A_bar_blocks[i]
        self.H_star = np.vstack([self.H_local, self.A_shared])

    @property
    def local_count(self):
        return self.H_local.shape[0]

    def shared_rhs(self, x, aux):
        """g_s: shared rows with every rival block and the auxiliary decision fixed."""
        x = np.asarray(x, dtype=float)
        rivals = self.system.A_bar @ x - self.A_shared @ x[self.columns]
        return self.system.shared_rhs(rivals, aux)

    def g_star(self, x, aux):
        return np.concatenate([self.g_local, self.shared_rhs(x, aux)])


@dataclass(frozen=True)
class DualVars:
    """Multipliers of the local rows (box included) and of the shared rows."""

    lambda_a: np.ndarray
    lambda_s: np.ndarray

    @property
    def stacked(self):
        return np.concatenate([self.lambda_a, self.lambda_s])

    @classmethod
    def split(cls, vector, local_count):
        vector = np.asarray(vector, dtype=float)
        return cls(lambda_a=vector[:local_count], lambda_s=vector[local_count:])


@dataclass(frozen=True)
class BestResponse:
    y: np.ndarray
    duals: DualVars
    value: float
    kkt_residual: float


@dataclass(frozen=True)
class ResidualReport:
    value: float
    best_responses: List[np.ndarray]
    gaps: List[float]
    duals: List[DualVars]

    def to_dict(self):
        return {
            'value': self.value,
            'gaps': list(self.gaps),
            'best_responses': [y.tolist() for y in self.best_responses],
        }


@dataclass(frozen=True)
class MinlpGradient:
    x: np.ndarray
    lambdas: List[np.ndarray]
    tau_prime: float
    s_prime: np.ndarray
    q: np.ndarray


def problem_class(problem):
    """
    'MILP' when every p is constant (the single-level problem then has no
    cross terms in the strategies), 'MIQP' otherwise.
    """
    if all(not np.any(agent.P) for agent in problem.agents):
        return 'MILP'
    return 'MIQP'


class ResidualEvaluator:
    """Per-agent subproblems of one game over one big-M system."""

    def __init__(self, problem, system, workers=None):
        self.problem = problem
        self.system = system
        self.workers = settings.GNEP_SOLVER['WORKERS'] if workers is None else workers
        self.stacks = [StackedAgentSystem(problem, system, i) for i in range(problem.num_agents)]
        self._factors = [cho_factor(agent.Q) for agent in problem.agents]

    def _vector(self, x):
        return self.problem.profile(x).vector

    def best_response(self, i, x, aux):
        """
        Minimize J_i(y, x_-i) over the local and shared rows.

        Returns:
            BestResponse
        """
        x = self._vector(x)
        stack = self.stacks[i]
        agent = stack.agent
        x_minus = np.concatenate([x[:stack.columns.start], x[stack.columns.stop:]])
        try:
            solution = qp_solve(agent.Q, agent.linear_term(x_minus), stack.H_star, stack.g_star(x, aux))
        except QPInfeasibleError as exc:
            exc.agent = i
            logger.debug(f'agent {i}: best response infeasible ({exc})')
            raise
        value = solution.objective + agent.constant_term(x_minus)
        duals = DualVars.split(solution.row_multipliers, stack.local_count)
        return BestResponse(y=solution.x, duals=duals, value=value, kkt_residual=solution.kkt_residual)

    def residual(self, x, aux):
        """
        V(x) = sum_i J_i(x) - J_i(y*_i, x_-i).

        Returns:
            ResidualReport
        """
        x = self._vector(x)
        agents = range(self.problem.num_agents)
        if self.workers > 1 and self.problem.num_agents > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                responses = list(pool.map(lambda i: self.best_response(i, x, aux), agents))
        else:
            responses = [self.best_response(i, x, aux) for i in agents]
        gaps = [self.problem.eval_objective(i, x) - response.value for i, response in zip(agents, responses)]
        return ResidualReport(
            value=float(sum(gaps)),
            best_responses=[response.y for response in responses],
            gaps=gaps,
            duals=[response.duals for response in responses],
        )

    def _p_star(self, i, lambda_i, x):
        stack = self.stacks[i]
        agent = stack.agent
        x_minus = np.concatenate([x[:stack.columns.start], x[stack.columns.stop:]])
        return agent.linear_term(x_minus) + stack.H_star.T @ lambda_i, x_minus

    def _as_multipliers(self, i, lambda_i):
        stacked = lambda_i.stacked if isinstance(lambda_i, DualVars) else np.asarray(lambda_i, dtype=float)
        if stacked.shape != (self.stacks[i].H_star.shape[0],):
            raise DimensionError(
                f'agent {i}: {stacked.shape[0]} multipliers for {self.stacks[i].H_star.shape[0]} rows'
            )
        return stacked

    def dual_objective(self, i, lambda_i, x, aux):
        """-1/2 P*^T Q^-1 P* - lambda^T g* + r(x_-i) with P* = p(x_-i) + H*^T lambda."""
        x = self._vector(x)
        lam = self._as_multipliers(i, lambda_i)
        p_star, x_minus = self._p_star(i, lam, x)
        w = cho_solve(self._factors[i], p_star)
        g_star = self.stacks[i].g_star(x, aux)
        return float(-0.5 * p_star @ w - lam @ g_star + self.stacks[i].agent.constant_term(x_minus))

    def minlp_objective(self, x, lambda_all, aux):
        """sum_i J_i(x) - dual_i(lambda_i); equals the residual at dual-optimal multipliers."""
        x = self._vector(x)
        return float(sum(
            self.problem.eval_objective(i, x) - self.dual_objective(i, lambda_all[i], x, aux)
            for i in range(self.problem.num_agents)
        ))

    def minlp_gradient(self, x, lambda_all, aux):
        """
        Gradient of minlp_objective with respect to x, each lambda_i, tau', s' and q.

        Returns:
            MinlpGradient
        """
        x = self._vector(x)
        system = self.system
        m = system.m
        grad_x = np.zeros_like(x)
        grad_lambdas = []
        grad_tau = 0.0
        grad_s = np.zeros(system.K)
        grad_q = np.zeros(system.K)

        for i, stack in enumerate(self.stacks):
            agent = stack.agent
            lam = self._as_multipliers(i, lambda_all[i])
            lambda_s = lam[stack.local_count:]
            p_star, x_minus = self._p_star(i, lam, x)
            w = cho_solve(self._factors[i], p_star)
            xi = x[stack.columns]

            grad_lambdas.append(stack.H_star @ w + stack.g_star(x, aux))

            grad_x[stack.columns] += agent.Q @ xi + agent.linear_term(x_minus)
            rival_grad = agent.P.T @ (xi + w)
            shared_pull = system.A_bar.T @ lambda_s
            shared_pull[stack.columns] = 0.0
            rival_full = np.zeros_like(x)
            rival_full[:stack.columns.start] = rival_grad[:stack.columns.start]
            rival_full[stack.columns.stop:] = rival_grad[stack.columns.start:]
            grad_x += rival_full - shared_pull

            per_sample = lambda_s.reshape(system.K, m).sum(axis=1)
            grad_tau -= float(lambda_s.sum())
            grad_s += per_sample
            grad_q += system.M * per_sample

        return MinlpGradient(x=grad_x, lambdas=grad_lambdas, tau_prime=grad_tau, s_prime=grad_s, q=grad_q)
