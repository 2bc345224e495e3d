"""
GNEP data: agents with quadratic costs and polyhedral local sets, coupled by
one shared Wasserstein chance constraint.

Agent i minimises
    J_i(x_i, x_-i) = 1/2 x_i^T Q x_i + (p0 + P x_-i)^T x_i + r0 + rho^T x_-i
over {H x_i <= g, lower <= x_i <= upper} and the shared constraint.
"""

import logging
from dataclasses import dataclass, field
from typing import List

import numpy as np
from django.conf import settings
from scipy.optimize import linprog

from drcc_gnep.exceptions import DimensionError, NotPositiveDefiniteError, ProblemValidationError
from wasserstein_drcc.ambiguity import DrccSpec

logger = logging.getLogger(__name__)


def _frozen(array, ndim):
    array = np.array(array, dtype=float)
    if ndim == 1:
        array = np.atleast_1d(array)
    elif ndim == 2:
        array = np.atleast_2d(array)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class AgentSpec:
    """
    Quadratic cost and local strategy set of one agent.

    P and rho act on the rival profile x_-i, i.e. the full profile with this
    agent's block removed. Their column count is checked by GnepProblem.
    """

    Q: np.ndarray
    p0: np.ndarray
    P: np.ndarray
    r0: float
    rho: np.ndarray
    H: np.ndarray
    g: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        Q = _frozen(self.Q, 2)
        dim = Q.shape[0]
        p0 = _frozen(self.p0, 1)
        rho = _frozen(self.rho, 1) if np.size(self.rho) else _frozen(np.zeros(0), 1)
        P = np.array(self.P, dtype=float)
        if P.size == 0:
            P = np.zeros((dim, rho.shape[0]))
        elif P.ndim < 2:
            P = P.reshape(dim, -1)
        P.setflags(write=False)
        H = np.array(self.H, dtype=float)
        if H.size == 0:
            H = np.zeros((0, dim))
        H = np.atleast_2d(H)
        H.setflags(write=False)
        g = _frozen(self.g, 1) if np.size(self.g) else _frozen(np.zeros(0), 1)
        lower = _frozen(self.lower, 1)
        upper = _frozen(self.upper, 1)

        if Q.shape != (dim, dim) or dim < 1:
            raise DimensionError(f'Q must be square, got shape {Q.shape}')
        for name, vector in (('p0', p0), ('lower', lower), ('upper', upper)):
            if vector.shape != (dim,):
                raise DimensionError(f'{name} has length {vector.shape[0]}, expected {dim}')
        if P.shape[0] != dim:
            raise DimensionError(f'P has {P.shape[0]} rows, expected {dim}')
        if P.shape[1] != rho.shape[0]:
            raise DimensionError(f'P has {P.shape[1]} columns but rho has length {rho.shape[0]}')
        if H.shape[1] != dim or H.shape[0] != g.shape[0]:
            raise DimensionError(f'H has shape {H.shape}, g has length {g.shape[0]}')

        if not np.allclose(Q, Q.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(Q).max())):
            raise NotPositiveDefiniteError('Q must be symmetric')
        try:
            np.linalg.cholesky(Q)
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefiniteError('Q must be positive definite') from exc
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise ProblemValidationError('box bounds must be finite', field='lower/upper')
        if np.any(lower > upper):
            raise ProblemValidationError('lower bound exceeds upper bound', field='lower/upper')

        for name, value in (('Q', Q), ('p0', p0), ('P', P), ('H', H), ('g', g)):
            object.__setattr__(self, name, value)
        object.__setattr__(self, 'rho', rho)
        object.__setattr__(self, 'r0', float(self.r0))
        object.__setattr__(self, 'lower', lower)
        object.__setattr__(self, 'upper', upper)

        if H.shape[0] and not self._local_set_nonempty():
            raise ProblemValidationError('local strategy set {H y <= g, box} is empty', field='H/g')

    def _local_set_nonempty(self):
        result = linprog(
            np.zeros(self.dim), A_ub=self.H, b_ub=self.g,
            bounds=list(zip(self.lower, self.upper)), method='highs',
        )
        return result.status == 0

    @property
    def dim(self):
        return self.Q.shape[0]

    @property
    def rival_dim(self):
        return self.P.shape[1]

    def linear_term(self, x_minus):
        """p(x_-i) = p0 + P x_-i"""
        return self.p0 + self.P @ x_minus

    def constant_term(self, x_minus):
        """r(x_-i) = r0 + rho^T x_-i"""
        return self.r0 + float(self.rho @ x_minus)

    def local_rows(self):
        """Local rows with the box folded in: [H; I; -I] y <= [g; upper; -lower]."""
        eye = np.eye(self.dim)
        return (
            np.vstack([self.H, eye, -eye]),
            np.concatenate([self.g, self.upper, -self.lower]),
        )

    def scaled(self, factor):
        """Same agent with (Q, p0, P, r0, rho) multiplied by factor > 0."""
        if factor <= 0:
            raise ProblemValidationError('scaling factor must be positive')
        return AgentSpec(
            Q=self.Q * factor, p0=self.p0 * factor, P=self.P * factor, r0=self.r0 * factor,
            rho=self.rho * factor, H=self.H, g=self.g, lower=self.lower, upper=self.upper,
        )


class StrategyProfile:
    """Collective strategy x = (x_1, ..., x_I) stored as one flat vector."""

    def __init__(self, vector, dims):
        self.dims = tuple(int(d) for d in dims)
        vector = np.array(vector, dtype=float).ravel()
        if vector.shape[0] != sum(self.dims):
            raise DimensionError(f'Profile has length {vector.shape[0]}, expected {sum(self.dims)}')
        self.vector = vector
        self.offsets = np.concatenate([[0], np.cumsum(self.dims)]).astype(int)

    @classmethod
    def from_blocks(cls, blocks):
        blocks = [np.atleast_1d(np.asarray(block, dtype=float)) for block in blocks]
        return cls(np.concatenate(blocks), [block.shape[0] for block in blocks])

    @property
    def n(self):
        return int(self.offsets[-1])

    def block(self, i):
        return self.vector[self.offsets[i]:self.offsets[i + 1]]

    def rivals(self, i):
        """x_-i: every block except i, in increasing agent order."""
        return np.concatenate([self.vector[:self.offsets[i]], self.vector[self.offsets[i + 1]:]])

    def with_block(self, i, y):
        vector = self.vector.copy()
        vector[self.offsets[i]:self.offsets[i + 1]] = np.asarray(y, dtype=float).ravel()
        return StrategyProfile(vector, self.dims)

    def __repr__(self):
        return f'StrategyProfile({np.array2string(self.vector, precision=6)})'


@dataclass(frozen=True)
class LocalFeasibility:
    feasible: bool
    violations: List[dict] = field(default_factory=list)

    @property
    def max_violation(self):
        return max((v['amount'] for v in self.violations), default=0.0)


class GnepProblem:
    """
    Agents plus the shared DRCC. The layout maps agent blocks to column
    ranges of drcc.A in agent order.
    """

    def __init__(self, agents, drcc, name=''):
        if not agents:
            raise ProblemValidationError('a game needs at least one agent', field='agents')
        if not isinstance(drcc, DrccSpec):
            raise ProblemValidationError('drcc must be a DrccSpec', field='drcc')
        self.agents = list(agents)
        self.drcc = drcc
        self.name = name
        self.dims = tuple(agent.dim for agent in self.agents)
        offsets = np.concatenate([[0], np.cumsum(self.dims)]).astype(int)
        self.layout = [slice(int(offsets[i]), int(offsets[i + 1])) for i in range(len(self.agents))]

        if drcc.n != self.n:
            raise DimensionError(f'DRCC matrix A has {drcc.n} columns, profile has {self.n}')
        for i, agent in enumerate(self.agents):
            if agent.rival_dim != self.n - agent.dim:
                raise DimensionError(
                    f'agent {i}: P/rho act on {agent.rival_dim} rival variables, expected {self.n - agent.dim}'
                )
        logger.debug(f'Built GNEP with {self.num_agents} agents, n={self.n}, m={drcc.m}, K={drcc.K}')

    @property
    def n(self):
        return int(sum(self.dims))

    @property
    def num_agents(self):
        return len(self.agents)

    def profile(self, x):
        """Coerce a StrategyProfile or flat array to a StrategyProfile of this game."""
        if isinstance(x, StrategyProfile):
            if x.dims != self.dims:
                raise DimensionError(f'Profile block sizes {x.dims} do not match {self.dims}')
            return x
        return StrategyProfile(x, self.dims)

    def eval_objective(self, i, x):
        """J_i(x_i, x_-i)"""
        x = self.profile(x)
        agent = self.agents[i]
        xi, x_minus = x.block(i), x.rivals(i)
        return float(0.5 * xi @ agent.Q @ xi + agent.linear_term(x_minus) @ xi + agent.constant_term(x_minus))

    def grad_objective(self, i, x):
        """Gradient of J_i with respect to x_i."""
        x = self.profile(x)
        agent = self.agents[i]
        return agent.Q @ x.block(i) + agent.linear_term(x.rivals(i))

    def local_feasible(self, i, xi, tol=None):
        """
        Check H x_i <= g and the box for agent i.

        Returns:
            LocalFeasibility: verdict plus every violated row with its magnitude
        """
        tol = settings.GNEP_SOLVER['TOL_FEAS'] if tol is None else tol
        agent = self.agents[i]
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        if xi.shape != (agent.dim,):
            raise DimensionError(f'agent {i} block has length {xi.shape[0]}, expected {agent.dim}')
        violations = []
        checks = (
            ('H', agent.H @ xi - agent.g),
            ('upper', xi - agent.upper),
            ('lower', agent.lower - xi),
        )
        for label, excess in checks:
            for row in np.flatnonzero(excess > tol):
                violations.append({'row': f'{label}[{int(row)}]', 'amount': float(excess[row])})
        return LocalFeasibility(feasible=not violations, violations=violations)

    def box_hull(self):
        """Concatenated per-agent boxes as (lower, upper)."""
        lower = np.concatenate([agent.lower for agent in self.agents])
        upper = np.concatenate([agent.upper for agent in self.agents])
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise ProblemValidationError('every agent needs a finite box', field='lower/upper')
        if lower.shape[0] != self.n:
            raise DimensionError('box hull does not cover the profile')
        return lower, upper

    def stacked_local_rows(self):
        """Block-diagonal H and stacked g over the full profile (box excluded)."""
        rows = sum(agent.H.shape[0] for agent in self.agents)
        H = np.zeros((rows, self.n))
        g = np.zeros(rows)
        row = 0
        for agent, columns in zip(self.agents, self.layout):
            count = agent.H.shape[0]
            H[row:row + count, columns] = agent.H
            g[row:row + count] = agent.g
            row += count
        return H, g

    def with_drcc(self, drcc):
        return GnepProblem(self.agents, drcc, name=self.name)

    def scaled(self, factor):
        return GnepProblem([agent.scaled(factor) for agent in self.agents], self.drcc, name=self.name)

    def __repr__(self):
        return f'GnepProblem(name={self.name!r}, agents={self.num_agents}, n={self.n})'


def box_hull(problem):
    return problem.box_hull()
