"""
Charging-station pricing game.

I stations set charging prices c_i. Arrivals react to the price,
u_i = u0_i - alpha_u (c_i - c0), and the grid purchase price follows the
aggregate demand, c_b = c0 + alpha_c * sum_j (u_j - u0_j). Station i
maximizes (c_i - c_b)(N0_i + u_i) E_d subject to 0 <= N0_i + u_i <= N_bar_i,
a price box and the shared demand floor sum_i u_i >= u_lower + delta_u held
as a Wasserstein chance constraint.
"""

import logging
from dataclasses import dataclass, field, fields, replace

import numpy as np
from django.conf import settings

from drcc_gnep.exceptions import NotApplicableError, ProblemValidationError
from game_model.problem import AgentSpec, GnepProblem
from wasserstein_drcc.ambiguity import DrccSpec
from wasserstein_drcc.distances import distance_mass

from .sampling import SamplerSpec, gen_samples

logger = logging.getLogger(__name__)


def _per_station(value, count, name):
    array = np.array(value, dtype=float)
    if array.ndim == 0:
        array = np.full(count, float(array))
    if array.shape != (count,):
        raise ProblemValidationError(f'{name} needs {count} entries, got {array.shape[0]}', field=name)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class CsMarketParams:
    """Market data; u0, N0 and N_bar accept a scalar or one value per station."""

    I: int = 3  # noqa: E741
    u0: object = 50.0
    N0: object = 0.0
    N_bar: object = 50.0
    alpha_u: float = 500.0
    alpha_c: float = 5e-4
    c0: float = 0.12
    u_lower: float = 80.0
    E_d: float = 1.0
    price_lower: float = 0.0
    price_upper: float = 1.0
    epsilon: float = 0.05
    theta: float = 0.05
    sampler: SamplerSpec = field(default_factory=SamplerSpec)
    K: int = 10
    seed: int = 42

    def __post_init__(self):
        if self.I < 1:
            raise ProblemValidationError('at least one station is required', field='I')
        for name in ('u0', 'N0', 'N_bar'):
            object.__setattr__(self, name, _per_station(getattr(self, name), self.I, name))
        if isinstance(self.sampler, dict):
            object.__setattr__(self, 'sampler', SamplerSpec.from_dict(self.sampler))
        if self.alpha_u <= 0:
            raise ProblemValidationError('alpha_u must be positive', field='alpha_u')
        if 1.0 + self.alpha_c * self.alpha_u <= 0:
            raise ProblemValidationError('1 + alpha_c*alpha_u must be positive', field='alpha_c')
        if self.E_d <= 0:
            raise ProblemValidationError('E_d must be positive', field='E_d')
        if not self.price_lower <= self.c0 <= self.price_upper:
            raise ProblemValidationError('price bounds must contain c0', field='c0')

    @classmethod
    def from_settings(cls, **overrides):
        """Defaults from settings.CASE_STUDY, with keyword overrides (None values ignored)."""
        known = {f.name for f in fields(cls)}
        values = {key: value for key, value in settings.CASE_STUDY.items() if key in known}
        values.update({key: value for key, value in overrides.items() if value is not None})
        return cls(**values)

    def replace(self, **changes):
        return replace(self, **changes)

    def with_stations(self, I):
        """Copy with I identical stations; per-station data must be uniform."""
        changes = {}
        for name in ('u0', 'N0', 'N_bar'):
            values = getattr(self, name)
            if np.ptp(values) > 0:
                raise ProblemValidationError(f'{name} differs between stations', field=name)
            changes[name] = float(values[0])
        return self.replace(I=I, **changes)

    def with_first_station(self, N0):
        """Copy with the initial onsite EVs of station 1 changed."""
        values = self.N0.copy()
        values[0] = N0
        return self.replace(N0=values)

    @property
    def a(self):
        return self.alpha_c * self.alpha_u

    @property
    def base_load(self):
        """B_i = N0_i + u0_i"""
        return self.N0 + self.u0

    @property
    def u_hat(self):
        return -self.u_lower + float(self.u0.sum()) + self.alpha_u * self.c0 * self.I

    def arrivals(self, prices):
        return self.u0 - self.alpha_u * (np.asarray(prices, dtype=float) - self.c0)

    def purchase_price(self, prices):
        return self.c0 + self.alpha_c * float(np.sum(self.arrivals(prices) - self.u0))

    def profit(self, i, prices):
        """(c_i - c_b)(N0_i + u_i) E_d evaluated directly."""
        prices = np.asarray(prices, dtype=float)
        u = self.arrivals(prices)
        return float((prices[i] - self.purchase_price(prices)) * (self.N0[i] + u[i]) * self.E_d)


def _agent(params, i):
    E, a, alpha_u, c0 = params.E_d, params.a, params.alpha_u, params.c0
    rivals = params.I - 1
    B = float(params.base_load[i])
    curvature = 2.0 * E * (1.0 + a) * alpha_u
    cross = E * a * alpha_u
    shift = c0 * E * a * alpha_u + E * a * B
    return AgentSpec(
        Q=[[curvature]],
        p0=[-E * (1.0 + a) * B - curvature * c0 - cross * rivals * c0],
        P=[[cross] * rivals],
        r0=0.5 * curvature * c0 ** 2 + c0 * E * (1.0 + a) * B + shift * rivals * c0,
        rho=[-shift] * rivals,
        H=[[alpha_u], [-alpha_u]],
        g=[B + alpha_u * c0, params.N_bar[i] - B - alpha_u * c0],
        lower=[params.price_lower],
        upper=[params.price_upper],
    )


def build_drcc(params, samples=None):
    """alpha_u * sum(c) <= -delta_u + u_hat with delta_u drawn from the sampler."""
    if samples is None:
        samples = gen_samples(params.sampler, params.K, params.seed)
    return DrccSpec(
        A=params.alpha_u * np.ones((1, params.I)),
        beta=[[-1.0]],
        b=[params.u_hat],
        epsilon=params.epsilon,
        theta=params.theta,
        norm=2,
        samples=samples,
    )


def build_gnep(params, samples=None):
    """
    Pricing game in price coordinates.

    Args:
        params: CsMarketParams
        samples: SampleSet of delta_u draws (default: generated from params)

    Returns:
        GnepProblem
    """
    agents = [_agent(params, i) for i in range(params.I)]
    problem = GnepProblem(agents, build_drcc(params, samples), name=f'ev-pricing-I{params.I}')
    logger.debug(f'Built {problem!r} with u_hat={params.u_hat:.6g}')
    return problem


def closed_form_ne(params, samples=None, tol=1e-9):
    """
    Interior equilibrium from the first-order conditions
    2(1+a) alpha_u d_i + a alpha_u sum_{j != i} d_j = (1+a) B_i, c = c0 + d.

    Raises:
        NotApplicableError: a local row, the price box or the chance
            constraint is active at the solution
    """
    a, alpha_u = params.a, params.alpha_u
    system = alpha_u * (a * np.ones((params.I, params.I)) + (2.0 + a) * np.eye(params.I))
    try:
        shift = np.linalg.solve(system, (1.0 + a) * params.base_load)
    except np.linalg.LinAlgError as exc:
        raise NotApplicableError('first-order system is singular') from exc
    prices = params.c0 + shift

    onsite = params.base_load - alpha_u * shift
    if np.any(onsite <= tol) or np.any(onsite >= params.N_bar - tol):
        raise NotApplicableError('capacity constraint active at the first-order solution')
    if np.any(prices <= params.price_lower + tol) or np.any(prices >= params.price_upper - tol):
        raise NotApplicableError('price bound active at the first-order solution')
    drcc = build_drcc(params, samples)
    if distance_mass(prices, drcc) <= drcc.transport_budget + tol:
        raise NotApplicableError('shared demand constraint active at the first-order solution')
    return prices


def symmetric_price(params):
    """c0 + (1+a) B / (alpha_u (2 + a (I + 1))) for identical stations."""
    B = float(params.base_load[0])
    return params.c0 + (1.0 + params.a) * B / (params.alpha_u * (2.0 + params.a * (params.I + 1)))
