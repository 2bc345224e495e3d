"""
Demand uncertainty samples and out-of-sample checks of the shared constraint.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from drcc_gnep.exceptions import ProblemValidationError, UnsupportedDistributionError
from wasserstein_drcc.ambiguity import SampleSet
from wasserstein_drcc.distances import profile_vector

logger = logging.getLogger(__name__)

# distribution -> (numpy Generator method, parameter names in call order, defaults)
DISTRIBUTIONS = {
    'normal': ('normal', ('mean', 'std'), {'mean': 0.0, 'std': 5.0}),
    'uniform': ('uniform', ('low', 'high'), {'low': -5.0, 'high': 5.0}),
    'laplace': ('laplace', ('loc', 'scale'), {'loc': 0.0, 'scale': 5.0}),
}

MIN_DRAWS = 10_000


@dataclass(frozen=True)
class SamplerSpec:
    distribution: str = 'normal'
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.distribution not in DISTRIBUTIONS:
            raise UnsupportedDistributionError(
                f'unsupported distribution {self.distribution!r}; choose one of {sorted(DISTRIBUTIONS)}'
            )
        _, names, defaults = DISTRIBUTIONS[self.distribution]
        unknown = set(self.params) - set(names)
        if unknown:
            raise ProblemValidationError(
                f'{self.distribution} takes {", ".join(names)}; got {", ".join(sorted(unknown))}',
                field='sampler',
            )
        merged = {**defaults, **{key: float(value) for key, value in self.params.items()}}
        object.__setattr__(self, 'params', merged)

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        distribution = data.pop('distribution', 'normal')
        return cls(distribution=distribution, params=data)

    def to_dict(self):
        return {'distribution': self.distribution, **self.params}

    def draw(self, rng, size):
        method, names, _ = DISTRIBUTIONS[self.distribution]
        return getattr(rng, method)(*(self.params[name] for name in names), size=size)

    def exceedance(self, level):
        """P[delta > level] under this distribution."""
        p = self.params
        if self.distribution == 'normal':
            return float(stats.norm.sf(level, loc=p['mean'], scale=p['std']))
        if self.distribution == 'uniform':
            return float(stats.uniform.sf(level, loc=p['low'], scale=p['high'] - p['low']))
        return float(stats.laplace.sf(level, loc=p['loc'], scale=p['scale']))


def gen_samples(sampler, K, seed):
    """
    K i.i.d. draws of delta_u, one per row.

    Returns:
        SampleSet
    """
    if K < 1:
        raise ProblemValidationError('K must be at least 1', field='K')
    if isinstance(sampler, dict):
        sampler = SamplerSpec.from_dict(sampler)
    rng = np.random.default_rng(seed)
    return SampleSet(sampler.draw(rng, (K, 1)))


@dataclass(frozen=True)
class ViolationEstimate:
    """Monte Carlo estimate of P[shared demand constraint violated]"""

    estimate: float
    std_error: float
    ci_lower: float
    ci_upper: float
    draws: int
    slack: float

    def to_dict(self):
        return {
            'estimate': self.estimate,
            'std_error': self.std_error,
            'ci_lower': self.ci_lower,
            'ci_upper': self.ci_upper,
            'draws': self.draws,
            'slack': self.slack,
        }


def wilson_interval(hits, draws, confidence=0.95):
    """Wilson score interval; closed at 0 when nothing was hit and at 1 when everything was."""
    z = float(stats.norm.ppf(0.5 + confidence / 2.0))
    p_hat = hits / draws
    denominator = 1.0 + z ** 2 / draws
    center = (p_hat + z ** 2 / (2.0 * draws)) / denominator
    half = z * math.sqrt(p_hat * (1.0 - p_hat) / draws + z ** 2 / (4.0 * draws ** 2)) / denominator
    lower = 0.0 if hits == 0 else max(0.0, center - half)
    upper = 1.0 if hits == draws else min(1.0, center + half)
    return lower, upper


def monte_carlo_violation(x, params, true_dist=None, N=100_000, seed=None):
    """
    Fraction of fresh draws with alpha_u * sum(c) > -delta + u_hat.

    Args:
        x: price profile
        params: CsMarketParams
        true_dist: SamplerSpec to draw from (default: params.sampler)
        N: number of draws, at least 10^4
        seed: generator seed (default: params.seed)

    Returns:
        ViolationEstimate
    """
    if N < MIN_DRAWS:
        raise ProblemValidationError(f'at least {MIN_DRAWS} draws are required, got {N}', field='draws')
    sampler = params.sampler if true_dist is None else true_dist
    if isinstance(sampler, dict):
        sampler = SamplerSpec.from_dict(sampler)
    seed = params.seed if seed is None else seed
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1,)))

    slack = params.u_hat - params.alpha_u * float(np.sum(profile_vector(x)))
    delta = sampler.draw(rng, N)
    hits = int(np.count_nonzero(delta > slack))
    estimate = hits / N
    lower, upper = wilson_interval(hits, N)
    logger.info(f'Monte Carlo violation: {hits}/{N} draws exceed slack {slack:.6g}')
    return ViolationEstimate(
        estimate=estimate,
        std_error=math.sqrt(estimate * (1.0 - estimate) / N),
        ci_lower=lower,
        ci_upper=upper,
        draws=N,
        slack=slack,
    )
