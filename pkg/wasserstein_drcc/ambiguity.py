"""
Data carried by the shared distributionally robust chance constraint.

The constraint reads  P[A x < beta xi + b] >= 1 - epsilon  for every
distribution within Wasserstein distance theta of the empirical distribution
of the samples. Only the data lives here; the feasibility machinery is in
wasserstein_drcc.distances.
"""

import dataclasses
from dataclasses import dataclass

import numpy as np

from drcc_gnep.exceptions import DimensionError, ProblemValidationError

NORM_ORDERS = {1: 1.0, 2: 2.0, 'inf': np.inf, 'infinity': np.inf, '∞': np.inf}


def parse_norm_order(value):
    """Normalise a user supplied norm order to 1.0, 2.0 or inf."""
    if isinstance(value, str):
        key = value.strip().lower()
        if key.isdigit():
            key = int(key)
    else:
        key = value
    if isinstance(key, float):
        if np.isinf(key):
            return np.inf
        if key.is_integer():
            key = int(key)
    if key not in NORM_ORDERS:
        raise ProblemValidationError(f'Unsupported norm order {value!r}; use 1, 2 or inf', field='norm')
    return NORM_ORDERS[key]


def _frozen(array):
    array = np.array(array, dtype=float)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class SampleSet:
    """Samples xi_1..xi_K of the uncertainty, one row per sample."""

    samples: np.ndarray

    def __post_init__(self):
        samples = np.array(self.samples, dtype=float)
        if samples.ndim == 1:
            samples = samples.reshape(-1, 1)
        if samples.ndim != 2 or samples.shape[0] < 1 or samples.shape[1] < 1:
            raise DimensionError('SampleSet needs at least one sample of dimension >= 1')
        if not np.all(np.isfinite(samples)):
            raise ProblemValidationError('Samples must be finite', field='samples')
        samples.setflags(write=False)
        object.__setattr__(self, 'samples', samples)

    @property
    def K(self):
        return self.samples.shape[0]

    @property
    def dim(self):
        return self.samples.shape[1]

    def __len__(self):
        return self.K


@dataclass(frozen=True)
class DrccSpec:
    """
    Shared constraint data.

    A is m x n over the full strategy profile, beta is m x l, b has length m.
    norm is the order of the transport norm on the sample space (1, 2 or inf).
    """

    A: np.ndarray
    beta: np.ndarray
    b: np.ndarray
    epsilon: float
    theta: float
    norm: float
    samples: SampleSet

    def __post_init__(self):
        A = np.atleast_2d(np.array(self.A, dtype=float))
        beta = np.atleast_2d(np.array(self.beta, dtype=float))
        b = np.atleast_1d(np.array(self.b, dtype=float))
        samples = self.samples if isinstance(self.samples, SampleSet) else SampleSet(self.samples)

        if beta.shape[0] != A.shape[0] or b.shape != (A.shape[0],):
            raise DimensionError(
                f'DRCC rows disagree: A has {A.shape[0]}, beta has {beta.shape[0]}, b has {b.shape[0]}'
            )
        if beta.shape[1] != samples.dim:
            raise DimensionError(f'beta has {beta.shape[1]} columns but samples have dimension {samples.dim}')
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(beta)) and np.all(np.isfinite(b))):
            raise ProblemValidationError('DRCC data must be finite', field='drcc')
        zero_rows = np.flatnonzero(~np.any(beta != 0.0, axis=1))
        if zero_rows.size:
            raise ProblemValidationError(
                f'beta row {int(zero_rows[0])} is zero; the distance to the unsafe set is undefined',
                field='beta',
            )
        epsilon = float(self.epsilon)
        theta = float(self.theta)
        if not 0.0 < epsilon < 1.0:
            raise ProblemValidationError(f'epsilon must lie in (0, 1), got {epsilon}', field='epsilon')
        if not theta > 0.0:
            raise ProblemValidationError(f'theta must be positive, got {theta}', field='theta')

        object.__setattr__(self, 'A', _frozen(A))
        object.__setattr__(self, 'beta', _frozen(beta))
        object.__setattr__(self, 'b', _frozen(b))
        object.__setattr__(self, 'epsilon', epsilon)
        object.__setattr__(self, 'theta', theta)
        object.__setattr__(self, 'norm', parse_norm_order(self.norm))
        object.__setattr__(self, 'samples', samples)

    @property
    def m(self):
        return self.A.shape[0]

    @property
    def n(self):
        return self.A.shape[1]

    @property
    def l(self):  # noqa: E743
        return self.beta.shape[1]

    @property
    def K(self):
        return self.samples.K

    @property
    def transport_budget(self):
        """theta * K, the right-hand side of the distance-mass test."""
        return self.theta * self.K

    def replace(self, **changes):
        """Copy with some fields overridden (epsilon, theta, samples, ...)."""
        if 'samples' in changes and not isinstance(changes['samples'], SampleSet):
            changes['samples'] = SampleSet(changes['samples'])
        return dataclasses.replace(self, **changes)
