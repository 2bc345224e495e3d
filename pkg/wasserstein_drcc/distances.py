"""
Feasibility of the Wasserstein chance constraint at a fixed strategy profile.

For each sample the distance to the unsafe set {xi : A x >= beta xi + b} is
min_j (beta_j xi + b_j - A_j x)^+ / ||beta_j||_*. The constraint holds iff the
epsilon*K smallest distances (fractional last term included) add up to at
least theta*K.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
from django.conf import settings

from drcc_gnep.exceptions import DimensionError, ProblemValidationError
from wasserstein_drcc.ambiguity import parse_norm_order

logger = logging.getLogger(__name__)


def _tol_feas():
    return settings.GNEP_SOLVER['TOL_FEAS']


def profile_vector(x):
    """Accept a StrategyProfile or any array-like and return a flat float vector."""
    return np.asarray(getattr(x, 'vector', x), dtype=float).ravel()


def dual_order(order):
    """Order of the dual norm: 1 <-> inf, 2 <-> 2."""
    order = parse_norm_order(order)
    if order == 1:
        return np.inf
    if order == 2:
        return 2.0
    return 1.0


def dual_norm(v, order):
    """
    Dual norm of v for the given primal norm order.

    Args:
        v: vector
        order: primal norm order (1, 2 or inf)

    Returns:
        float: ||v||_* (0 for the zero vector)
    """
    return float(np.linalg.norm(np.asarray(v, dtype=float).ravel(), ord=dual_order(order)))


def row_dual_norms(beta, order):
    beta = np.atleast_2d(np.asarray(beta, dtype=float))
    return np.linalg.norm(beta, ord=dual_order(order), axis=1)


def slack_matrix(x, spec):
    """K x m matrix of beta_j xi_k + b_j - A_j x."""
    vector = profile_vector(x)
    if vector.shape[0] != spec.n:
        raise DimensionError(f'Profile has dimension {vector.shape[0]}, DRCC expects {spec.n}')
    return spec.samples.samples @ spec.beta.T + spec.b - spec.A @ vector


def sample_distances(x, spec):
    """Distance of every sample to the unsafe set, in sample-index order."""
    norms = row_dual_norms(spec.beta, spec.norm)
    if np.any(norms == 0.0):
        raise ProblemValidationError('beta has a zero row', field='beta')
    scaled = np.maximum(slack_matrix(x, spec), 0.0) / norms
    return scaled.min(axis=1)


def point_distance(x, k, spec):
    """Distance of sample k to the unsafe set at profile x."""
    if not 0 <= k < spec.K:
        raise DimensionError(f'Sample index {k} out of range for K={spec.K}')
    return float(sample_distances(x, spec)[k])


def mass_split(epsilon, K):
    """
    Integer and fractional parts of epsilon*K.

    Returns:
        tuple: (floor(epsilon*K), epsilon*K - floor(epsilon*K))
    """
    budget = epsilon * K
    whole = int(math.floor(budget + 1e-12))
    whole = min(whole, K)
    return whole, max(budget - whole, 0.0)


def smallest_mass(values, epsilon):
    """
    Sum of the epsilon*K smallest entries of values with the fractional last term.

    Works for negative entries as well; ties are irrelevant to the value.
    """
    values = np.asarray(values, dtype=float)
    K = values.shape[0]
    whole, frac = mass_split(epsilon, K)
    ordered = np.sort(values, kind='stable')
    mass = float(ordered[:whole].sum())
    if frac > 0.0:
        mass += frac * float(ordered[min(whole, K - 1)])
    return mass


def distance_mass(x, spec):
    return smallest_mass(sample_distances(x, spec), spec.epsilon)


def drcc_feasible(x, spec, tol=None):
    """True iff the transport mass needed to violate the constraint is at least theta*K."""
    tol = _tol_feas() if tol is None else tol
    return distance_mass(x, spec) >= spec.transport_budget - tol


@dataclass(frozen=True)
class DualCertificate:
    """Feasible point (tau, s) of the dual transport LP."""

    tau: float
    s: np.ndarray

    def objective(self, epsilon):
        K = self.s.shape[0]
        return epsilon * K * self.tau - float(self.s.sum())

    def is_dual_feasible(self, distances, tol=1e-12):
        distances = np.asarray(distances, dtype=float)
        return bool(np.all(self.s >= 0.0) and np.all(distances >= self.tau - self.s - tol))


def certificate_from_values(values, epsilon):
    """
    Build (tau, s) from a value vector: tau is the (floor(eps*K)+1)-th smallest
    value and s = (tau - values)^+. The dual objective equals smallest_mass.
    """
    values = np.asarray(values, dtype=float)
    K = values.shape[0]
    whole, _ = mass_split(epsilon, K)
    ordered = np.sort(values, kind='stable')
    tau = float(ordered[min(whole, K - 1)])
    s = np.maximum(tau - values, 0.0)
    return DualCertificate(tau=tau, s=s)


def dual_certificate(x, spec):
    return certificate_from_values(sample_distances(x, spec), spec.epsilon)


def radius_hint(epsilon, K, C, m):
    """
    Wasserstein radius suggested by the concentration bound.

    Args:
        epsilon: risk level in (0, 1)
        K: number of samples
        C: distribution dependent constant (no default is assumed)
        m: dimension of the uncertainty

    Returns:
        float: C * (log(1/epsilon) / K) ** (1 / max(m, 2))
    """
    if not 0.0 < epsilon < 1.0:
        raise ProblemValidationError(f'epsilon must lie in (0, 1), got {epsilon}', field='epsilon')
    if C <= 0:
        raise ProblemValidationError(f'C must be positive, got {C}', field='C')
    if K < 1:
        raise ProblemValidationError(f'K must be at least 1, got {K}', field='K')
    return float(C * (math.log(1.0 / epsilon) / K) ** (1.0 / max(m, 2)))
