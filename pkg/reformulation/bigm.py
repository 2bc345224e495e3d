"""
Deterministic big-M form of the shared chance constraint.

With auxiliary variables (tau', s', q) of an extra, cost-free agent the
constraint becomes

    h1:  eps*K*tau' - sum(s')                               >= theta*K*||beta||_*
    h2:  (beta_bar xi + b_bar - sum_i A_bar_i x_i) + M_bar q >= tau' e - E_bar s'
    h3:  M (e - q)                                          >= tau' e - s'
    h4:  s' >= 0
    h5:  q binary

Rows of (A, beta, b) are rescaled at assembly so that every beta row has the
same dual norm N = max_j ||beta_j||_*. The unsafe set and the distances do not
change, and h1/h2 with the single scalar N are then exact for any m.
"""

import itertools
import logging
from dataclasses import dataclass

import numpy as np
from django.conf import settings

from drcc_gnep.exceptions import DimensionError, ProblemValidationError, SystemTooLargeError
from wasserstein_drcc.distances import (
    certificate_from_values, mass_split, profile_vector, row_dual_norms, smallest_mass,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AuxiliaryVars:
    """Decision variables (tau', s', q) of the auxiliary agent."""

    tau_prime: float
    s_prime: np.ndarray
    q: np.ndarray
    relaxed: bool = False

    def __post_init__(self):
        object.__setattr__(self, 'tau_prime', float(self.tau_prime))
        object.__setattr__(self, 's_prime', np.array(self.s_prime, dtype=float).ravel())
        object.__setattr__(self, 'q', np.array(self.q, dtype=float).ravel())
        if self.s_prime.shape != self.q.shape:
            raise DimensionError(f's_prime has length {self.s_prime.shape[0]}, q has {self.q.shape[0]}')

    @property
    def K(self):
        return self.q.shape[0]

    def to_dict(self):
        return {
            'tau_prime': self.tau_prime,
            's_prime': self.s_prime.tolist(),
            'q': self.q.tolist(),
            'relaxed': self.relaxed,
        }


class BigMSystem:
    """Kronecker-structured constraint data for h1-h5 (rows ordered sample-major)."""

    def __init__(self, spec, layout, row_scale, M=None):
        self.spec = spec
        self.layout = list(layout)
        self.row_scale = row_scale
        self.m = spec.m
        self.K = spec.K
        self.beta_dual_norm = float(row_dual_norms(spec.beta, spec.norm).max())
        self.M = None if M is None else float(M)
        # beta_bar xi + b_bar, row k*m + j
        self.sample_rhs = (spec.samples.samples @ spec.beta.T + spec.b).ravel()
        self.A_bar = np.kron(np.ones((self.K, 1)), spec.A)
        self.A_bar_blocks = [self.A_bar[:, columns] for columns in self.layout]

    @property
    def mK(self):
        return self.m * self.K

    @property
    def n(self):
        return self.spec.n

    @property
    def beta_bar(self):
        """I_K kron beta, acting on the stacked samples."""
        return np.kron(np.eye(self.K), self.spec.beta)

    @property
    def b_bar(self):
        return np.kron(np.ones(self.K), self.spec.b)

    @property
    def xi_stacked(self):
        return self.spec.samples.samples.ravel()

    @property
    def E_bar(self):
        return np.kron(np.eye(self.K), np.ones((self.m, 1)))

    @property
    def M_bar(self):
        """M * (I_K kron e_m); M_bar @ q gives the per-row relaxation."""
        self._require_m()
        return self.M * self.E_bar

    @property
    def threshold(self):
        """theta*K*||beta||_*, right-hand side of h1."""
        return self.spec.theta * self.K * self.beta_dual_norm

    def _require_m(self):
        if self.M is None:
            raise ProblemValidationError('big-M constant not computed yet; call compute_big_m first')

    def with_big_m(self, M):
        if not np.isfinite(M) or M <= 0:
            raise ProblemValidationError(f'M must be positive and finite, got {M}')
        return BigMSystem(self.spec, self.layout, self.row_scale, M=M)

    def row_slacks(self, x):
        """beta_bar xi + b_bar - A_bar x (length mK)."""
        vector = profile_vector(x)
        if vector.shape[0] != self.n:
            raise DimensionError(f'Profile has dimension {vector.shape[0]}, system expects {self.n}')
        return self.sample_rhs - self.A_bar @ vector

    def sample_margins(self, x):
        """Per-sample smallest scaled row slack; N times the signed distance."""
        return self.row_slacks(x).reshape(self.K, self.m).min(axis=1)

    def shared_rhs(self, x_rivals_part, aux):
        """
        Right-hand side of the shared rows seen by one agent.

        Args:
            x_rivals_part: sum over rival agents of A_bar_j x_j (length mK)
            aux: AuxiliaryVars

        Returns:
            ndarray: beta_bar xi + b_bar - x_rivals_part + M_bar q - tau' e + E_bar s'
        """
        self._require_m()
        expand = np.repeat
        return (
            self.sample_rhs - x_rivals_part
            + self.M * expand(aux.q, self.m)
            - aux.tau_prime
            + expand(aux.s_prime, self.m)
        )


def assemble(spec, layout):
    """
    Build the big-M system for a DRCC over the given variable layout.

    Args:
        spec: DrccSpec
        layout: list of column slices, one per agent

    Returns:
        BigMSystem without M (see compute_big_m)
    """
    mK = spec.m * spec.K
    if mK > settings.GNEP_SOLVER['MAX_MK']:
        raise SystemTooLargeError(f'm*K = {mK} exceeds the limit {settings.GNEP_SOLVER["MAX_MK"]}')
    covered = sum(columns.stop - columns.start for columns in layout)
    if covered != spec.n:
        raise DimensionError(f'layout covers {covered} columns, A has {spec.n}')

    norms = row_dual_norms(spec.beta, spec.norm)
    target = norms.max()
    row_scale = target / norms
    if not np.allclose(row_scale, 1.0, rtol=1e-12, atol=0.0):
        logger.warning(
            f'beta rows have unequal dual norms {np.round(norms, 6).tolist()}; '
            f'rows rescaled to the common norm {target:.6g}'
        )
    scaled = spec.replace(
        A=spec.A * row_scale[:, None],
        beta=spec.beta * row_scale[:, None],
        b=spec.b * row_scale,
    )
    system = BigMSystem(scaled, layout, row_scale)
    logger.info(f'Assembled big-M system: m={spec.m}, K={spec.K}, ||beta||_*={system.beta_dual_norm:.6g}')
    return system


def compute_big_m(system, box, spec=None):
    """
    Sufficient big-M constant over a box, by interval arithmetic on each row.

    Returns:
        float: safety * max(tau'_max, tau'_max - min row slack)
    """
    lower, upper = (np.asarray(bound, dtype=float) for bound in box)
    if lower.shape != (system.n,) or upper.shape != (system.n,):
        raise DimensionError(f'box must have dimension {system.n}')
    if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
        raise ProblemValidationError('box bounds must be finite', field='box')
    if np.any(lower > upper):
        raise ProblemValidationError('box is empty', field='box')

    A = system.A_bar
    positive, negative = np.maximum(A, 0.0), np.minimum(A, 0.0)
    min_ax = positive @ lower + negative @ upper
    max_ax = positive @ upper + negative @ lower
    slack_max = (system.sample_rhs - min_ax).reshape(system.K, system.m)
    slack_min = system.sample_rhs - max_ax

    tau_max = float(np.maximum(slack_max, 0.0).min(axis=1).max())
    safety = settings.GNEP_SOLVER['BIG_M_SAFETY']
    M = safety * max(tau_max, tau_max - float(slack_min.min()))
    if M <= 0.0:
        M = safety
    logger.debug(f'big-M: tau_max={tau_max:.6g}, min slack={slack_min.min():.6g}, M={M:.6g}')
    return M


def build_system(problem):
    """Assemble the system for a problem and attach M computed over its box hull."""
    system = assemble(problem.drcc, problem.layout)
    return system.with_big_m(compute_big_m(system, problem.box_hull()))


def check_constraints(x, aux, system, relaxed=None):
    """
    Violation of each of h1-h5 at (x, aux); 0 means satisfied.

    Returns:
        dict: {'h1': float, ..., 'h5': float}
    """
    system._require_m()
    relaxed = aux.relaxed if relaxed is None else relaxed
    spec = system.spec
    K = system.K
    if aux.K != K:
        raise DimensionError(f'auxiliary variables cover {aux.K} samples, system has {K}')
    tau, s, q = aux.tau_prime, aux.s_prime, aux.q

    h1 = system.threshold - (spec.epsilon * K * tau - s.sum())
    lhs2 = system.row_slacks(x) + system.M * np.repeat(q, system.m)
    h2 = (tau - np.repeat(s, system.m)) - lhs2
    h3 = (tau - s) - system.M * (1.0 - q)
    if relaxed:
        h5 = np.maximum(np.maximum(-q, q - 1.0), 0.0)
    else:
        h5 = np.minimum(np.abs(q), np.abs(q - 1.0))
    return {
        'h1': max(float(h1), 0.0),
        'h2': max(float(h2.max()), 0.0),
        'h3': max(float(h3.max()), 0.0),
        'h4': max(float((-s).max()), 0.0),
        'h5': float(h5.max()) if h5.size else 0.0,
    }


def _constraint_tol(system, tol):
    return tol * max(1.0, system.beta_dual_norm)


def witness_from_caps(caps, q, epsilon, relaxed=False):
    """
    (tau', s', q) attaining the largest h1 value when every tau' - s'_k is
    capped by caps_k.
    """
    certificate = certificate_from_values(caps, epsilon)
    return AuxiliaryVars(tau_prime=certificate.tau, s_prime=certificate.s, q=q, relaxed=relaxed)


def node_caps(margins, q, M):
    """
    Upper bounds on tau' - s'_k implied by h2/h3 for a fixed q:
    min(c_k, M) where q_k = 0 and min(c_k + M, 0) where q_k = 1.
    """
    q = np.asarray(q, dtype=float)
    return np.where(q > 0.5, np.minimum(margins + M, 0.0), np.minimum(margins, M))


def enumeration_order(K):
    """All q in {0,1}^K, by popcount then lexicographically."""
    grid = np.array(list(itertools.product((0, 1), repeat=K)), dtype=int).reshape(-1, K)
    popcount = grid.sum(axis=1)
    return grid[np.lexsort((np.arange(grid.shape[0]), popcount))]


def _masses(caps, epsilon):
    """Row-wise smallest_mass of a matrix."""
    K = caps.shape[1]
    whole, frac = mass_split(epsilon, K)
    ordered = np.sort(caps, axis=1, kind='stable')
    mass = ordered[:, :whole].sum(axis=1)
    if frac > 0.0:
        mass = mass + frac * ordered[:, min(whole, K - 1)]
    return mass


def mi_feasible(x, system, spec=None, mode='certificate', tol=None):
    """
    Decide whether some binary (tau', s', q) satisfies h1-h5 at x.

    Args:
        x: profile
        system: BigMSystem with M
        spec: unused beyond documentation; the system carries its own rows
        mode: 'enumerate' (every q, K <= threshold) or 'certificate'
        tol: feasibility tolerance in distance units

    Returns:
        tuple: (verdict, AuxiliaryVars witness or None)
    """
    system._require_m()
    tol = settings.GNEP_SOLVER['TOL_FEAS'] if tol is None else tol
    epsilon = system.spec.epsilon
    margins = system.sample_margins(x)
    N = system.beta_dual_norm

    if mode == 'enumerate':
        threshold = settings.GNEP_SOLVER['ENUM_THRESHOLD']
        if system.K > threshold:
            raise SystemTooLargeError(f'enumerate mode supports K <= {threshold}, got K={system.K}')
        grid = enumeration_order(system.K)
        caps = np.where(grid == 1, np.minimum(margins + system.M, 0.0), np.minimum(margins, system.M))
        masses = _masses(caps, epsilon)
        feasible = np.flatnonzero(masses >= system.threshold - tol * N)
        if feasible.size == 0:
            return False, None
        index = int(feasible[0])
        witness = witness_from_caps(caps[index], grid[index], epsilon)
        return True, witness

    if mode == 'certificate':
        distances = np.maximum(margins, 0.0) / N
        certificate = certificate_from_values(distances, epsilon)
        witness = AuxiliaryVars(
            tau_prime=N * certificate.tau,
            s_prime=N * certificate.s,
            q=(margins < 0.0).astype(float),
        )
        violations = check_constraints(x, witness, system)
        verdict = all(value <= _constraint_tol(system, tol) for value in violations.values())
        return verdict, witness

    raise ValueError(f"mode must be 'enumerate' or 'certificate', got {mode!r}")


@dataclass(frozen=True)
class WidestAuxiliary:
    """Auxiliary variables that leave every shared row the largest uniform margin."""

    aux: AuxiliaryVars
    margin: float

    @property
    def feasible(self):
        return self.margin >= 0.0


def _largest_root(func, breakpoints, target):
    """
    Largest sigma with func(sigma) >= target for a nonincreasing, continuous,
    piecewise-linear func whose kinks are among breakpoints.
    """
    points = np.unique(np.asarray(breakpoints, dtype=float))
    values = np.array([func(point) for point in points])
    top, bottom = points[-1], points[0]
    if values[-1] >= target:
        slope = func(top + 1.0) - values[-1]
        if slope >= 0.0:
            return float(top)
        return float(top + (values[-1] - target) / -slope)
    above = np.flatnonzero(values >= target)
    if above.size:
        j = int(above[-1])
        left, right = points[j], points[j + 1]
        drop = values[j] - values[j + 1]
        return float(left + (values[j] - target) / drop * (right - left)) if drop > 0 else float(left)
    slope = values[0] - func(bottom - 1.0)
    if slope >= 0.0:
        return -np.inf
    return float(bottom - (target - values[0]) / -slope)


def widest_auxiliary(x, system, q=None):
    """
    Slack-maximizing auxiliary agent decision at x.

    Maximises sigma such that h1-h5 hold with every h2 row tightened by sigma.
    With q=None the binary pattern is chosen as well (q_k = 1 iff c_k < sigma*);
    otherwise q is held fixed. The margin is >= 0 iff x is feasible for the
    chosen q.
    """
    system._require_m()
    epsilon = system.spec.epsilon
    margins = system.sample_margins(x)
    M = system.M
    target = system.threshold

    if q is None:
        def caps_at(sigma):
            shifted = margins - sigma
            return np.where(shifted >= 0.0, np.minimum(shifted, M), np.minimum(shifted + M, 0.0))
        breakpoints = np.concatenate([margins, margins - M, margins + M])
    else:
        q = np.asarray(q, dtype=float)

        def caps_at(sigma):
            return node_caps(margins - sigma, q, M)
        free = margins[q < 0.5]
        breakpoints = np.concatenate([free, free - M, margins[q > 0.5] + M])

    sigma = _largest_root(lambda value: smallest_mass(caps_at(value), epsilon), breakpoints, target)
    if not np.isfinite(sigma):
        sigma = float(np.min(breakpoints)) - system.M
    caps = caps_at(sigma)
    pattern = (margins - sigma < 0.0).astype(float) if q is None else q
    return WidestAuxiliary(aux=witness_from_caps(caps, pattern, epsilon), margin=float(sigma))


def dump_system(system, stream):
    """Write every block of the system in a plain text matrix format."""
    system._require_m()

    def block(name, matrix):
        matrix = np.atleast_2d(matrix)
        stream.write(f'# {name} {matrix.shape[0]}x{matrix.shape[1]}\n')
        for row in matrix:
            stream.write(' '.join(f'{value:.9g}' for value in row) + '\n')

    stream.write(f'# M {system.M:.9g}\n# beta_dual_norm {system.beta_dual_norm:.9g}\n')
    block('row_scale', system.row_scale)
    block('beta_bar', system.beta_bar)
    block('xi', system.xi_stacked)
    block('b_bar', system.b_bar)
    for index, A_block in enumerate(system.A_bar_blocks):
        block(f'A_bar[{index}]', A_block)
    block('E_bar', system.E_bar)
    block('M_bar', system.M_bar)
