"""
Canonical relaxation of the auxiliary agent's strategy set: rows h1-h4 with
q relaxed to [0, 1]^K, written as G_x x + G_aux z <= h for z = (tau', s', q).
"""

import itertools
import logging
import math
from dataclasses import dataclass
from typing import List

import numpy as np
from django.conf import settings

from drcc_gnep.exceptions import DimensionError, SystemTooLargeError
from wasserstein_drcc.distances import profile_vector

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CanonicalRelaxation:
    G_x: np.ndarray
    G_aux: np.ndarray
    h: np.ndarray
    row_labels: List[str]
    K: int
    relaxed: bool = True

    @property
    def tau_index(self):
        return 0

    @property
    def s_slice(self):
        return slice(1, 1 + self.K)

    @property
    def q_slice(self):
        return slice(1 + self.K, 1 + 2 * self.K)

    @property
    def aux_dim(self):
        return 1 + 2 * self.K

    def rows_at(self, x):
        """Rows in z alone with x fixed: G_aux z <= h - G_x x."""
        return self.G_aux, self.h - self.G_x @ profile_vector(x)

    def rows_for_node(self, q, free=None):
        """
        Rows over (x, tau', s', q_free) with the remaining q entries fixed.

        The q bound rows are dropped; callers bound q_free to [0, 1] through
        the box of the QP.

        Args:
            q: length-K values for the fixed entries (free entries ignored)
            free: boolean mask of relaxed entries (default: none)

        Returns:
            tuple: (G, h)
        """
        q = np.asarray(q, dtype=float)
        if q.shape != (self.K,):
            raise DimensionError(f'q has length {q.shape[0]}, expected {self.K}')
        free = np.zeros(self.K, dtype=bool) if free is None else np.asarray(free, dtype=bool)
        keep = [index for index, label in enumerate(self.row_labels) if not label.startswith('q')]
        q_block = self.G_aux[keep][:, self.q_slice]
        G = np.hstack([self.G_x[keep], self.G_aux[keep][:, :1 + self.K], q_block[:, free]])
        h = self.h[keep] - q_block[:, ~free] @ q[~free]
        return G, h

    def rows_with_fixed_q(self, q):
        """Rows over (x, tau', s') with every q entry fixed."""
        return self.rows_for_node(q)

    def contains(self, x, aux, tol=1e-9):
        z = np.concatenate([[aux.tau_prime], aux.s_prime, aux.q])
        G, h = self.rows_at(x)
        return bool(np.all(G @ z <= h + tol))


def relax_canonical(system):
    """
    Rows h1-h4 plus 0 <= q <= 1 of a big-M system.

    Returns:
        CanonicalRelaxation
    """
    system._require_m()
    K, m, n = system.K, system.m, system.n
    spec = system.spec
    width = 1 + 2 * K
    E = system.E_bar
    labels = []

    # h1: -eps*K*tau' + sum(s') <= -theta*K*N
    h1 = np.zeros((1, width))
    h1[0, 0] = -spec.epsilon * K
    h1[0, 1:1 + K] = 1.0
    labels.append('h1')

    # h2: A_bar x + tau' - E_bar s' - M E_bar q <= beta_bar xi + b_bar
    h2 = np.hstack([np.ones((m * K, 1)), -E, -system.M * E])
    labels.extend(f'h2[{k},{j}]' for k in range(K) for j in range(m))

    # h3: tau' - s'_k + M q_k <= M
    h3 = np.hstack([np.ones((K, 1)), -np.eye(K), system.M * np.eye(K)])
    labels.extend(f'h3[{k}]' for k in range(K))

    # h4: -s' <= 0
    h4 = np.hstack([np.zeros((K, 1)), -np.eye(K), np.zeros((K, K))])
    labels.extend(f'h4[{k}]' for k in range(K))

    q_low = np.hstack([np.zeros((K, 1 + K)), -np.eye(K)])
    q_high = np.hstack([np.zeros((K, 1 + K)), np.eye(K)])
    labels.extend(f'q_low[{k}]' for k in range(K))
    labels.extend(f'q_high[{k}]' for k in range(K))

    G_aux = np.vstack([h1, h2, h3, h4, q_low, q_high])
    G_x = np.vstack([
        np.zeros((1, n)), system.A_bar, np.zeros((4 * K, n)),
    ])
    h = np.concatenate([
        [-system.threshold], system.sample_rhs, np.full(K, system.M),
        np.zeros(K), np.zeros(K), np.ones(K),
    ])
    return CanonicalRelaxation(G_x=G_x, G_aux=G_aux, h=h, row_labels=labels, K=K)


@dataclass(frozen=True)
class VertexReport:
    vertices: np.ndarray
    fractional: List[bool]

    @property
    def all_binary(self):
        return not any(self.fractional)

    @property
    def count(self):
        return self.vertices.shape[0]

    def to_dict(self):
        return {
            'vertices': self.vertices.tolist(),
            'fractional': list(self.fractional),
            'all_binary': self.all_binary,
        }


def vertex_diagnostic(system, x, tol=1e-9):
    """
    Enumerate the vertices of the relaxed auxiliary polyhedron at fixed x
    (tau' additionally bounded by M) and flag those with fractional q.
    Diagnostic only; tiny K.
    """
    if system.K > 3:
        raise SystemTooLargeError(f'vertex_diagnostic supports K <= 3, got K={system.K}')
    relaxation = relax_canonical(system)
    G, h = relaxation.rows_at(x)
    cap = np.zeros((1, relaxation.aux_dim))
    cap[0, 0] = 1.0
    G = np.vstack([G, cap])
    h = np.concatenate([h, [system.M]])

    rows, dim = G.shape
    total = math.comb(rows, dim)
    limit = settings.GNEP_SOLVER['VERTEX_COMBINATION_LIMIT']
    if total > limit:
        raise SystemTooLargeError(f'{total} row combinations exceed the limit {limit}')

    combos = np.array(list(itertools.combinations(range(rows), dim)), dtype=int)
    matrices = G[combos]
    rhs = h[combos]
    regular = np.abs(np.linalg.det(matrices)) > 1e-10
    if not np.any(regular):
        return VertexReport(vertices=np.zeros((0, relaxation.aux_dim)), fractional=[])
    points = np.linalg.solve(matrices[regular], rhs[regular][..., None])[..., 0]
    feasible = np.all(points @ G.T <= h + tol, axis=1)
    points = points[feasible]
    if points.size == 0:
        return VertexReport(vertices=np.zeros((0, relaxation.aux_dim)), fractional=[])
    vertices = np.unique(np.round(points, 9), axis=0)
    q = vertices[:, relaxation.q_slice]
    fractional = [bool(np.any(np.minimum(np.abs(row), np.abs(row - 1.0)) > 1e-7)) for row in q]
    logger.info(
        f'vertex diagnostic: {vertices.shape[0]} vertices, {sum(fractional)} with fractional q'
    )
    return VertexReport(vertices=vertices, fractional=fractional)
