"""
Small game factories shared by the app test suites.
"""

import numpy as np

from game_model.problem import AgentSpec, GnepProblem
from wasserstein_drcc.ambiguity import DrccSpec, SampleSet


def scalar_agent(Q=2.0, p0=-1.0, rival_dim=0, P=None, r0=0.0, rho=None, lower=0.0, upper=1.0, H=None, g=None):
    return AgentSpec(
        Q=[[Q]], p0=[p0],
        P=[P if P is not None else [0.0] * rival_dim],
        r0=r0,
        rho=rho if rho is not None else [0.0] * rival_dim,
        H=H if H is not None else [], g=g if g is not None else [],
        lower=[lower], upper=[upper],
    )


def make_drcc(A, beta, b, samples, epsilon=0.5, theta=0.1, norm=2):
    return DrccSpec(
        A=A, beta=beta, b=b, epsilon=epsilon, theta=theta, norm=norm,
        samples=SampleSet(np.asarray(samples, dtype=float)),
    )


def slack_game(count=2, K=3, theta=0.01):
    """Independent scalar agents whose shared row never binds inside the box."""
    agents = [scalar_agent(Q=2.0, p0=-1.0, rival_dim=count - 1) for _ in range(count)]
    drcc = make_drcc(
        A=[[1.0] * count], beta=[[1.0]], b=[10.0 * count],
        samples=np.linspace(-1.0, 1.0, K).reshape(-1, 1), epsilon=0.5, theta=theta,
    )
    return GnepProblem(agents, drcc, name='slack')


def random_drcc(rng, n, K=None, m=None, l=None):
    K = int(rng.integers(1, 7)) if K is None else K
    m = int(rng.integers(1, 4)) if m is None else m
    l = int(rng.integers(1, 3)) if l is None else l
    beta = rng.normal(size=(m, l))
    beta[np.abs(beta) < 0.1] = 0.5
    return DrccSpec(
        A=rng.normal(size=(m, n)),
        beta=beta,
        b=rng.normal(loc=2.0, size=m),
        epsilon=float(rng.uniform(0.05, 0.95)),
        theta=float(rng.uniform(0.01, 0.5)),
        norm=[1, 2, 'inf'][int(rng.integers(0, 3))],
        samples=SampleSet(rng.normal(size=(K, l))),
    )


def random_game(rng, dims=None, K=None, m=None, coupled=True):
    """Random game with PD curvature, affine coupling and unit boxes around zero."""
    dims = [int(d) for d in (rng.integers(1, 3, size=int(rng.integers(1, 3))) if dims is None else dims)]
    n = sum(dims)
    agents = []
    for dim in dims:
        rival = n - dim
        root = rng.normal(size=(dim, dim))
        agents.append(AgentSpec(
            Q=root @ root.T + dim * np.eye(dim),
            p0=rng.normal(size=dim),
            P=0.3 * rng.normal(size=(dim, rival)) if coupled else np.zeros((dim, rival)),
            r0=float(rng.normal()),
            rho=rng.normal(size=rival),
            H=[], g=[],
            lower=-np.ones(dim), upper=np.ones(dim),
        ))
    return GnepProblem(agents, random_drcc(rng, n, K=K, m=m), name='random')
