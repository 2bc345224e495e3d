"""
Experiment runners for the charging-station study: the parameter table,
the station-count sweep and the out-of-sample validation.
"""

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from django.conf import settings

from drcc_gnep.exceptions import NotApplicableError
from equilibrium.serializers import significant
from equilibrium.solver import SolverOptions, solve
from wasserstein_drcc.distances import radius_hint

from .market import CsMarketParams, build_gnep, closed_form_ne
from .sampling import monte_carlo_violation

logger = logging.getLogger(__name__)

TABLE1_SWEEPS = (
    ('N1_0', (15.0, 30.0, 45.0)),
    ('u_lower', (50.0, 70.0, 90.0)),
    ('epsilon', (0.1, 0.05, 0.01)),
)

SWEEP_HEADER = ['I', 'price', 'residual', 'status', 'wall_ms']


@dataclass
class Table1Row:
    parameter: str
    value: float
    prices: List[float]
    residual: float
    status: str
    closed_form: Optional[List[float]]
    wall_ms: float

    def to_dict(self, timings=False):
        data = {
            'parameter': self.parameter,
            'value': significant(self.value),
            'prices': [significant(price) for price in self.prices],
            'residual': significant(self.residual),
            'status': self.status,
            'closed_form': None if self.closed_form is None else [significant(p) for p in self.closed_form],
        }
        if timings:
            data['wall_ms'] = significant(self.wall_ms)
        return data


@dataclass
class SweepRow:
    I: int  # noqa: E741
    price: float
    residual: float
    status: str
    wall_ms: float

    def as_csv(self):
        return [self.I, f'{self.price:.9g}', f'{self.residual:.9g}', self.status, f'{self.wall_ms:.9g}']


@dataclass
class ValidationRow:
    prices: List[float]
    theta: float
    status: str
    violation: object
    bound: float

    @property
    def passed(self):
        return self.violation.estimate <= self.bound

    def to_dict(self):
        return {
            'prices': [significant(price) for price in self.prices],
            'theta': significant(self.theta),
            'status': self.status,
            'violation': {key: significant(value) for key, value in self.violation.to_dict().items()},
            'bound': significant(self.bound),
            'passed': self.passed,
        }


def table1_params(parameter, value, base):
    if parameter == 'N1_0':
        return base.with_first_station(value)
    return base.replace(**{parameter: value})


def _closed_form(params, samples=None):
    try:
        return closed_form_ne(params, samples).tolist()
    except NotApplicableError as exc:
        logger.info(f'closed form not applicable: {exc}')
        return None


def solve_market(params, options=None, samples=None):
    """Build and solve one market instance."""
    problem = build_gnep(params, samples)
    return solve(problem, options or SolverOptions.from_settings(seed=params.seed))


def run_table1(base=None, options=None, samples=None):
    """
    Three one-at-a-time sweeps around the default market: onsite EVs at
    station 1, the demand floor and the risk level.

    With the default draws the shared floor binds for N1_0 = 15 and 30;
    pass a SampleSet of low demand shocks to keep every row interior.

    Returns:
        list: Table1Row per (parameter, value), sweeps in table order
    """
    base = base or CsMarketParams.from_settings()
    rows = []
    for parameter, values in TABLE1_SWEEPS:
        for value in values:
            params = table1_params(parameter, value, base)
            result = solve_market(params, options, samples)
            rows.append(Table1Row(
                parameter=parameter,
                value=value,
                prices=result.x_star.vector.tolist(),
                residual=result.residual,
                status=result.status.value,
                closed_form=_closed_form(params, samples),
                wall_ms=result.wall_ms,
            ))
            logger.info(f'table row {parameter}={value}: {result.status.value}, residual {result.residual:.3e}')
    return rows


def _sweep_row(args):
    I, base, options, samples = args
    result = solve_market(base.with_stations(I), options, samples)
    return SweepRow(
        I=I,
        price=float(np.mean(result.x_star.vector)),
        residual=result.residual,
        status=result.status.value,
        wall_ms=result.wall_ms,
    )


def run_sweep(I_list, base=None, options=None, workers=None, samples=None):
    """Symmetric markets for every station count; rows come back in input order."""
    base = base or CsMarketParams.from_settings()
    workers = settings.GNEP_SOLVER['WORKERS'] if workers is None else workers
    jobs = [(int(I), base, options, samples) for I in I_list]
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_sweep_row, jobs))
    return [_sweep_row(job) for job in jobs]


def run_validate(base=None, options=None, draws=None, C=None, samples=None):
    """
    Solve with the Wasserstein radius from the concentration bound and
    estimate the out-of-sample violation at the equilibrium.

    Returns:
        ValidationRow: passes when the estimate is within epsilon + 3 standard errors
    """
    base = base or CsMarketParams.from_settings()
    draws = settings.CASE_STUDY['mc_draws'] if draws is None else draws
    C = settings.CASE_STUDY['radius_C'] if C is None else C
    K = base.K if samples is None else samples.K
    theta = radius_hint(base.epsilon, K, C, 1)
    params = base.replace(theta=theta)
    result = solve_market(params, options, samples)
    violation = monte_carlo_violation(result.x_star, params, N=draws)
    row = ValidationRow(
        prices=result.x_star.vector.tolist(),
        theta=theta,
        status=result.status.value,
        violation=violation,
        bound=params.epsilon + 3.0 * violation.std_error,
    )
    logger.info(f'validation: violation {violation.estimate:.4g} against bound {row.bound:.4g}')
    return row


def write_sweep_csv(rows, stream):
    writer = csv.writer(stream, lineterminator='\n')
    writer.writerow(SWEEP_HEADER)
    for row in rows:
        writer.writerow(row.as_csv())
