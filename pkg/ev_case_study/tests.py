"""
EV Case Study App - Tests
Test cases for the charging-station market, samplers and experiments.
"""

import csv
import json
import shutil
import tempfile
from io import StringIO
from pathlib import Path
from types import SimpleNamespace
from unittest import mock

import numpy as np
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase

from drcc_gnep.exceptions import NotApplicableError, ProblemValidationError, UnsupportedDistributionError
from equilibrium.solver import EquilibriumStatus, SolverOptions, certify
from wasserstein_drcc.ambiguity import SampleSet
from wasserstein_drcc.loaders import format_samples

from .experiments import SWEEP_HEADER, Table1Row, run_sweep, run_table1, solve_market, table1_params
from .market import CsMarketParams, build_gnep, closed_form_ne, symmetric_price
from .sampling import SamplerSpec, gen_samples, monte_carlo_violation, wilson_interval


def low_demand_samples(K=10):
    """Demand shocks far below zero so the shared floor never binds."""
    return SampleSet(np.full((K, 1), -100.0))


class MarketParamsTestCase(SimpleTestCase):
    """Test cases for market parameters."""

    def setUp(self):
        self.params = CsMarketParams.from_settings()

    def test_defaults(self):
        """Test the default market read from settings"""
        self.assertEqual(self.params.I, 3)
        self.assertAlmostEqual(self.params.a, 0.25)
        self.assertAlmostEqual(self.params.u_hat, 250.0)
        np.testing.assert_array_equal(self.params.base_load, [50.0, 50.0, 50.0])
        self.assertEqual(self.params.sampler.to_dict(), {'distribution': 'normal', 'mean': 0.0, 'std': 5.0})

    def test_per_station_values(self):
        """Test per-station overrides leave the base untouched"""
        params = self.params.with_first_station(15.0)
        np.testing.assert_array_equal(params.N0, [15.0, 0.0, 0.0])
        np.testing.assert_array_equal(self.params.N0, [0.0, 0.0, 0.0])
        with self.assertRaises(ProblemValidationError):
            params.with_stations(5)
        self.assertEqual(self.params.with_stations(5).u0.shape, (5,))

    def test_validation(self):
        """Test invalid markets are rejected"""
        with self.assertRaises(ProblemValidationError):
            CsMarketParams(I=0)
        with self.assertRaises(ProblemValidationError):
            CsMarketParams(I=3, N0=[1.0, 2.0])
        with self.assertRaises(ProblemValidationError):
            CsMarketParams(c0=2.0)
        with self.assertRaises(UnsupportedDistributionError):
            CsMarketParams(sampler={'distribution': 'cauchy'})


class BuildGnepTestCase(SimpleTestCase):
    """Test cases for the pricing game built from a market."""

    def setUp(self):
        self.params = CsMarketParams.from_settings()
        self.problem = build_gnep(self.params)

    def test_layout(self):
        """Test agent and shared constraint data"""
        self.assertEqual(self.problem.name, 'ev-pricing-I3')
        self.assertEqual(self.problem.n, 3)
        np.testing.assert_allclose(self.problem.agents[0].Q, [[1250.0]])
        np.testing.assert_allclose(self.problem.drcc.A, 500.0 * np.ones((1, 3)))
        np.testing.assert_allclose(self.problem.drcc.b, [250.0])
        self.assertEqual(self.problem.drcc.samples.samples.shape, (10, 1))

    def test_objective_is_negative_profit(self):
        """Test each agent minimises its negated profit"""
        rng = np.random.default_rng(4)
        for _ in range(100):
            prices = rng.uniform(0.0, 1.0, size=3)
            for i in range(3):
                profit = self.params.profit(i, prices)
                self.assertAlmostEqual(
                    self.problem.eval_objective(i, prices), -profit, delta=1e-10 * (1.0 + abs(profit)),
                )

    def test_capacity_rows(self):
        """Test capacity and nonnegative arrivals"""
        inside = self.problem.local_feasible(0, [0.161667])
        self.assertTrue(inside.feasible)
        # c = 0.02 brings 100 arrivals against a capacity of 50
        self.assertFalse(self.problem.local_feasible(0, [0.02]).feasible)
        # c = 0.3 turns arrivals negative
        self.assertFalse(self.problem.local_feasible(0, [0.3]).feasible)


class ClosedFormTestCase(SimpleTestCase):
    """Test cases for the interior equilibrium formula."""

    def setUp(self):
        self.params = CsMarketParams.from_settings()

    def test_symmetric_defaults(self):
        """Test the symmetric price of the default market"""
        prices = closed_form_ne(self.params)
        np.testing.assert_allclose(prices, 0.161667, atol=1e-6)
        self.assertAlmostEqual(symmetric_price(self.params), 0.12 + 62.5 / 1500.0, places=12)

    def test_station_count_formula(self):
        """Test the symmetric price against the station count"""
        for I in (1, 3, 10, 25):
            params = self.params.with_stations(I)
            expected = 0.12 + 62.5 / (1125.0 + 125.0 * I)
            np.testing.assert_allclose(closed_form_ne(params, low_demand_samples()), expected, atol=1e-12)
        self.assertAlmostEqual(symmetric_price(self.params.with_stations(10)), 0.146316, places=6)

    def test_first_station_rows(self):
        """Test asymmetric prices with onsite EVs at station 1"""
        samples = low_demand_samples()
        np.testing.assert_allclose(
            closed_form_ne(self.params.with_first_station(15.0), samples), [0.176944, 0.160278, 0.160278], atol=1e-6,
        )
        np.testing.assert_allclose(
            closed_form_ne(self.params.with_first_station(30.0), samples), [0.192222, 0.158889, 0.158889], atol=1e-6,
        )

    def test_capacity_active(self):
        """Test the formula refuses a binding capacity row"""
        with self.assertRaises(NotApplicableError):
            closed_form_ne(self.params.with_first_station(45.0), low_demand_samples())

    def test_shared_floor_active(self):
        """Test the formula refuses a binding chance constraint"""
        # default draws reach 4.7 while the slack at these prices is only 1.25
        with self.assertRaises(NotApplicableError):
            closed_form_ne(self.params.with_first_station(15.0))

    def test_stationary_and_certified(self):
        """Test the formula gives a stationary, certified point"""
        problem = build_gnep(self.params)
        prices = closed_form_ne(self.params)
        for i in range(3):
            np.testing.assert_allclose(problem.grad_objective(i, prices), 0.0, atol=1e-9)
        self.assertTrue(certify(problem, prices).verdict)

    def test_energy_scaling(self):
        """Test E_d scales the residual but not the equilibrium"""
        scaled = self.params.replace(E_d=3.0)
        np.testing.assert_allclose(closed_form_ne(scaled), closed_form_ne(self.params), atol=1e-14)
        off = closed_form_ne(self.params) - 0.002
        base_residual = certify(build_gnep(self.params), off).residual
        scaled_residual = certify(build_gnep(scaled), off).residual
        self.assertAlmostEqual(scaled_residual / base_residual, 3.0, places=6)


class SamplingTestCase(SimpleTestCase):
    """Test cases for sample generation and out-of-sample checks."""

    def setUp(self):
        self.params = CsMarketParams.from_settings()

    def test_gen_samples_is_seeded(self):
        """Test the draws repeat for a fixed seed"""
        first = gen_samples(self.params.sampler, 10, 42)
        second = gen_samples(self.params.sampler, 10, 42)
        np.testing.assert_array_equal(first.samples, second.samples)
        self.assertEqual(first.samples.shape, (10, 1))
        self.assertAlmostEqual(first.samples.max(), 4.7028, delta=1e-3)
        self.assertEqual(gen_samples({'distribution': 'normal'}, 1, 0).samples.shape, (1, 1))

    def test_gen_samples_rejects_bad_input(self):
        """Test bad counts, distributions and parameters"""
        with self.assertRaises(ProblemValidationError):
            gen_samples(self.params.sampler, 0, 42)
        with self.assertRaises(UnsupportedDistributionError):
            gen_samples({'distribution': 'cauchy'}, 5, 42)
        with self.assertRaises(ProblemValidationError):
            SamplerSpec('uniform', {'mean': 1.0})

    def test_uniform_support(self):
        """Test uniform draws stay in [low, high)"""
        draws = gen_samples({'distribution': 'uniform', 'low': -2.0, 'high': 3.0}, 500, 7).samples
        self.assertGreaterEqual(draws.min(), -2.0)
        self.assertLess(draws.max(), 3.0)

    def test_exceedance(self):
        """Test exact tail probabilities"""
        self.assertAlmostEqual(self.params.sampler.exceedance(7.5), 0.0668072, places=6)
        self.assertAlmostEqual(SamplerSpec('laplace').exceedance(0.0), 0.5)

    def test_violation_at_symmetric_equilibrium(self):
        """Test the Monte Carlo estimate at the symmetric prices"""
        prices = np.full(3, symmetric_price(self.params))
        estimate = monte_carlo_violation(prices, self.params)
        self.assertAlmostEqual(estimate.slack, 7.5, places=9)
        self.assertEqual(estimate.draws, 100_000)
        self.assertAlmostEqual(estimate.estimate, 0.0668, delta=0.004)
        self.assertLess(estimate.ci_lower, estimate.estimate)
        self.assertGreater(estimate.ci_upper, estimate.estimate)
        repeat = monte_carlo_violation(prices, self.params)
        self.assertEqual(repeat.estimate, estimate.estimate)

    def test_violation_extremes(self):
        """Test prices that never and always violate"""
        deep = monte_carlo_violation(np.zeros(3), self.params, N=10_000)
        self.assertEqual(deep.estimate, 0.0)
        self.assertEqual(deep.ci_lower, 0.0)
        # alpha_u * sum(c) = u_hat leaves zero slack
        median = monte_carlo_violation(np.full(3, 250.0 / 1500.0), self.params, N=50_000)
        self.assertAlmostEqual(median.estimate, 0.5, delta=0.02)
        shifted = monte_carlo_violation(
            np.zeros(3), self.params, true_dist=SamplerSpec('uniform', {'low': 300.0, 'high': 301.0}), N=10_000,
        )
        self.assertEqual(shifted.estimate, 1.0)
        self.assertEqual(shifted.ci_upper, 1.0)

    def test_minimum_draws(self):
        """Test fewer than 10^4 draws are refused"""
        with self.assertRaises(ProblemValidationError):
            monte_carlo_violation(np.zeros(3), self.params, N=9_999)

    def test_wilson_interval(self):
        """Test the interval always contains the estimate"""
        lower, upper = wilson_interval(0, 100)
        self.assertEqual(lower, 0.0)
        self.assertGreater(upper, 0.0)
        lower, upper = wilson_interval(100, 100)
        self.assertEqual(upper, 1.0)
        self.assertLess(lower, 1.0)
        lower, upper = wilson_interval(50, 100)
        self.assertAlmostEqual(0.5 - lower, upper - 0.5, places=12)
        for hits in (0, 1, 7, 99, 100):
            lower, upper = wilson_interval(hits, 100)
            self.assertLessEqual(lower, hits / 100)
            self.assertGreaterEqual(upper, hits / 100)


class MarketSolveTestCase(SimpleTestCase):
    """Test cases for solving markets end to end."""

    def setUp(self):
        self.params = CsMarketParams.from_settings()
        self.options = SolverOptions.from_settings(multistart=4)

    def test_defaults_match_closed_form(self):
        """Test the solver reproduces the symmetric equilibrium"""
        result = solve_market(self.params, self.options)
        self.assertEqual(result.status, EquilibriumStatus.GNE)
        self.assertLessEqual(result.residual, 1e-6)
        np.testing.assert_allclose(result.x_star.vector, closed_form_ne(self.params), atol=1e-6)

    def test_lower_risk_level_matches_closed_form(self):
        """Test epsilon = 0.1 keeps the interior equilibrium"""
        params = self.params.replace(epsilon=0.1)
        result = solve_market(params, self.options)
        self.assertEqual(result.status, EquilibriumStatus.GNE)
        np.testing.assert_allclose(result.x_star.vector, closed_form_ne(params), atol=1e-6)

    def test_first_station_row(self):
        """Test the asymmetric market with slack samples"""
        params = self.params.with_first_station(15.0)
        samples = low_demand_samples()
        result = solve_market(params, self.options, samples)
        self.assertEqual(result.status, EquilibriumStatus.GNE)
        np.testing.assert_allclose(result.x_star.vector, closed_form_ne(params, samples), atol=1e-6)

    def test_sweep_prices_fall_with_competition(self):
        """Test prices fall as stations are added"""
        counts = [3, 5, 10, 25, 50]
        rows = run_sweep(counts, self.params, self.options, workers=1)
        self.assertEqual([row.I for row in rows], counts)
        prices = [row.price for row in rows]
        self.assertTrue(all(later < earlier for earlier, later in zip(prices, prices[1:])))
        for row in rows:
            self.assertEqual(row.status, 'GNE')
            self.assertAlmostEqual(row.price, 0.12 + 62.5 / (1125.0 + 125.0 * row.I), delta=1e-5)


class Table1TestCase(SimpleTestCase):
    """Test cases for the one-at-a-time parameter table."""

    def setUp(self):
        self.base = CsMarketParams.from_settings()

    def test_table_parameters(self):
        """Test each row changes exactly one parameter"""
        np.testing.assert_array_equal(table1_params('N1_0', 30.0, self.base).N0, [30.0, 0.0, 0.0])
        self.assertEqual(table1_params('u_lower', 90.0, self.base).u_lower, 90.0)
        self.assertEqual(table1_params('epsilon', 0.01, self.base).epsilon, 0.01)

    def test_oracle_coverage_with_default_draws(self):
        """Test which rows have a closed form under the default draws"""
        fake = SimpleNamespace(
            x_star=SimpleNamespace(vector=np.full(3, 0.161667)), residual=0.0,
            status=EquilibriumStatus.GNE, wall_ms=1.0,
        )
        with mock.patch('ev_case_study.experiments.solve_market', return_value=fake) as solver:
            rows = run_table1(self.base)
        self.assertEqual(len(rows), 9)
        self.assertTrue(all(call.args[2] is None for call in solver.call_args_list))
        with_oracle = {(row.parameter, row.value) for row in rows if row.closed_form is not None}
        self.assertEqual(
            with_oracle, {('u_lower', 50.0), ('u_lower', 70.0), ('epsilon', 0.1), ('epsilon', 0.05)},
        )

    def test_table_with_slack_samples(self):
        """Test the full table against the closed form when the shared floor is slack"""
        options = SolverOptions.from_settings(multistart=2)
        rows = run_table1(self.base, options, low_demand_samples())
        self.assertEqual(len(rows), 9)
        by_key = {(row.parameter, row.value): row for row in rows}
        np.testing.assert_allclose(by_key['N1_0', 15.0].prices, [0.176944, 0.160278, 0.160278], atol=1e-5)
        np.testing.assert_allclose(by_key['N1_0', 30.0].prices, [0.192222, 0.158889, 0.158889], atol=1e-5)
        for row in rows:
            self.assertEqual(row.status == 'GNE', row.residual <= options.tol_eq, (row.parameter, row.value))
            if row.closed_form is not None:
                self.assertEqual(row.status, 'GNE')
                np.testing.assert_allclose(row.prices, row.closed_form, atol=1e-5)

    def test_row_serialization(self):
        """Test rows keep 9 significant digits and hide timings"""
        row = Table1Row('u_lower', 50.0, [0.1616666667] * 3, 1e-12, 'GNE', None, 12.5)
        data = row.to_dict()
        self.assertNotIn('wall_ms', data)
        self.assertEqual(data['prices'], [0.161666667] * 3)
        self.assertEqual(row.to_dict(timings=True)['wall_ms'], 12.5)


class CaseStudyCommandTestCase(SimpleTestCase):
    """Test cases for the casestudy management command."""

    def setUp(self):
        self.workdir = Path(tempfile.mkdtemp())
        self.addCleanup(shutil.rmtree, self.workdir)
        self.out = self.workdir / 'out'

    def assertExitCode(self, code, *args, **options):
        with self.assertRaises(CommandError) as caught:
            call_command('casestudy', *args, stdout=StringIO(), stderr=StringIO(), **options)
        self.assertEqual(caught.exception.returncode, code)

    def test_export(self):
        """Test exporting a market as a problem file"""
        call_command('casestudy', 'export', stations='4', out=str(self.out), quiet=True)
        data = json.loads(self.out.read_text())
        self.assertEqual(data['name'], 'ev-pricing-I4')
        self.assertEqual(len(data['agents']), 4)
        self.assertEqual(data['drcc']['norm'], '2')

    def test_export_with_sample_file(self):
        """Test --samples replaces the generated draws"""
        sample_file = self.workdir / 'low.txt'
        sample_file.write_text(format_samples(low_demand_samples(K=4)))
        call_command('casestudy', 'export', samples=str(sample_file), out=str(self.out), quiet=True)
        data = json.loads(self.out.read_text())
        np.testing.assert_allclose(data['drcc']['samples'], np.full((4, 1), -100.0))

    def test_sweep_csv(self):
        """Test the sweep writes one CSV row per station count"""
        call_command('casestudy', 'sweep', stations='3,5', max_starts=2, out=str(self.out), quiet=True)
        rows = list(csv.reader(self.out.read_text().splitlines()))
        self.assertEqual(rows[0], SWEEP_HEADER)
        self.assertEqual([row[0] for row in rows[1:]], ['3', '5'])

    def test_validate(self):
        """Test out-of-sample validation at the concentration radius"""
        call_command('casestudy', 'validate', draws=20_000, max_starts=2, out=str(self.out), quiet=True)
        data = json.loads(self.out.read_text())
        self.assertTrue(data['passed'])
        self.assertAlmostEqual(data['theta'], 0.547, delta=1e-3)

    def test_usage_errors(self):
        """Test malformed arguments exit with code 1"""
        self.assertExitCode(1, 'sweep', stations='3,x')
        self.assertExitCode(1, 'sweep', stations='0')
        self.assertExitCode(1, 'export', stations='3,5')
        self.assertExitCode(1, 'bogus')
        self.assertExitCode(1, 'validate', draws=10)
        self.assertExitCode(1, 'export', samples=str(self.workdir / 'missing.txt'))
        wide = self.workdir / 'wide.txt'
        wide.write_text('1.0 2.0\n3.0 4.0\n')
        self.assertExitCode(1, 'export', samples=str(wide))
