"""
Equilibrium App - Tests
Test cases for the equilibrium search, certification, reports and commands.
"""

import dataclasses
import json
import logging
import shutil
import tempfile
from io import StringIO
from pathlib import Path
from unittest import mock

import numpy as np
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase

from drcc_gnep.exceptions import InfeasibleGameError, ProblemValidationError
from drcc_gnep.testing import make_drcc, random_game, scalar_agent, slack_game
from game_model.loaders import write_problem
from game_model.problem import GnepProblem
from ni_residual.qp import qp_solve

from .serializers import EquilibriumResultSerializer, significant
from .solver import (
    CertificationReport, EquilibriumStatus, GnepSolver, SolverOptions, _Descent, best_response_iteration, certify,
    solve,
)


def coupled_pair(cap=0.6, theta=0.01):
    """Two agents that each want 0.5 but share x1 + x2 <= cap under every sample."""
    agents = [scalar_agent(rival_dim=1) for _ in range(2)]
    drcc = make_drcc(A=[[1.0, 1.0]], beta=[[1.0]], b=[cap], samples=np.zeros((3, 1)), epsilon=0.5, theta=theta)
    return GnepProblem(agents, drcc, name='coupled')


def interacting_pair():
    """J_i = x_i^2 - x_i + 0.5 x_i x_j; the equilibrium is x = (0.4, 0.4)."""
    agents = [scalar_agent(P=[0.5], rival_dim=1) for _ in range(2)]
    drcc = make_drcc(A=[[1.0, 1.0]], beta=[[1.0]], b=[20.0], samples=np.linspace(-1, 1, 3).reshape(-1, 1))
    return GnepProblem(agents, drcc, name='interacting')


def infeasible_game():
    drcc = make_drcc(A=[[1.0]], beta=[[1.0]], b=[-5.0], samples=np.zeros((3, 1)), theta=0.1)
    return GnepProblem([scalar_agent()], drcc, name='infeasible')


class SolverOptionsTestCase(SimpleTestCase):
    """Test cases for solver options."""

    def test_defaults_follow_settings(self):
        """Test options default to settings.GNEP_SOLVER"""
        options = SolverOptions.from_settings()
        self.assertEqual(options.multistart, 16)
        self.assertEqual(options.seed, 42)
        self.assertEqual(options.tol_eq, 1e-6)

    def test_overrides_skip_none_and_unknown(self):
        """Test None and unknown overrides are ignored"""
        options = SolverOptions.from_settings(seed=7, multistart=None, colour='red')
        self.assertEqual(options.seed, 7)
        self.assertEqual(options.multistart, 16)

    def test_validation(self):
        """Test out-of-range budgets are rejected"""
        with self.assertRaises(ProblemValidationError):
            SolverOptions(tol_eq=0.0)
        with self.assertRaises(ProblemValidationError):
            SolverOptions(multistart=0)
        with self.assertRaises(ProblemValidationError):
            SolverOptions(enum_threshold=-1)
        with self.assertRaises(ProblemValidationError):
            SolverOptions(node_order='random')

    def test_replace_keeps_other_fields(self):
        """Test replace only changes the named fields"""
        options = SolverOptions(seed=3).replace(multistart=2)
        self.assertEqual((options.seed, options.multistart), (3, 2))


class SolveTestCase(SimpleTestCase):
    """Test cases for the equilibrium search."""

    def setUp(self):
        self.options = SolverOptions(multistart=4, seed=1)

    def test_slack_game_certified_from_warm_start(self):
        """Test a certified warm start ends the search on its node"""
        result = solve(slack_game(), self.options)
        self.assertEqual(result.status, EquilibriumStatus.GNE)
        np.testing.assert_allclose(result.x_star.vector, [0.5, 0.5], atol=1e-8)
        self.assertLessEqual(result.residual, 1e-6)
        self.assertEqual(len(result.nodes), 1)
        self.assertEqual(result.nodes[0].starts_used, 1)
        self.assertTrue(result.warm_start.converged)
        self.assertEqual(result.problem_class, 'MILP')

    def test_uncoupled_games_match_independent_minimizers(self):
        """Test games with a slack shared row split into independent QPs"""
        rng = np.random.default_rng(8)
        for _ in range(10):
            base = random_game(rng, dims=[1, 2], coupled=False)
            drcc = make_drcc(
                A=np.ones((1, base.n)), beta=[[1.0]], b=[10.0 * base.n],
                samples=np.linspace(-1, 1, 3).reshape(-1, 1),
            )
            problem = base.with_drcc(drcc)
            expected = np.concatenate([
                qp_solve(agent.Q, agent.p0, box=(agent.lower, agent.upper)).x for agent in problem.agents
            ])
            result = solve(problem, self.options)
            self.assertEqual(result.status, EquilibriumStatus.GNE)
            np.testing.assert_allclose(result.x_star.vector, expected, atol=1e-6)

    def test_interacting_pair(self):
        """Test the equilibrium of a game with rival terms"""
        result = solve(interacting_pair(), self.options)
        self.assertEqual(result.status, EquilibriumStatus.GNE)
        np.testing.assert_allclose(result.x_star.vector, [0.4, 0.4], atol=1e-8)
        self.assertEqual(result.problem_class, 'MIQP')

    def test_shared_cap_binds(self):
        """Test a binding shared row"""
        problem = coupled_pair()
        result = solve(problem, self.options)
        self.assertEqual(result.status, EquilibriumStatus.GNE)
        x = result.x_star.vector
        self.assertLess(x.sum(), 1.0 - 1e-3)
        self.assertTrue(np.all(x <= 0.5 + 1e-6))
        self.assertTrue(certify(problem, x, options=self.options).verdict)

    def test_coupled_random_games_reach_equilibrium(self):
        """Test random coupled games end certified"""
        rng = np.random.default_rng(21)
        for _ in range(5):
            base = random_game(rng, dims=[1, 1])
            drcc = make_drcc(A=np.ones((1, 2)), beta=[[1.0]], b=[20.0], samples=np.zeros((2, 1)))
            result = solve(base.with_drcc(drcc), self.options)
            self.assertEqual(result.status, EquilibriumStatus.GNE)
            self.assertLessEqual(result.residual, 1e-6)

    def test_infeasible_game(self):
        """Test a game with no feasible profile raises"""
        with self.assertRaises(InfeasibleGameError):
            solve(infeasible_game(), self.options)

    def test_repeated_solves_agree(self):
        """Test a fixed seed gives identical results"""
        first = solve(coupled_pair(), self.options)
        second = solve(coupled_pair(), self.options)
        np.testing.assert_array_equal(first.x_star.vector, second.x_star.vector)

    def test_start_points_are_keyed(self):
        """Test start points depend only on seed, node and start index"""
        solver = GnepSolver(slack_game(), self.options)
        other = GnepSolver(slack_game(), self.options)
        np.testing.assert_array_equal(solver.start_point(3, 1), other.start_point(3, 1))
        self.assertFalse(np.array_equal(solver.start_point(3, 1), solver.start_point(3, 2)))
        self.assertFalse(np.array_equal(solver.start_point(3, 1), solver.start_point(4, 1)))


class BranchAndBoundTestCase(SimpleTestCase):
    """Test cases for the best-first search over binary patterns."""

    def setUp(self):
        self.problem = slack_game(count=2, K=13)
        self.options = SolverOptions(multistart=2, warm_start=False)

    def test_search_reaches_leaves(self):
        """Test tied nodes are expanded depth first"""
        result = solve(self.problem, self.options)
        self.assertEqual(result.status, EquilibriumStatus.GNE)
        np.testing.assert_allclose(result.x_star.vector, [0.5, 0.5], atol=1e-6)
        self.assertTrue(result.nodes)
        self.assertTrue(all(len(node.q) == 13 for node in result.nodes))

    def test_exhausted_budget_is_inconclusive(self):
        """Test running out of nodes before any leaf gives Inconclusive"""
        result = solve(self.problem, self.options.replace(node_budget=4))
        self.assertEqual(result.status, EquilibriumStatus.INCONCLUSIVE)
        self.assertEqual(result.nodes, [])
        self.assertEqual(result.residual, float('inf'))


class StatusRuleTestCase(SimpleTestCase):
    """Test cases for classification when no point certifies."""

    def setUp(self):
        self.options = SolverOptions(multistart=2, warm_start=False)
        self.stuck = mock.patch.object(
            GnepSolver, 'descend', lambda self, x, q, free=None: _Descent(x=x, value=1.0, iterations=1, stationary=True),
        )
        self.rejected = mock.patch.object(
            GnepSolver, 'certify', lambda self, x, aux=None: CertificationReport(
                verdict=False, drcc_mass=0.0, transport_budget=0.0, drcc_feasible=True, local_violations=[],
            ),
        )

    def test_exhausted_enumeration_reports_non_existence(self):
        """Test NonExistence needs every feasible node searched with the full budget"""
        with self.stuck, self.rejected:
            result = solve(slack_game(), self.options)
        self.assertEqual(result.status, EquilibriumStatus.NON_EXISTENCE)
        feasible = [node for node in result.nodes if node.feasible]
        self.assertTrue(feasible)
        self.assertTrue(all(node.starts_used == 2 and node.best_value == 1.0 for node in feasible))

    def test_branch_and_bound_is_never_exhaustive(self):
        """Test branch and bound never claims NonExistence"""
        with self.stuck, self.rejected:
            result = solve(slack_game(), self.options.replace(enum_threshold=0))
        self.assertEqual(result.status, EquilibriumStatus.INCONCLUSIVE)

    def test_small_residual_without_certificate_is_inconclusive(self):
        """Test a small residual alone is not a GNE"""
        with self.rejected:
            result = solve(slack_game(), self.options)
        self.assertEqual(result.status, EquilibriumStatus.INCONCLUSIVE)


class NodeGeometryTestCase(SimpleTestCase):
    """Test cases for node membership, projection and polishing."""

    def setUp(self):
        self.solver = GnepSolver(interacting_pair(), SolverOptions(multistart=2))
        self.q = np.zeros(self.solver.system.K)

    def test_points_inside_node_are_not_moved(self):
        """Test projection returns members of X_q unchanged"""
        x = np.array([0.4, 0.4])
        self.assertTrue(self.solver.contains(x, self.q))
        np.testing.assert_array_equal(self.solver.project(x, self.q), x)

    def test_points_outside_box_are_projected(self):
        """Test projection onto the box hull"""
        self.assertFalse(self.solver.contains([1.5, 0.4], self.q))
        projected = self.solver.project([1.5, 0.4], self.q)
        np.testing.assert_allclose(projected, [1.0, 0.4], atol=1e-4)
        self.assertTrue(np.all(projected <= 1.0))

    def test_polish_reaches_exact_equilibrium(self):
        """Test best-response sweeps refine a nearby incumbent"""
        x = np.array([0.41, 0.39])
        value = self.solver.residual_at(x)[0]
        polished, report = self.solver.polish(_Descent(x=x, value=value, iterations=3, stationary=True))
        self.assertTrue(report.verdict)
        np.testing.assert_allclose(polished.x, [0.4, 0.4], atol=1e-8)
        self.assertLessEqual(polished.value, value)



class BestResponseIterationTestCase(SimpleTestCase):
    """Test cases for the Gauss-Seidel warm start."""

    def test_single_agent(self):
        """Test one agent converges in two sweeps"""
        drcc = make_drcc(A=[[1.0]], beta=[[1.0]], b=[10.0], samples=np.zeros((2, 1)))
        problem = GnepProblem([scalar_agent()], drcc)
        trace = best_response_iteration(problem, [0.9])
        self.assertTrue(trace.converged)
        self.assertEqual(trace.sweeps, 2)
        self.assertAlmostEqual(trace.profile.vector[0], 0.5, places=10)

    def test_symmetric_pair_contracts(self):
        """Test block changes shrink sweep over sweep"""
        trace = best_response_iteration(interacting_pair(), [1.0, 0.0])
        self.assertTrue(trace.converged)
        np.testing.assert_allclose(trace.profile.vector, [0.4, 0.4], atol=1e-8)
        self.assertTrue(all(later <= earlier for earlier, later in zip(trace.changes, trace.changes[1:])))

    def test_sweep_budget(self):
        """Test the sweep budget stops the iteration"""
        trace = best_response_iteration(interacting_pair(), [1.0, 0.0], SolverOptions(bri_max_sweeps=1))
        self.assertFalse(trace.converged)
        self.assertEqual(trace.sweeps, 1)


class CertifyTestCase(SimpleTestCase):
    """Test cases for certification of claimed equilibria."""

    def setUp(self):
        self.problem = interacting_pair()

    def test_equilibrium_certified(self):
        """Test the equilibrium passes every check"""
        report = certify(self.problem, [0.4, 0.4])
        self.assertTrue(report.verdict)
        self.assertTrue(report.drcc_feasible)
        self.assertLessEqual(report.residual, 1e-9)
        self.assertEqual(len(report.gaps), 2)

    def test_perturbed_point_rejected(self):
        """Test a point off the equilibrium fails on the residual"""
        report = certify(self.problem, [0.45, 0.4])
        self.assertFalse(report.verdict)
        self.assertGreater(report.residual, 1e-6)
        self.assertIn('residual', report.reason)

    def test_chance_constraint_checked_first(self):
        """Test the chance constraint is checked before the residual"""
        wide = self.problem.with_drcc(self.problem.drcc.replace(theta=1e3))
        report = certify(wide, [0.4, 0.4])
        self.assertFalse(report.verdict)
        self.assertFalse(report.drcc_feasible)
        self.assertIsNone(report.residual)
        self.assertIn('chance constraint', report.reason)

    def test_local_violation_listed(self):
        """Test local violations name the row and amount"""
        report = certify(self.problem, [1.5, 0.4])
        self.assertFalse(report.verdict)
        self.assertFalse(report.local_feasible)
        self.assertEqual(report.local_violations[0][0]['row'], 'upper[0]')
        self.assertAlmostEqual(report.local_violations[0][0]['amount'], 0.5)


class SerializerTestCase(SimpleTestCase):
    """Test cases for the solver report serializer."""

    def setUp(self):
        self.result = solve(slack_game(), SolverOptions(multistart=2))

    def test_significant_digits(self):
        """Test floats keep 9 significant digits"""
        self.assertEqual(significant(1.0 / 3.0), 0.333333333)
        self.assertEqual(significant(123456789012.0), 123456789000.0)
        self.assertIsNone(significant(float('inf')))

    def test_report_layout(self):
        """Test the report fields"""
        data = EquilibriumResultSerializer(self.result).data
        self.assertEqual(data['status'], 'GNE')
        np.testing.assert_allclose(data['x'], [0.5, 0.5], atol=1e-8)
        self.assertNotIn('wall_ms', data)
        self.assertEqual(set(data['aux']), {'tau_prime', 's_prime', 'q'})
        self.assertTrue(all(isinstance(bit, int) for bit in data['aux']['q']))
        self.assertEqual(len(data['per_node']), len(self.result.nodes))
        self.assertTrue(data['certification']['verdict'])

    def test_timings_opt_in(self):
        """Test wall_ms only appears on request"""
        data = EquilibriumResultSerializer(self.result, context={'timings': True}).data
        self.assertIn('wall_ms', data)


class CommandTestCase(SimpleTestCase):
    """Test cases for the solve and check_point commands."""

    def setUp(self):
        self.workdir = Path(tempfile.mkdtemp())
        self.addCleanup(shutil.rmtree, self.workdir)
        self.problem_path = self.workdir / 'game.json'
        write_problem(interacting_pair(), self.problem_path)
        self.out = self.workdir / 'report.json'

    def write_point(self, x):
        path = self.workdir / 'point.json'
        path.write_text(json.dumps({'x': x}))
        return str(path)

    def assertExitCode(self, code, *args, **options):
        with self.assertRaises(CommandError) as caught:
            call_command(*args, stdout=StringIO(), stderr=StringIO(), **options)
        self.assertEqual(caught.exception.returncode, code)
        return caught.exception

    def test_solve_writes_report(self):
        """Test solve writes the report to --out"""
        call_command('solve', problem=str(self.problem_path), out=str(self.out), max_starts=2, quiet=True)
        data = json.loads(self.out.read_text())
        self.assertEqual(data['status'], 'GNE')
        np.testing.assert_allclose(data['x'], [0.4, 0.4], atol=1e-8)

    def test_solve_to_stdout_with_timings(self):
        """Test solve prints to stdout with timings"""
        stdout = StringIO()
        call_command('solve', problem=str(self.problem_path), timings=True, quiet=True, stdout=stdout)
        self.assertIn('wall_ms', json.loads(stdout.getvalue()))

    def test_quiet_is_scoped_to_one_command(self):
        """Test --quiet restores the logger levels afterwards"""
        logger = logging.getLogger('equilibrium')
        before = logger.level
        call_command('solve', problem=str(self.problem_path), out=str(self.out), max_starts=2, quiet=True)
        self.assertEqual(logger.level, before)

    def test_dump_system(self):
        """Test --dump-system writes the deterministic system"""
        dump = self.workdir / 'system.txt'
        call_command('solve', problem=str(self.problem_path), dump_system=str(dump), out=str(self.out), quiet=True)
        self.assertTrue(dump.read_text())

    def test_usage_errors_exit_one(self):
        """Test input errors exit with code 1"""
        self.assertExitCode(1, 'solve', problem=str(self.workdir / 'missing.json'))
        self.assertExitCode(1, 'solve', '--problem', str(self.problem_path), '--bogus')
        self.assertExitCode(1, 'check_point', problem=str(self.problem_path), point=self.write_point([0.4]))

    def test_check_point_verdicts(self):
        """Test check_point exits 0 on a certified point and 2 otherwise"""
        call_command('check_point', problem=str(self.problem_path), point=self.write_point([0.4, 0.4]),
                     out=str(self.out), quiet=True)
        self.assertTrue(json.loads(self.out.read_text())['verdict'])
        self.assertExitCode(
            2, 'check_point', problem=str(self.problem_path), point=self.write_point([0.45, 0.4]),
            out=str(self.out), quiet=True,
        )
        self.assertFalse(json.loads(self.out.read_text())['verdict'])

    def test_status_exit_codes(self):
        """Test Inconclusive exits 3 and NonExistence exits 2"""
        result = solve(interacting_pair(), SolverOptions(multistart=2))
        for status, code in ((EquilibriumStatus.INCONCLUSIVE, 3), (EquilibriumStatus.NON_EXISTENCE, 2)):
            patched = dataclasses.replace(result, status=status)
            with mock.patch.object(GnepSolver, 'solve', return_value=patched):
                self.assertExitCode(code, 'solve', problem=str(self.problem_path), out=str(self.out), quiet=True)
            self.assertEqual(json.loads(self.out.read_text())['status'], status.value)

    def test_infeasible_game_exits_two(self):
        """Test a game without feasible profiles exits 2"""
        write_problem(infeasible_game(), self.problem_path)
        error = self.assertExitCode(2, 'solve', problem=str(self.problem_path), max_starts=2, quiet=True)
        self.assertIn('no binary pattern', str(error))
