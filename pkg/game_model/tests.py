"""
Game Model App - Tests
Test cases for agents, strategy profiles, objectives and problem files.
"""

import json
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from drcc_gnep.exceptions import (
    DimensionError, NotPositiveDefiniteError, ProblemFormatError, ProblemValidationError,
)
from drcc_gnep.testing import make_drcc, random_game, scalar_agent, slack_game

from .loaders import dump_problem, load_point, load_problem, parse_problem
from .problem import AgentSpec, GnepProblem, StrategyProfile, box_hull


class AgentSpecTestCase(SimpleTestCase):
    """Test cases for agent validation."""

    def test_rejects_indefinite_curvature(self):
        """Test indefinite curvature is rejected"""
        with self.assertRaises(NotPositiveDefiniteError):
            AgentSpec(Q=[[1.0, 2.0], [2.0, 1.0]], p0=[0, 0], P=[], r0=0, rho=[], H=[], g=[],
                      lower=[0, 0], upper=[1, 1])

    def test_rejects_asymmetric_curvature(self):
        """Test asymmetric curvature is rejected"""
        with self.assertRaises(NotPositiveDefiniteError):
            AgentSpec(Q=[[2.0, 1.0], [0.0, 2.0]], p0=[0, 0], P=[], r0=0, rho=[], H=[], g=[],
                      lower=[0, 0], upper=[1, 1])

    def test_rejects_infinite_box(self):
        """Test an unbounded box is rejected"""
        with self.assertRaises(ProblemValidationError):
            scalar_agent(upper=np.inf)

    def test_rejects_empty_local_set(self):
        """Test an empty local set is rejected"""
        with self.assertRaises(ProblemValidationError):
            scalar_agent(H=[[1.0]], g=[-1.0])

    def test_local_rows_fold_in_box(self):
        """Test local rows fold in box"""
        agent = scalar_agent(H=[[1.0]], g=[0.5], lower=-1.0, upper=2.0)
        H, g = agent.local_rows()
        np.testing.assert_array_equal(H, [[1.0], [1.0], [-1.0]])
        np.testing.assert_array_equal(g, [0.5, 2.0, 1.0])


class StrategyProfileTestCase(SimpleTestCase):
    """Test cases for strategy profiles."""

    def test_rivals_keep_agent_order(self):
        """Test rivals keep agent order"""
        x = StrategyProfile.from_blocks([[1.0], [2.0, 3.0], [4.0]])
        np.testing.assert_array_equal(x.rivals(1), [1.0, 4.0])
        np.testing.assert_array_equal(x.block(1), [2.0, 3.0])

    def test_with_block_copies(self):
        """Test replacing one block leaves the original profile alone"""
        x = StrategyProfile.from_blocks([[1.0], [2.0, 3.0]])
        y = x.with_block(1, [5.0, 6.0])
        np.testing.assert_array_equal(y.vector, [1.0, 5.0, 6.0])
        np.testing.assert_array_equal(x.vector, [1.0, 2.0, 3.0])
        self.assertEqual(y.dims, x.dims)

    def test_length_mismatch(self):
        """Test length mismatch"""
        with self.assertRaises(DimensionError):
            StrategyProfile([1.0, 2.0], [1, 2])


class ObjectiveTestCase(SimpleTestCase):
    """Test cases for objectives and gradients."""

    def setUp(self):
        self.problem = GnepProblem(
            [scalar_agent(Q=2.0, p0=-1.0)],
            make_drcc(A=[[1.0]], beta=[[1.0]], b=[10.0], samples=[[0.0]]),
        )
        self.rng = np.random.default_rng(7)

    def test_scalar_minimum_value(self):
        """Test scalar minimum value"""
        self.assertAlmostEqual(self.problem.eval_objective(0, [0.5]), -0.25)

    def test_zero_strategy_gives_constant(self):
        """Test zero strategy gives constant"""
        problem = GnepProblem(
            [scalar_agent(Q=3.0, p0=0.0, rival_dim=1, r0=1.5), scalar_agent(rival_dim=1)],
            make_drcc(A=[[1.0, 1.0]], beta=[[1.0]], b=[10.0], samples=[[0.0]]),
        )
        self.assertAlmostEqual(problem.eval_objective(0, [0.0, 0.0]), 1.5)

    def test_gradient_vanishes_at_stationary_point(self):
        """Test gradient vanishes at stationary point"""
        np.testing.assert_allclose(self.problem.grad_objective(0, [0.5]), [0.0], atol=1e-15)

    def test_gradient_matches_finite_differences(self):
        """Test gradient matches finite differences"""
        for _ in range(100):
            problem = random_game(self.rng)
            x = self.rng.uniform(-1, 1, problem.n)
            for i, columns in enumerate(problem.layout):
                gradient = problem.grad_objective(i, x)
                for local, column in enumerate(range(columns.start, columns.stop)):
                    step = 1e-5
                    up, down = x.copy(), x.copy()
                    up[column] += step
                    down[column] -= step
                    fd = (problem.eval_objective(i, up) - problem.eval_objective(i, down)) / (2 * step)
                    self.assertLessEqual(abs(fd - gradient[local]), 1e-6 * max(1.0, abs(gradient[local])))

    def test_second_difference_is_constant(self):
        """Test second difference is constant"""
        problem = random_game(self.rng)
        x = self.rng.uniform(-1, 1, problem.n)
        direction = np.zeros(problem.n)
        direction[problem.layout[0]] = self.rng.normal(size=problem.dims[0])
        values = [problem.eval_objective(0, x + t * direction) for t in (-0.2, 0.0, 0.2, 0.4)]
        first = values[0] - 2 * values[1] + values[2]
        second = values[1] - 2 * values[2] + values[3]
        self.assertAlmostEqual(first, second, places=10)

    def test_scaling_scales_objective(self):
        """Test scaling scales objective"""
        problem = random_game(self.rng)
        x = self.rng.uniform(-1, 1, problem.n)
        scaled = problem.scaled(3.0)
        for i in range(problem.num_agents):
            self.assertAlmostEqual(scaled.eval_objective(i, x), 3.0 * problem.eval_objective(i, x), places=9)

    def test_dimension_mismatch(self):
        """Test dimension mismatch"""
        with self.assertRaises(DimensionError):
            self.problem.eval_objective(0, [0.1, 0.2])


class LocalFeasibilityTestCase(SimpleTestCase):
    """Test cases for local feasibility."""

    def test_inside_box(self):
        """Test inside box"""
        problem = GnepProblem([scalar_agent()], make_drcc([[1.0]], [[1.0]], [10.0], [[0.0]]))
        self.assertTrue(problem.local_feasible(0, [0.5]).feasible)

    def test_violated_row_reported(self):
        """Test violated row reported"""
        problem = GnepProblem([scalar_agent(H=[[1.0]], g=[0.0])], make_drcc([[1.0]], [[1.0]], [10.0], [[0.0]]))
        report = problem.local_feasible(0, [0.1], tol=1e-9)
        self.assertFalse(report.feasible)
        self.assertEqual(report.violations[0]['row'], 'H[0]')
        self.assertAlmostEqual(report.max_violation, 0.1)

    def test_box_hull_concatenates(self):
        """Test box hull concatenates"""
        problem = slack_game(count=2)
        lower, upper = box_hull(problem)
        np.testing.assert_array_equal(lower, [0.0, 0.0])
        np.testing.assert_array_equal(upper, [1.0, 1.0])

    def test_a_columns_must_match(self):
        """Test the columns of A must match the profile"""
        with self.assertRaises(DimensionError):
            GnepProblem([scalar_agent()], make_drcc([[1.0, 1.0]], [[1.0]], [10.0], [[0.0]]))


def _document():
    return {
        'name': 'pair',
        'agents': [
            {'Q': [[2.0]], 'p0': [-1.0], 'P': [[0.5]], 'rho': [0.0], 'lower': [0.0], 'upper': [1.0]},
            {'Q': [[2.0]], 'p0': [-1.0], 'P': [[0.5]], 'rho': [0.0], 'lower': [0.0], 'upper': [1.0]},
        ],
        'drcc': {'A': [[1.0, 1.0]], 'beta': [[1.0]], 'b': [5.0], 'epsilon': 0.5, 'theta': 0.1,
                 'norm': 2, 'samples': [[0.0], [1.0]]},
    }


class LoaderTestCase(SimpleTestCase):
    """Test cases for problem and point files."""

    def setUp(self):
        self.directory = tempfile.TemporaryDirectory()
        self.path = Path(self.directory.name)

    def tearDown(self):
        self.directory.cleanup()

    def test_parses_document(self):
        """Test parsing a problem document"""
        problem = parse_problem(json.dumps(_document()))
        self.assertEqual(problem.num_agents, 2)
        self.assertEqual(problem.drcc.K, 2)

    def test_syntax_error_reports_line(self):
        """Test syntax error reports line"""
        text = '{\n  "agents": [\n  oops\n]}'
        with self.assertRaises(ProblemFormatError) as context:
            parse_problem(text, path='game.json')
        self.assertEqual(context.exception.line, 3)
        self.assertIn('line 3', str(context.exception))

    def test_schema_error_reports_field(self):
        """Test schema error reports field"""
        document = _document()
        document['drcc']['epsilon'] = 1.5
        with self.assertRaises(ProblemFormatError) as context:
            parse_problem(json.dumps(document))
        self.assertEqual(context.exception.field, 'drcc.epsilon')

    def test_indefinite_agent_reports_index(self):
        """Test indefinite agent reports index"""
        document = _document()
        document['agents'][1]['Q'] = [[-1.0]]
        with self.assertRaises(ProblemFormatError) as context:
            parse_problem(json.dumps(document))
        self.assertTrue(context.exception.field.startswith('agents[1]'))

    def test_missing_samples(self):
        """Test missing samples"""
        document = _document()
        del document['drcc']['samples']
        with self.assertRaises(ProblemFormatError):
            parse_problem(json.dumps(document))

    def test_separate_sample_file_overrides(self):
        """Test separate sample file overrides"""
        game = self.path / 'game.json'
        game.write_text(json.dumps(_document()))
        samples = self.path / 'xi.txt'
        samples.write_text('# demand\n0.5\n1.5\n2.5\n')
        problem = load_problem(game, samples)
        self.assertEqual(problem.drcc.K, 3)

    def test_missing_file(self):
        """Test missing file"""
        with self.assertRaises(ProblemFormatError):
            load_problem(self.path / 'absent.json')

    def test_dump_reloads_identically(self):
        """Test dump reloads identically"""
        problem = parse_problem(json.dumps(_document()))
        again = parse_problem(json.dumps(dump_problem(problem)))
        x = [0.3, 0.7]
        for i in range(2):
            self.assertEqual(problem.eval_objective(i, x), again.eval_objective(i, x))
        np.testing.assert_array_equal(problem.drcc.samples.samples, again.drcc.samples.samples)

    def test_point_forms(self):
        """Test point forms"""
        problem = parse_problem(json.dumps(_document()))
        bare = self.path / 'bare.json'
        bare.write_text('[0.1, 0.2]')
        wrapped = self.path / 'wrapped.json'
        wrapped.write_text('{"x": [0.1, 0.2]}')
        np.testing.assert_array_equal(load_point(bare, problem).vector, load_point(wrapped, problem).vector)

    def test_point_dimension_mismatch(self):
        """Test point dimension mismatch"""
        problem = parse_problem(json.dumps(_document()))
        point = self.path / 'short.json'
        point.write_text('[0.1]')
        with self.assertRaises(ProblemFormatError) as context:
            load_point(point, problem)
        self.assertEqual(context.exception.field, 'x')
