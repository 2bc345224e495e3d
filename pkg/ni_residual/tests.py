"""
NI Residual App - Tests
Test cases for the QP engine, best responses and the residual.
"""

import itertools

import numpy as np
from django.test import SimpleTestCase

from drcc_gnep.exceptions import DimensionError, NotPositiveDefiniteError, QPInfeasibleError
from drcc_gnep.testing import random_game, slack_game
from reformulation.bigm import AuxiliaryVars, build_system, widest_auxiliary

from .qp import qp_solve
from .residual import ResidualEvaluator, problem_class


def active_set_oracle(Q, c, G, h):
    """Brute force over active sets; the KKT point of a strictly convex QP is unique."""
    n = Q.shape[0]
    for size in range(0, min(n, G.shape[0]) + 1):
        for active in itertools.combinations(range(G.shape[0]), size):
            active = list(active)
            G_s = G[active]
            kkt = np.block([[Q, G_s.T], [G_s, np.zeros((size, size))]])
            if abs(np.linalg.det(kkt)) < 1e-10:
                continue
            solution = np.linalg.solve(kkt, np.concatenate([-c, h[active]]))
            y, z = solution[:n], solution[n:]
            if np.all(G @ y <= h + 1e-9) and np.all(z >= -1e-9):
                return y
    return None


class QPSolveTestCase(SimpleTestCase):
    """Test cases for the dense QP engine."""

    def test_interior_minimizer(self):
        """Test interior minimizer"""
        solution = qp_solve([[2.0]], [-1.0], box=([0.0], [1.0]))
        self.assertAlmostEqual(solution.x[0], 0.5, places=10)
        self.assertEqual(solution.upper_multipliers[0], 0.0)

    def test_upper_bound_active(self):
        """Test upper bound active"""
        solution = qp_solve([[2.0]], [-1.0], box=([0.0], [0.2]))
        self.assertAlmostEqual(solution.x[0], 0.2, places=10)
        self.assertAlmostEqual(solution.upper_multipliers[0], 0.6, places=8)
        self.assertAlmostEqual(solution.lower_multipliers[0], 0.0, places=10)

    def test_unconstrained(self):
        """Test unconstrained"""
        Q = np.array([[4.0, 1.0], [1.0, 3.0]])
        c = np.array([1.0, -2.0])
        solution = qp_solve(Q, c)
        np.testing.assert_allclose(solution.x, np.linalg.solve(Q, -c), atol=1e-12)

    def test_matches_active_set_enumeration(self):
        """Test matches active set enumeration"""
        rng = np.random.default_rng(11)
        checked = 0
        for _ in range(200):
            n = int(rng.integers(2, 5))
            m = int(rng.integers(1, 7))
            root = rng.normal(size=(n, n))
            Q = root @ root.T + 0.5 * np.eye(n)
            c = 3.0 * rng.normal(size=n)
            G = rng.normal(size=(m, n))
            h = G @ rng.normal(size=n) + rng.uniform(0.0, 1.0, size=m)
            expected = active_set_oracle(Q, c, G, h)
            if expected is None:
                continue
            solution = qp_solve(Q, c, G, h)
            np.testing.assert_allclose(solution.x, expected, atol=1e-7)
            self.assertLessEqual(solution.kkt_residual, 1e-8)
            checked += 1
        self.assertGreater(checked, 150)

    def test_infeasible_rows_carry_farkas_certificate(self):
        """Test infeasible rows carry a Farkas certificate"""
        G = np.array([[1.0, 0.0], [-1.0, 0.0]])
        h = np.array([-1.0, -1.0])
        with self.assertRaises(QPInfeasibleError) as caught:
            qp_solve(np.eye(2), np.zeros(2), G, h)
        certificate = caught.exception.certificate
        self.assertIsNotNone(certificate)
        self.assertTrue(np.all(certificate >= 0.0))
        np.testing.assert_allclose(certificate @ G, 0.0, atol=1e-8)
        self.assertLess(certificate @ h, 0.0)

    def test_infeasible_rows_inside_box(self):
        """Test diverging iterates end in an infeasibility verdict"""
        G = np.array([[1.0, 1.0, 0.0], [-1.0, -1.0, 0.0], [0.0, 1.0, 1.0]])
        h = np.array([-1.0, -1.0, 2.0])
        with self.assertRaises(QPInfeasibleError) as caught:
            qp_solve(np.diag([1.0, 2.0, 3.0]), [1.0, -1.0, 0.5], G, h, box=(-5.0, 5.0))
        self.assertAlmostEqual(caught.exception.max_violation, 1.0, places=6)
        certificate = caught.exception.certificate
        self.assertIsNotNone(certificate)
        self.assertTrue(np.all(certificate >= 0.0))

    def test_empty_interval(self):
        """Test empty interval"""
        with self.assertRaises(QPInfeasibleError) as caught:
            qp_solve([[1.0]], [0.0], [[1.0], [-1.0]], [0.0, -1.0])
        self.assertAlmostEqual(caught.exception.max_violation, 0.5)

    def test_not_positive_definite(self):
        """Test not positive definite"""
        with self.assertRaises(NotPositiveDefiniteError):
            qp_solve([[1.0, 0.0], [0.0, -1.0]], [0.0, 0.0])
        with self.assertRaises(NotPositiveDefiniteError):
            qp_solve([[1.0, 2.0], [0.0, 1.0]], [0.0, 0.0])

    def test_dimension_mismatch(self):
        """Test dimension mismatch"""
        with self.assertRaises(DimensionError):
            qp_solve(np.eye(2), [0.0, 0.0, 0.0])


class ResidualEvaluatorTestCase(SimpleTestCase):
    """Test cases for best responses and the residual."""

    def setUp(self):
        self.problem = slack_game(count=2, K=3)
        self.system = build_system(self.problem)
        self.evaluator = ResidualEvaluator(self.problem, self.system, workers=1)

    def aux_at(self, x, system=None):
        return widest_auxiliary(x, system or self.system).aux

    def test_residual_vanishes_at_equilibrium(self):
        """Test residual vanishes at equilibrium"""
        x = np.array([0.5, 0.5])
        report = self.evaluator.residual(x, self.aux_at(x))
        self.assertAlmostEqual(report.value, 0.0, places=9)
        for y in report.best_responses:
            self.assertAlmostEqual(y[0], 0.5, places=9)

    def test_residual_is_sum_of_squared_offsets(self):
        """Test residual is sum of squared offsets"""
        x = np.array([0.2, 0.9])
        report = self.evaluator.residual(x, self.aux_at(x))
        self.assertAlmostEqual(report.value, 0.25, places=9)
        self.assertAlmostEqual(report.gaps[0], 0.09, places=9)
        self.assertAlmostEqual(report.gaps[1], 0.16, places=9)

    def test_slack_shared_rows_match_local_problem(self):
        """Test slack shared rows match local problem"""
        x = np.array([0.3, 0.7])
        response = self.evaluator.best_response(0, x, self.aux_at(x))
        local = qp_solve([[2.0]], [-1.0], box=([0.0], [1.0]))
        np.testing.assert_allclose(response.y, local.x, atol=1e-10)
        np.testing.assert_allclose(response.duals.lambda_s, 0.0, atol=1e-10)

    def test_workers_do_not_change_result(self):
        """Test workers do not change result"""
        x = np.array([0.1, 0.4])
        aux = self.aux_at(x)
        parallel = ResidualEvaluator(self.problem, self.system, workers=4)
        self.assertAlmostEqual(
            parallel.residual(x, aux).value, self.evaluator.residual(x, aux).value, places=12,
        )

    def test_overtight_auxiliary_makes_best_response_infeasible(self):
        """Test overtight auxiliary makes best response infeasible"""
        x = np.array([0.5, 0.5])
        aux = self.aux_at(x)
        crushed = AuxiliaryVars(tau_prime=aux.tau_prime + 1e6, s_prime=aux.s_prime, q=aux.q)
        with self.assertRaises(QPInfeasibleError) as caught:
            self.evaluator.best_response(1, x, crushed)
        self.assertEqual(caught.exception.agent, 1)

    def test_problem_class(self):
        """Test problem class"""
        self.assertEqual(problem_class(self.problem), 'MILP')
        self.assertEqual(problem_class(random_game(np.random.default_rng(0), dims=[1, 1])), 'MIQP')

    def test_wrong_multiplier_count(self):
        """Test wrong multiplier count"""
        x = np.array([0.5, 0.5])
        with self.assertRaises(DimensionError):
            self.evaluator.dual_objective(0, np.zeros(1), x, self.aux_at(x))


class RandomGameResidualTestCase(SimpleTestCase):
    """Test cases for the residual on random games."""

    def setUp(self):
        self.rng = np.random.default_rng(5)

    def feasible_instances(self, count):
        produced = 0
        while produced < count:
            problem = random_game(self.rng)
            system = build_system(problem)
            x = self.rng.uniform(-1.0, 1.0, size=problem.n)
            widest = widest_auxiliary(x, system)
            if not widest.feasible:
                continue
            produced += 1
            yield problem, system, x, widest.aux

    def test_residual_nonnegative(self):
        """Test residual nonnegative"""
        for problem, system, x, aux in self.feasible_instances(100):
            value = ResidualEvaluator(problem, system, workers=1).residual(x, aux).value
            self.assertGreaterEqual(value, -1e-9)

    def test_strong_and_weak_duality(self):
        """Test strong and weak duality"""
        for problem, system, x, aux in self.feasible_instances(40):
            evaluator = ResidualEvaluator(problem, system, workers=1)
            for i in range(problem.num_agents):
                response = evaluator.best_response(i, x, aux)
                scale = 1.0 + abs(response.value)
                self.assertAlmostEqual(
                    evaluator.dual_objective(i, response.duals, x, aux) / scale, response.value / scale, places=6,
                )
                rows = evaluator.stacks[i].H_star.shape[0]
                trial = self.rng.uniform(0.0, 2.0, size=rows)
                self.assertLessEqual(evaluator.dual_objective(i, trial, x, aux), response.value + 1e-9)

    def test_minlp_objective_equals_residual_at_optimal_duals(self):
        """Test the single-level objective equals residual at optimal duals"""
        for problem, system, x, aux in self.feasible_instances(40):
            evaluator = ResidualEvaluator(problem, system, workers=1)
            report = evaluator.residual(x, aux)
            value = evaluator.minlp_objective(x, report.duals, aux)
            self.assertAlmostEqual(value / (1.0 + abs(report.value)), report.value / (1.0 + abs(report.value)), places=6)

    def test_minlp_gradient_matches_finite_differences(self):
        """Test the single-level gradient matches finite differences"""
        step = 1e-6
        for problem, system, x, aux in self.feasible_instances(20):
            evaluator = ResidualEvaluator(problem, system, workers=1)
            lambdas = [self.rng.uniform(0.0, 1.0, size=stack.H_star.shape[0]) for stack in evaluator.stacks]
            gradient = evaluator.minlp_gradient(x, lambdas, aux)

            def objective(x_=x, lambdas_=lambdas, aux_=aux):
                return evaluator.minlp_objective(x_, lambdas_, aux_)

            numeric_x = np.array([
                (objective(x_=x + step * e) - objective(x_=x - step * e)) / (2 * step) for e in np.eye(x.size)
            ])
            self.assertLessEqual(
                np.abs(numeric_x - gradient.x).max(), 1e-5 * (1.0 + np.abs(gradient.x).max()),
            )

            for i, lam in enumerate(lambdas):
                numeric = []
                for e in np.eye(lam.size):
                    up = [l + step * e if j == i else l for j, l in enumerate(lambdas)]
                    down = [l - step * e if j == i else l for j, l in enumerate(lambdas)]
                    numeric.append((objective(lambdas_=up) - objective(lambdas_=down)) / (2 * step))
                self.assertLessEqual(
                    np.abs(np.array(numeric) - gradient.lambdas[i]).max(),
                    1e-5 * (1.0 + np.abs(gradient.lambdas[i]).max()),
                )

            def shifted(tau=0.0, s=None):
                return AuxiliaryVars(
                    tau_prime=aux.tau_prime + tau,
                    s_prime=aux.s_prime + (0.0 if s is None else s), q=aux.q,
                )

            numeric_tau = (objective(aux_=shifted(tau=step)) - objective(aux_=shifted(tau=-step))) / (2 * step)
            self.assertAlmostEqual(numeric_tau, gradient.tau_prime, delta=1e-5 * (1.0 + abs(gradient.tau_prime)))
            for k, e in enumerate(np.eye(aux.K)):
                numeric_s = (objective(aux_=shifted(s=step * e)) - objective(aux_=shifted(s=-step * e))) / (2 * step)
                self.assertAlmostEqual(
                    numeric_s, gradient.s_prime[k], delta=1e-5 * (1.0 + abs(gradient.s_prime[k])),
                )
