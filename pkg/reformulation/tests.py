"""
Reformulation App - Tests
Test cases for the big-M system, mixed-integer feasibility and the relaxation.
"""

import io

import numpy as np
from django.test import SimpleTestCase, override_settings
from django.conf import settings

from drcc_gnep.exceptions import SystemTooLargeError
from drcc_gnep.testing import make_drcc, random_game, scalar_agent
from game_model.problem import GnepProblem
from wasserstein_drcc.distances import distance_mass, drcc_feasible, dual_certificate

from .bigm import (
    assemble, build_system, check_constraints, compute_big_m, dump_system, enumeration_order,
    mi_feasible, widest_auxiliary,
)
from .relaxation import relax_canonical, vertex_diagnostic


def _three_station_game(theta=0.05, samples=((1.0,), (2.0,), (3.0,))):
    agents = [scalar_agent(Q=2.0, p0=-1.0, rival_dim=2) for _ in range(3)]
    drcc = make_drcc(A=[[1.0, 1.0, 1.0]], beta=[[-1.0]], b=[250.0], samples=samples, epsilon=0.5, theta=theta)
    return GnepProblem(agents, drcc)


class AssembleTestCase(SimpleTestCase):
    """Test cases for system assembly."""

    def test_kronecker_blocks_single_row(self):
        """Test Kronecker blocks for a single row"""
        problem = _three_station_game()
        system = assemble(problem.drcc, problem.layout)
        np.testing.assert_array_equal(system.beta_bar, -np.eye(3))
        np.testing.assert_array_equal(system.b_bar, [250.0, 250.0, 250.0])
        np.testing.assert_array_equal(system.sample_rhs, system.beta_bar @ system.xi_stacked + system.b_bar)
        self.assertEqual(system.beta_dual_norm, 1.0)

    def test_single_sample_keeps_rows(self):
        """Test single sample keeps rows"""
        drcc = make_drcc(A=[[1.0, 2.0]], beta=[[1.0]], b=[3.0], samples=[[0.5]])
        problem = GnepProblem([scalar_agent(rival_dim=1), scalar_agent(rival_dim=1)], drcc)
        system = assemble(problem.drcc, problem.layout)
        np.testing.assert_array_equal(system.A_bar, drcc.A)
        np.testing.assert_array_equal(system.A_bar_blocks[1], [[2.0]])

    def test_e_bar_structure(self):
        """Test the structure of E bar"""
        drcc = make_drcc(A=[[1.0], [1.0]], beta=[[1.0], [1.0]], b=[1.0, 1.0], samples=[[0.0], [1.0]])
        system = assemble(drcc, [slice(0, 1)])
        np.testing.assert_array_equal(system.E_bar, [[1, 0], [1, 0], [0, 1], [0, 1]])

    def test_unequal_rows_are_equilibrated(self):
        """Test unequal rows are equilibrated"""
        drcc = make_drcc(A=[[1.0], [1.0]], beta=[[1.0], [2.0]], b=[1.0, 1.0], samples=[[0.0]])
        with self.assertLogs('reformulation.bigm', level='WARNING'):
            system = assemble(drcc, [slice(0, 1)])
        self.assertEqual(system.beta_dual_norm, 2.0)
        np.testing.assert_allclose(system.row_scale, [2.0, 1.0])

    @override_settings(GNEP_SOLVER={**settings.GNEP_SOLVER, 'MAX_MK': 2})
    def test_size_guard(self):
        """Test size guard"""
        problem = _three_station_game()
        with self.assertRaises(SystemTooLargeError):
            assemble(problem.drcc, problem.layout)


class BigMTestCase(SimpleTestCase):
    """Test cases for big-M sizing."""

    def test_degenerate_box(self):
        """Test degenerate box"""
        drcc = make_drcc(A=[[1.0]], beta=[[1.0]], b=[2.0], samples=[[1.0], [3.0]])
        system = assemble(drcc, [slice(0, 1)])
        # slacks at x = 0.5 are 2.5 and 4.5
        M = compute_big_m(system, ([0.5], [0.5]))
        self.assertAlmostEqual(M, 1.1 * 4.5)

    def test_m_positive_when_every_row_is_violated(self):
        """Test M is positive when every row is violated"""
        drcc = make_drcc(A=[[1.0]], beta=[[1.0]], b=[-10.0], samples=[[0.0]])
        system = assemble(drcc, [slice(0, 1)])
        self.assertGreater(compute_big_m(system, ([0.0], [1.0])), 0.0)


class EquivalenceTestCase(SimpleTestCase):
    """The big-M system accepts exactly the profiles that satisfy the chance constraint."""

    def test_random_instances(self):
        """Test random instances"""
        rng = np.random.default_rng(1234)
        for _ in range(200):
            problem = random_game(rng, K=int(rng.integers(1, 7)), m=int(rng.integers(1, 4)))
            system = build_system(problem)
            doubled = system.with_big_m(2.0 * system.M)
            lower, upper = problem.box_hull()
            for _ in range(50):
                x = rng.uniform(lower, upper)
                expected = drcc_feasible(x, problem.drcc)
                self.assertEqual(mi_feasible(x, system, mode='enumerate')[0], expected)
                self.assertEqual(mi_feasible(x, system, mode='certificate')[0], expected)
                self.assertEqual(mi_feasible(x, doubled, mode='enumerate')[0], expected)

    def test_witness_satisfies_rows(self):
        """Test witness satisfies rows"""
        rng = np.random.default_rng(99)
        checked = 0
        for _ in range(500):
            if checked == 20:
                break
            problem = random_game(rng, K=4, m=2)
            system = build_system(problem)
            x = rng.uniform(*problem.box_hull())
            verdict, witness = mi_feasible(x, system, mode='enumerate')
            if not verdict:
                continue
            violations = check_constraints(x, witness, system)
            self.assertLessEqual(max(violations.values()), 1e-9 * max(1.0, system.beta_dual_norm))
            self.assertFalse(np.all(witness.q == 1.0))
            # any larger M keeps the witness valid
            larger = check_constraints(x, witness, system.with_big_m(3.0 * system.M))
            self.assertLessEqual(max(larger.values()), 1e-9 * max(1.0, system.beta_dual_norm))
            checked += 1
        self.assertEqual(checked, 20)

    def test_certificate_witness_scales_dual_certificate(self):
        """Test certificate witness scales dual certificate"""
        problem = _three_station_game(theta=0.05)
        system = build_system(problem)
        x = [0.2, 0.3, 0.4]
        verdict, witness = mi_feasible(x, system, mode='certificate')
        certificate = dual_certificate(x, problem.drcc)
        self.assertTrue(verdict)
        self.assertAlmostEqual(witness.tau_prime, system.beta_dual_norm * certificate.tau)
        np.testing.assert_allclose(witness.s_prime, system.beta_dual_norm * certificate.s)

    def test_huge_radius_is_infeasible(self):
        """Test huge radius is infeasible"""
        problem = _three_station_game(theta=1e6)
        system = build_system(problem)
        self.assertFalse(mi_feasible([0.5, 0.5, 0.5], system, mode='enumerate')[0])
        self.assertFalse(mi_feasible([0.5, 0.5, 0.5], system, mode='certificate')[0])

    @override_settings(GNEP_SOLVER={**settings.GNEP_SOLVER, 'ENUM_THRESHOLD': 2})
    def test_enumerate_refuses_large_k(self):
        """Test enumeration refuses large K"""
        system = build_system(_three_station_game())
        with self.assertRaises(SystemTooLargeError):
            mi_feasible([0.5, 0.5, 0.5], system, mode='enumerate')

    def test_enumeration_order(self):
        """Test enumeration order"""
        grid = enumeration_order(3)
        self.assertEqual(grid.shape, (8, 3))
        np.testing.assert_array_equal(grid[0], [0, 0, 0])
        self.assertTrue(np.all(np.diff(grid.sum(axis=1)) >= 0))


class WidestAuxiliaryTestCase(SimpleTestCase):
    """Test cases for the slack-maximizing auxiliary decision."""

    def test_margin_sign_matches_feasibility(self):
        """Test margin sign matches feasibility"""
        rng = np.random.default_rng(5)
        for _ in range(100):
            problem = random_game(rng, K=int(rng.integers(1, 6)), m=1)
            system = build_system(problem)
            x = rng.uniform(*problem.box_hull())
            widest = widest_auxiliary(x, system)
            gap = distance_mass(x, problem.drcc) - problem.drcc.transport_budget
            if abs(gap) > 1e-7:
                self.assertEqual(widest.feasible, gap > 0)
            if widest.margin >= 1e-9:
                violations = check_constraints(x, widest.aux, system)
                self.assertLessEqual(max(violations.values()), 1e-8 * max(1.0, system.M))

    def test_single_row_margin_is_exact(self):
        """Test single row margin is exact"""
        # one sample, eps*K = 0.5: h1 needs 0.5*tau' - s' >= theta*N, so the
        # widest tau' is 2*theta and the margin equals the slack minus 2*theta
        drcc = make_drcc(A=[[1.0]], beta=[[1.0]], b=[5.0], samples=[[0.0]], epsilon=0.5, theta=0.5)
        problem = GnepProblem([scalar_agent()], drcc)
        system = build_system(problem)
        widest = widest_auxiliary([1.0], system)
        self.assertAlmostEqual(widest.margin, 4.0 - 1.0)
        self.assertAlmostEqual(widest.aux.tau_prime, 1.0)


class RelaxationTestCase(SimpleTestCase):
    """Test cases for the continuous relaxation."""

    def setUp(self):
        drcc = make_drcc(A=[[1.0]], beta=[[1.0]], b=[2.0], samples=[[0.5]], epsilon=0.5, theta=0.1)
        self.problem = GnepProblem([scalar_agent()], drcc)
        self.system = build_system(self.problem)

    def test_single_sample_dimension(self):
        """Test single sample dimension"""
        relaxation = relax_canonical(self.system)
        self.assertEqual(relaxation.aux_dim, 3)
        self.assertTrue(relaxation.relaxed)

    def test_contains_binary_witness(self):
        """Test contains binary witness"""
        relaxation = relax_canonical(self.system)
        verdict, witness = mi_feasible([0.3], self.system, mode='enumerate')
        self.assertTrue(verdict)
        self.assertTrue(relaxation.contains([0.3], witness))

    def test_fixed_q_rows_drop_bounds(self):
        """Test fixed q rows drop bounds"""
        relaxation = relax_canonical(self.system)
        G, h = relaxation.rows_with_fixed_q([0.0])
        self.assertEqual(G.shape[1], 1 + 1 + 1)
        self.assertEqual(G.shape[0], len(relaxation.row_labels) - 2)
        G_free, _ = relaxation.rows_for_node([0.0], free=[True])
        self.assertEqual(G_free.shape[1], G.shape[1] + 1)

    def test_vertex_report(self):
        """Test vertex report"""
        report = vertex_diagnostic(self.system, [0.3])
        self.assertGreater(report.count, 0)
        q = report.vertices[:, 2]
        self.assertTrue(np.all((q >= -1e-9) & (q <= 1 + 1e-9)))
        self.assertEqual(len(report.fractional), report.count)

    def test_vertex_report_empty_when_infeasible(self):
        """Test vertex report empty when infeasible"""
        huge = build_system(self.problem.with_drcc(self.problem.drcc.replace(theta=1e6)))
        self.assertEqual(vertex_diagnostic(huge, [0.3]).count, 0)

    def test_vertex_diagnostic_limits_k(self):
        """Test the vertex diagnostic limits K"""
        drcc = make_drcc(A=[[1.0]], beta=[[1.0]], b=[2.0], samples=[[0.0], [1.0], [2.0], [3.0]])
        system = build_system(GnepProblem([scalar_agent()], drcc))
        with self.assertRaises(SystemTooLargeError):
            vertex_diagnostic(system, [0.3])


class DumpTestCase(SimpleTestCase):
    """Test cases for system dumps."""

    def test_dump_lists_blocks(self):
        """Test dump lists blocks"""
        stream = io.StringIO()
        dump_system(build_system(_three_station_game()), stream)
        text = stream.getvalue()
        for name in ('# M ', '# beta_bar 3x3', '# A_bar[2] 3x1', '# E_bar 3x3', '# M_bar 3x3'):
            self.assertIn(name, text)
