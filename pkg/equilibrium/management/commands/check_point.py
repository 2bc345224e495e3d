"""
Certify a candidate profile of a problem file.
Usage: python manage.py check_point --problem game.json --point x.json
"""

from drcc_gnep.commands import EXIT_NO_EQUILIBRIUM, GnepCommand, fail
from equilibrium.management.commands.solve import override_drcc
from equilibrium.serializers import CertificationReportSerializer, render_json
from equilibrium.solver import GnepSolver, SolverOptions
from game_model.loaders import load_point, load_problem


class Command(GnepCommand):
    help = 'Check whether a point is a generalized Nash equilibrium'

    def add_arguments(self, parser):
        parser.add_argument('--problem', required=True, help='Problem JSON file')
        parser.add_argument('--point', required=True, help='Point JSON: a list or {"x": [...]}')
        parser.add_argument('--samples', help='Sample file overriding drcc.samples')
        parser.add_argument('--epsilon', type=float, help='Risk level override')
        parser.add_argument('--theta', type=float, help='Wasserstein radius override')
        parser.add_argument('--tol', type=float, help='Equilibrium tolerance on the residual')
        self.add_common_arguments(parser)

    def run(self, *args, **options):
        problem = load_problem(options['problem'], options.get('samples'))
        problem = override_drcc(problem, options.get('epsilon'), options.get('theta'))
        point = load_point(options['point'], problem)
        solver = GnepSolver(problem, SolverOptions.from_settings(tol_eq=options.get('tol')))
        report = solver.certify(point)

        self.emit(render_json(CertificationReportSerializer(report).data), options.get('out'))
        if not self._quiet:
            self.stderr.write(
                f'distance mass {report.drcc_mass:.9g} vs theta*K {report.transport_budget:.9g}'
            )
            for index, gap in enumerate(report.gaps):
                self.stderr.write(f'agent {index}: gap {gap:.9g}')
        if not report.verdict:
            fail(f'not an equilibrium: {report.reason}', EXIT_NO_EQUILIBRIUM)
        if not self._quiet:
            self.stderr.write(self.style.SUCCESS(f'certified, residual {report.residual:.3e}'))
