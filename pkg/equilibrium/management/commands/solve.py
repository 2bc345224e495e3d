"""
Solve a game stored as problem JSON.
Usage: python manage.py solve --problem game.json [--samples xi.txt] [--out result.json]

Exit codes: 0 equilibrium found, 2 no equilibrium (or no feasible profile),
3 inconclusive, 1 usage or input errors.
"""

import logging

from drcc_gnep.commands import EXIT_INCONCLUSIVE, EXIT_NO_EQUILIBRIUM, GnepCommand, fail
from drcc_gnep.exceptions import InfeasibleGameError
from equilibrium.serializers import EquilibriumResultSerializer, render_json
from equilibrium.solver import EquilibriumStatus, GnepSolver, SolverOptions
from game_model.loaders import load_problem
from reformulation.bigm import dump_system

logger = logging.getLogger(__name__)

EXIT_CODES = {
    EquilibriumStatus.GNE: 0,
    EquilibriumStatus.NON_EXISTENCE: EXIT_NO_EQUILIBRIUM,
    EquilibriumStatus.INCONCLUSIVE: EXIT_INCONCLUSIVE,
}


def override_drcc(problem, epsilon=None, theta=None):
    changes = {key: value for key, value in (('epsilon', epsilon), ('theta', theta)) if value is not None}
    return problem.with_drcc(problem.drcc.replace(**changes)) if changes else problem


class Command(GnepCommand):
    help = 'Search for a generalized Nash equilibrium of a problem file'

    def add_arguments(self, parser):
        parser.add_argument('--problem', required=True, help='Problem JSON file')
        parser.add_argument('--samples', help='Sample file overriding drcc.samples')
        parser.add_argument('--epsilon', type=float, help='Risk level override')
        parser.add_argument('--theta', type=float, help='Wasserstein radius override')
        parser.add_argument('--seed', type=int, help='Multistart seed (default from settings)')
        parser.add_argument('--tol', type=float, help='Equilibrium tolerance on the residual')
        parser.add_argument('--max-starts', type=int, dest='max_starts', help='Multistart points per node')
        parser.add_argument('--enum-threshold', type=int, dest='enum_threshold',
                            help='Largest K solved by full enumeration of q')
        parser.add_argument('--timings', action='store_true', help='Include wall_ms in the report')
        parser.add_argument('--dump-system', dest='dump_system', help='Write the big-M system to this file')
        self.add_common_arguments(parser)

    def run(self, *args, **options):
        problem = load_problem(options['problem'], options.get('samples'))
        problem = override_drcc(problem, options.get('epsilon'), options.get('theta'))
        solver_options = SolverOptions.from_settings(
            seed=options.get('seed'),
            tol_eq=options.get('tol'),
            multistart=options.get('max_starts'),
            enum_threshold=options.get('enum_threshold'),
        )
        solver = GnepSolver(problem, solver_options)
        if options.get('dump_system'):
            with open(options['dump_system'], 'w') as stream:
                dump_system(solver.system, stream)

        try:
            result = solver.solve()
        except InfeasibleGameError as exc:
            fail(str(exc), EXIT_NO_EQUILIBRIUM)

        serializer = EquilibriumResultSerializer(result, context={'timings': options.get('timings', False)})
        self.emit(render_json(serializer.data), options.get('out'))

        code = EXIT_CODES[result.status]
        if code:
            fail(f'status {result.status.value}, residual {result.residual:.6g}', code)
        if not self._quiet:
            self.stderr.write(self.style.SUCCESS(f'GNE found, residual {result.residual:.3e}'))
