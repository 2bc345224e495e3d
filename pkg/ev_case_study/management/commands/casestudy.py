"""
Charging-station case study.
Usage:
    python manage.py casestudy table1 --out table1.json
    python manage.py casestudy table1 --samples low_demand.txt
    python manage.py casestudy sweep --I 3,5,10 --out sweep.csv
    python manage.py casestudy validate
    python manage.py casestudy export --I 3 --out market.json
"""

import io
import json

from django.core.management.base import CommandError

from drcc_gnep.commands import EXIT_INCONCLUSIVE, EXIT_USAGE, GnepCommand, fail
from equilibrium.serializers import render_json
from equilibrium.solver import SolverOptions
from ev_case_study.experiments import run_sweep, run_table1, run_validate, write_sweep_csv
from ev_case_study.market import CsMarketParams, build_gnep
from game_model.loaders import dump_problem
from wasserstein_drcc.loaders import load_samples

DEFAULT_SWEEP = '3,5,10,25,50'


def parse_station_counts(text):
    try:
        counts = [int(item) for item in text.split(',') if item.strip()]
    except ValueError:
        raise CommandError(f'--I expects comma separated integers, got {text!r}', returncode=EXIT_USAGE)
    if not counts or min(counts) < 1:
        raise CommandError('--I needs at least one positive station count', returncode=EXIT_USAGE)
    return counts


class Command(GnepCommand):
    help = 'Run the charging-station pricing experiments'

    def add_arguments(self, parser):
        parser.add_argument('experiment', choices=['table1', 'sweep', 'validate', 'export'])
        parser.add_argument('--I', dest='stations', help='Station count(s), comma separated for sweep')
        parser.add_argument('--seed', type=int, help='Sample and multistart seed')
        parser.add_argument('--theta', type=float, help='Wasserstein radius')
        parser.add_argument('--epsilon', type=float, help='Risk level')
        parser.add_argument('--max-starts', type=int, dest='max_starts', help='Multistart points per node')
        parser.add_argument('--draws', type=int, help='Monte Carlo draws for validate')
        parser.add_argument('--samples', help='Demand-shock sample file replacing the generated draws')
        parser.add_argument('--timings', action='store_true', help='Include wall_ms in JSON reports')
        self.add_common_arguments(parser)

    def run(self, *args, **options):
        experiment = options['experiment']
        counts = parse_station_counts(options.get('stations') or (DEFAULT_SWEEP if experiment == 'sweep' else '3'))
        if experiment != 'sweep' and len(counts) > 1:
            fail(f'{experiment} takes a single station count', EXIT_USAGE)
        params = CsMarketParams.from_settings(
            I=counts[0], seed=options.get('seed'), theta=options.get('theta'), epsilon=options.get('epsilon'),
        )
        solver_options = SolverOptions.from_settings(seed=params.seed, multistart=options.get('max_starts'))
        samples = load_samples(options['samples']) if options.get('samples') else None
        handler = getattr(self, f'run_{experiment}')
        handler(params, solver_options, counts, samples, options)

    def run_table1(self, params, solver_options, counts, samples, options):
        rows = run_table1(params, solver_options, samples)
        report = {'rows': [row.to_dict(timings=options.get('timings', False)) for row in rows]}
        self.emit(render_json(report), options.get('out'))

    def run_sweep(self, params, solver_options, counts, samples, options):
        rows = run_sweep(counts, params, solver_options, samples=samples)
        buffer = io.StringIO()
        write_sweep_csv(rows, buffer)
        self.emit(buffer.getvalue(), options.get('out'))

    def run_validate(self, params, solver_options, counts, samples, options):
        row = run_validate(params, solver_options, draws=options.get('draws'), samples=samples)
        self.emit(render_json(row.to_dict()), options.get('out'))
        violation = row.violation
        if not options.get('quiet'):
            self.stderr.write(
                f'violation {violation.estimate:.6g} (95% CI {violation.ci_lower:.6g}-{violation.ci_upper:.6g}), '
                f'bound {row.bound:.6g}'
            )
        if not row.passed:
            fail('out-of-sample violation exceeds epsilon + 3 standard errors', EXIT_INCONCLUSIVE)

    def run_export(self, params, solver_options, counts, samples, options):
        problem = build_gnep(params, samples)
        self.emit(json.dumps(dump_problem(problem), indent=2) + '\n', options.get('out'))
