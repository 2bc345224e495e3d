"""
Shared plumbing for the solver's management commands: exit codes, the
--quiet/--out flags and report writing.
"""

import logging
from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from drcc_gnep.exceptions import GnepError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NO_EQUILIBRIUM = 2
EXIT_INCONCLUSIVE = 3


class GnepCommand(BaseCommand):
    """Base command; usage errors and library errors exit with code 1."""

    def create_parser(self, prog_name, subcommand, **kwargs):
        parser = super().create_parser(prog_name, subcommand, **kwargs)
        # argparse would exit with 2, which is reserved for verdicts
        parser.called_from_command_line = False
        return parser

    def add_common_arguments(self, parser):
        parser.add_argument('--out', help='Report file (default: stdout)')
        parser.add_argument('--quiet', action='store_true', help='Only log warnings and errors')

    def execute(self, *args, **options):
        restore = {}
        if options.get('quiet'):
            for name in settings.LOGGING.get('loggers', {}):
                logger = logging.getLogger(name)
                restore[name] = logger.level
                logger.setLevel(logging.WARNING)
        try:
            return super().execute(*args, **options)
        except GnepError as exc:
            raise CommandError(str(exc), returncode=EXIT_USAGE) from exc
        finally:
            for name, level in restore.items():
                logging.getLogger(name).setLevel(level)

    def emit(self, text, out=None):
        """Write a report to --out or stdout."""
        if out:
            Path(out).write_text(text)
            if not self._quiet:
                self.stderr.write(f'Report written to {out}')
        else:
            self.stdout.write(text, ending='')

    def handle(self, *args, **options):
        self._quiet = options.get('quiet', False)
        return self.run(*args, **options)

    def run(self, *args, **options):
        raise NotImplementedError('subclasses of GnepCommand must provide a run() method')


def fail(message, returncode):
    raise CommandError(message, returncode=returncode)
