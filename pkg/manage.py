#!/usr/bin/env python
"""
Command-line entry point for the equilibrium solver.

    python manage.py solve --problem game.json --out result.json
    python manage.py check_point --problem game.json --point x.json
    python manage.py casestudy table1 --out table1.json
    python manage.py test
"""
import os
import sys


def main():
    """Dispatch to the Django management command named in argv."""
    os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'drcc_gnep.settings')
    try:
        from django.core.management import execute_from_command_line
    except ImportError as exc:
        raise ImportError(
            "Django is required to run the solver commands; install the "
            "packages listed in requirements.txt first."
        ) from exc
    execute_from_command_line(sys.argv)


if __name__ == '__main__':
    main()
