#!/usr/bin/env python
"""Command-line entry point: `simulate`, `sums`, `limit`, `converge`, `spectral`, `check` and `test`."""
import os
import sys


def main():
    os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'lrdlab.settings')
    try:
        from django.core.management import execute_from_command_line
    except ImportError as exc:
        raise ImportError(
            "Couldn't import Django; install requirements.txt into the active environment first."
        ) from exc
    execute_from_command_line(sys.argv)


if __name__ == '__main__':
    main()
