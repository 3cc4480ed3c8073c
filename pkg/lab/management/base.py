import logging

from django.core.management.base import BaseCommand, CommandError
from rest_framework.exceptions import ValidationError

from lab.exceptions import LabError
from lab.harness import load_config
from lab.utils import Budget

logger = logging.getLogger(__name__)


def add_lab_arguments(parser, config_required: bool = True):
    parser.add_argument("--config", required=config_required, help="Experiment YAML file")
    parser.add_argument("--seed", type=int, default=None, help="Override run.seed / run.seeds")
    parser.add_argument("--out", default=None, help="Output directory (default: output.dir or LAB_OUTPUT_DIR)")
    parser.add_argument("--budget-seconds", type=float, default=None, help="Runtime cap (default LAB_BUDGET_SECONDS)")


def execute_lab(name: str, run, options: dict):
    """Load the config, run, and turn lab and validation errors into CommandError."""
    try:
        config = load_config(options["config"])
        return run(config, options["seed"], options["out"], Budget(options["budget_seconds"]))
    except ValidationError as e:
        raise CommandError(f"invalid config {options['config']}: {e.detail}")
    except LabError as e:
        logger.exception(f"❌ {name} failed: {e}")
        raise CommandError(f"{type(e).__name__}: {e}")
    except FileNotFoundError as e:
        raise CommandError(str(e))


def write_checks(command: BaseCommand, checks: list[dict]):
    for check in checks:
        style = command.style.SUCCESS if check["passed"] else command.style.WARNING
        command.stdout.write(style(f"{check['check']}: {check['value']} (threshold {check['threshold']}) {check['detail']}"))
    failed = [c["check"] for c in checks if not c["passed"]]
    if failed:
        command.stdout.write(command.style.WARNING(f"{len(failed)} of {len(checks)} checks failed: {', '.join(failed)}"))


class LabCommand(BaseCommand):
    """Shared flags and error translation; subclasses implement `run(config, seed, out, budget)`."""

    def add_arguments(self, parser):
        add_lab_arguments(parser)

    def handle(self, *args, **options):
        result = execute_lab(self.__module__.rsplit(".", 1)[-1], self.run, options)
        self.report(result)

    def run(self, config, seed, out, budget):
        raise NotImplementedError

    def report(self, result):
        self.stdout.write(self.style.SUCCESS(str(result)))
