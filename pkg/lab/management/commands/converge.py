from lab.harness import run_convergence_experiment, run_variance_convergence
from lab.management.base import LabCommand, write_checks


class Command(LabCommand):
    help = "Compare S_N with S_0 along the N list (KS, moments, exact variances, joint covariances)"

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument("--skip-variance", action="store_true", help="Skip the exact variance sequence")

    def handle(self, *args, **options):
        self.skip_variance = options["skip_variance"]
        return super().handle(*args, **options)

    def run(self, config, seed, out, budget):
        checks = []
        if "variance" in config["comparison"]["tests"] and not self.skip_variance:
            checks.extend(run_variance_convergence(config, seed, out, budget)["checks"])
        checks.extend(run_convergence_experiment(config, seed, out, budget)["checks"])
        return checks

    def report(self, result):
        write_checks(self, result)
