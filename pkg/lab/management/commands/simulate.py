from lab.harness import run_simulate
from lab.management.base import LabCommand


class Command(LabCommand):
    help = "Sample the Gaussian field on B_N for every N of the run and write CSV files"

    def run(self, config, seed, out, budget):
        return run_simulate(config, seed, out, budget)

    def report(self, result):
        for path in result:
            self.stdout.write(self.style.SUCCESS(f"wrote {path}"))
