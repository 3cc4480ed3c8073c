from lab.harness import run_sums
from lab.management.base import LabCommand


class Command(LabCommand):
    help = "Simulate batches of normalized sums S_N and S_N(t)"

    def run(self, config, seed, out, budget):
        return run_sums(config, seed, out, budget)

    def report(self, result):
        self.stdout.write(self.style.SUCCESS(f"wrote {result}"))
