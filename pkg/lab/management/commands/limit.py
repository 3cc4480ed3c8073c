from lab.harness import run_limit
from lab.management.base import LabCommand


class Command(LabCommand):
    help = "Draw S_0 and S_0(t) from the discretized multiple Wiener-Ito integral"

    def run(self, config, seed, out, budget):
        return run_limit(config, seed, out, budget)

    def report(self, result):
        self.stdout.write(self.style.SUCCESS(f"wrote {result}"))
