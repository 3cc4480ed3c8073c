from lab.harness import run_diagnostics
from lab.management.base import LabCommand, write_checks


class Command(LabCommand):
    help = "Spectral-measure diagnostics: vague convergence, homogeneity, tightness, lattice vs quadrature"

    def run(self, config, seed, out, budget):
        return run_diagnostics(config, out, budget)["checks"]

    def report(self, result):
        write_checks(self, result)
