from django.core.management.commands.check import Command as SystemCheckCommand

from lab.harness import run_property_checks
from lab.management.base import add_lab_arguments, execute_lab, write_checks


class Command(SystemCheckCommand):
    help = "Django system checks; with --config, the lab's property-check battery"

    def add_arguments(self, parser):
        super().add_arguments(parser)
        add_lab_arguments(parser, config_required=False)

    def handle(self, *app_labels, **options):
        if not options.get("config"):
            return super().handle(*app_labels, **options)
        write_checks(self, execute_lab("check", run_property_checks, options))
