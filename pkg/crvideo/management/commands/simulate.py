import json
from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from crvideo.services.errors import ScenarioError, SchemeError, SimulationError
from crvideo.services.scenario_loader import load_scenario, with_overrides
from crvideo.services.sim_harness import run_experiment, write_csv, write_trace


class Command(BaseCommand):
    help = "Run a scenario file and write the metric rows as CSV (exit 2 on schema errors, 3 on runtime failures)."

    def add_arguments(self, parser):
        parser.add_argument("scenario", help="Path to a scenario JSON file")
        parser.add_argument("--out", help="CSV destination (default: standard output)")
        parser.add_argument("--seeds", type=int, help="Run seeds 1..n instead of the file's list")
        parser.add_argument("--schemes", help="Comma-separated schemes to compare on the same seeds")
        parser.add_argument("--sweep", help="key=v1,v2,... (sensing points as eps:delta)")
        parser.add_argument("--trace", help="Also write per-GoP rows to this CSV file")
        parser.add_argument("--workers", type=int, help="Parallel replica workers (default: CRVIDEO_WORKERS or CPU count)")

    def handle(self, *args, **options):
        try:
            scenario = load_scenario(options["scenario"])
            if options["sweep"] or options["schemes"] or options["seeds"] is not None:
                payload = json.loads(Path(options["scenario"]).read_text(encoding="utf-8"))
                schemes = options["schemes"]
                scenario = with_overrides(
                    scenario,
                    payload,
                    seeds=options["seeds"],
                    schemes=[s.strip() for s in schemes.split(",") if s.strip()] if schemes else None,
                    sweep=options["sweep"],
                )
            result = run_experiment(scenario, workers=options["workers"], collect_trace=bool(options["trace"]))
        except (ScenarioError, SchemeError) as exc:
            raise CommandError(str(exc), returncode=2)
        except SimulationError as exc:
            raise CommandError(f"simulation failed: {exc}", returncode=3)

        try:
            if options["out"]:
                with open(options["out"], "w", encoding="utf-8", newline="") as handle:
                    write_csv(result.rows, handle)
            else:
                write_csv(result.rows, self.stdout)
            if options["trace"]:
                with open(options["trace"], "w", encoding="utf-8", newline="") as handle:
                    write_trace(result, handle)
        except OSError as exc:
            raise CommandError(f"cannot write output: {exc}", returncode=3)

        if options["out"]:
            self.stderr.write(f"wrote {len(result.rows)} rows to {options['out']}")
