import logging

from rest_framework.response import Response
from rest_framework.views import APIView
from rest_framework import status
from drf_spectacular.utils import extend_schema, OpenApiParameter, OpenApiExample
from drf_spectacular.types import OpenApiTypes

from .serializers import ScenarioSerializer, SimulateResponseSerializer, ExperimentRunSerializer
from .services.errors import SchemeError, SimulationError
from .services.scenario_loader import scenario_from_payload, with_overrides
from .services.sim_harness import COLUMNS, run_experiment
from .models import ExperimentRun

logger = logging.getLogger(__name__)

_DETAIL = {"type": "object", "properties": {"detail": {"type": "string"}}}


class HealthCheckView(APIView):
    authentication_classes = []
    permission_classes = []

    @extend_schema(
        summary="Health check",
        description="Check if the API is running and healthy.",
        responses={
            200: {
                "type": "object",
                "properties": {
                    "status": {"type": "string", "example": "ok"}
                }
            }
        },
        tags=["Health"]
    )
    def get(self, request):
        return Response({"status": "ok"})


class SimulateView(APIView):
    @extend_schema(
        summary="Run a simulation scenario",
        description="""
        Run every sweep point x scheme x seed of a scenario and return the metric rows.

        **Modes:**
        - `infrastructure`: one base station multicasts scalable video to groups over sensed channels
        - `multihop`: sessions are routed over CR relays with per-slot path and channel selection

        **Query Parameters:**
        - `seeds=n`: replace the scenario's seeds with 1..n
        - `schemes=a,b`: compare these schemes on the same seeds
        - `save=1` or `save=true`: persist the run (returns the run object in the response)

        Each (sweep point, scheme) block ends with an aggregate row holding the mean and
        the 95% Student-t half-width. Replicas that fail become `error` rows.
        """,
        request=ScenarioSerializer,
        responses={
            200: SimulateResponseSerializer,
            400: {
                "type": "object",
                "properties": {
                    "detail": {"type": "string"},
                    "field_name": {"type": "array", "items": {"type": "string"}}
                }
            },
            422: _DETAIL,
            500: _DETAIL,
        },
        examples=[
            OpenApiExample(
                "Example Request",
                value={
                    "name": "two-groups",
                    "mode": "infrastructure",
                    "seeds": [1, 2],
                    "channels": {
                        "count": 4,
                        "defaults": {"eta": 0.4, "correlation": 0.5, "epsilon": 0.3, "delta": 0.25, "gamma": 0.2},
                    },
                    "infrastructure": {
                        "gop_slots": 30,
                        "est_slots": 5,
                        "groups": [
                            {
                                "name": "g1",
                                "q_base": 30.0,
                                "beta": 0.05,
                                "r_base": 2.0,
                                "r_enh_max": 40.0,
                                "audience": [10, 6, 3],
                                "payload": [1.0, 1.5, 2.0],
                            }
                        ],
                    },
                    "schemes": ["equal", "greedy"],
                },
                request_only=True
            ),
            OpenApiExample(
                "Example Response",
                value={
                    "columns": list(COLUMNS),
                    "rows": [
                        {
                            "sweep_key": "",
                            "sweep_value": "",
                            "scheme": "greedy",
                            "seed": "1",
                            "row_type": "replica",
                            "mean_psnr_db": "31.2",
                            "utility": "34.4",
                            "collision_rate": "0.0416",
                            "iterations": "",
                            "ci_half_width": "",
                            "entity_psnr": "31.2",
                            "trajectory_hash": "5f0c6a1d2e9b7c43",
                            "detail": "",
                        }
                    ],
                    "csv": "sweep_key,sweep_value,scheme,seed,row_type,...\n",
                },
                response_only=True
            )
        ],
        tags=["Simulation"],
        parameters=[
            OpenApiParameter(
                name="seeds",
                type=OpenApiTypes.INT,
                location=OpenApiParameter.QUERY,
                description="Run seeds 1..n instead of the scenario's list",
                required=False
            ),
            OpenApiParameter(
                name="schemes",
                type=OpenApiTypes.STR,
                location=OpenApiParameter.QUERY,
                description="Comma-separated schemes: equal, sf, greedy (infrastructure) or dual, sf, heuristic, brute (multihop)",
                required=False
            ),
            OpenApiParameter(
                name="save",
                type=OpenApiTypes.BOOL,
                location=OpenApiParameter.QUERY,
                description="If true, persist the run in the database (returns the run object in the response)",
                required=False,
                examples=[
                    OpenApiExample("Save run", value=True),
                    OpenApiExample("Don't save", value=False),
                ]
            ),
        ]
    )
    def post(self, request):
        serializer = ScenarioSerializer(data=request.data)
        serializer.is_valid(raise_exception=True)

        seeds = request.query_params.get("seeds")
        schemes = request.query_params.get("schemes")
        try:
            seed_count = int(seeds) if seeds else None
        except ValueError:
            return Response({"detail": f"Invalid parameter: seeds={seeds!r}"}, status=status.HTTP_400_BAD_REQUEST)
        if seed_count is not None and seed_count < 1:
            return Response({"detail": "seeds must be at least 1"}, status=status.HTTP_400_BAD_REQUEST)

        try:
            scenario = scenario_from_payload(request.data)
            scenario = with_overrides(
                scenario,
                request.data,
                seeds=seed_count,
                schemes=[s.strip() for s in schemes.split(",") if s.strip()] if schemes else None,
            )
            result = run_experiment(scenario)
        except SchemeError as exc:
            return Response({"detail": str(exc)}, status=status.HTTP_422_UNPROCESSABLE_ENTITY)
        except SimulationError as exc:
            logger.exception("simulation of %s failed", request.data.get("name"))
            return Response({"detail": f"Simulation error: {exc}"}, status=status.HTTP_500_INTERNAL_SERVER_ERROR)

        csv_text = result.to_csv()
        output = {
            "columns": list(COLUMNS),
            "rows": result.records(),
            "csv": csv_text,
        }

        if request.query_params.get("save") in {"1", "true", "True"}:
            run = ExperimentRun.objects.create(
                scenario_name=scenario.name,
                mode=scenario.mode,
                scenario=request.data,
                csv=csv_text,
                row_count=len(result.rows),
            )
            output["run"] = ExperimentRunSerializer(run).data

        return Response(output)


class ExperimentRunDetailView(APIView):
    @extend_schema(
        summary="Fetch a saved run",
        description="Return a run stored with `POST /api/simulate/?save=1`, including its scenario and CSV.",
        responses={200: ExperimentRunSerializer, 404: _DETAIL},
        tags=["Simulation"]
    )
    def get(self, request, pk):
        try:
            run = ExperimentRun.objects.get(pk=pk)
        except ExperimentRun.DoesNotExist:
            return Response({"detail": "Run not found"}, status=status.HTTP_404_NOT_FOUND)
        return Response(ExperimentRunSerializer(run).data)
