from unittest.mock import patch

import pytest
from django.urls import reverse

from crvideo.models import ExperimentRun
from crvideo.services.errors import SimulationError
from crvideo.services.sim_harness import COLUMNS


def _payload():
    return {
        "name": "api-cell",
        "mode": "infrastructure",
        "seeds": [1, 2],
        "channels": {
            "count": 3,
            "defaults": {"eta": 0.4, "correlation": 0.5, "epsilon": 0.3, "delta": 0.25, "gamma": 0.2},
        },
        "infrastructure": {
            "gop_slots": 15,
            "est_slots": 5,
            "groups": [
                {
                    "name": "g0",
                    "q_base": 30.0,
                    "beta": 0.01,
                    "r_base": 2.0,
                    "r_enh_max": 100.0,
                    "audience": [3, 1],
                    "payload": [1.0, 2.0],
                }
            ],
        },
        "schemes": ["greedy"],
    }


def test_health(client):
    res = client.get(reverse("health"))
    assert res.status_code == 200
    assert res.json() == {"status": "ok"}


def test_simulate_returns_rows_and_csv(client, monkeypatch):
    monkeypatch.setenv("CRVIDEO_WORKERS", "1")
    res = client.post(reverse("simulate"), data=_payload(), content_type="application/json")
    assert res.status_code == 200
    data = res.json()
    assert data["columns"] == list(COLUMNS)
    assert [row["row_type"] for row in data["rows"]] == ["replica", "replica", "aggregate"]
    assert data["csv"].splitlines()[0] == ",".join(COLUMNS)
    assert "run" not in data


def test_simulate_seed_override(client, monkeypatch):
    monkeypatch.setenv("CRVIDEO_WORKERS", "1")
    res = client.post(reverse("simulate") + "?seeds=3", data=_payload(), content_type="application/json")
    assert res.status_code == 200
    assert [row["seed"] for row in res.json()["rows"]] == ["1", "2", "3", ""]


def test_simulate_rejects_bad_seeds(client):
    res = client.post(reverse("simulate") + "?seeds=many", data=_payload(), content_type="application/json")
    assert res.status_code == 400
    res = client.post(reverse("simulate") + "?seeds=0", data=_payload(), content_type="application/json")
    assert res.status_code == 400


def test_simulate_out_of_range_gamma(client):
    payload = _payload()
    payload["channels"]["defaults"]["gamma"] = 1.5
    res = client.post(reverse("simulate"), data=payload, content_type="application/json")
    assert res.status_code == 400
    assert "gamma" in res.json()["channels"]["defaults"]


def test_simulate_missing_fields(client):
    res = client.post(reverse("simulate"), data={}, content_type="application/json")
    assert res.status_code == 400


def test_simulate_unknown_scheme_returns_422(client, monkeypatch):
    monkeypatch.setenv("CRVIDEO_WORKERS", "1")
    payload = _payload()
    payload["schemes"] = ["optimal"]
    res = client.post(reverse("simulate"), data=payload, content_type="application/json")
    assert res.status_code == 422
    assert "optimal" in res.json()["detail"]


def test_simulate_runtime_failure_returns_500(client):
    with patch("crvideo.views.run_experiment", side_effect=SimulationError("solver diverged")):
        res = client.post(reverse("simulate"), data=_payload(), content_type="application/json")
    assert res.status_code == 500
    assert "solver diverged" in res.json()["detail"]


@pytest.mark.django_db
def test_simulate_with_save_creates_run(client, monkeypatch):
    monkeypatch.setenv("CRVIDEO_WORKERS", "1")
    url = reverse("simulate") + "?save=1"
    res = client.post(url, data=_payload(), content_type="application/json")
    assert res.status_code == 200
    data = res.json()
    assert "run" in data
    assert data["run"]["row_count"] == 3
    assert data["run"]["csv"] == data["csv"]

    run = ExperimentRun.objects.get(pk=data["run"]["id"])
    assert run.scenario_name == "api-cell"
    assert run.mode == "infrastructure"

    detail = client.get(reverse("run-detail", args=[run.pk]))
    assert detail.status_code == 200
    assert detail.json()["scenario"]["name"] == "api-cell"


@pytest.mark.django_db
def test_missing_run_returns_404(client):
    res = client.get(reverse("run-detail", args=[999]))
    assert res.status_code == 404
    assert res.json()["detail"] == "Run not found"
