from __future__ import annotations

import json
import logging
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

from .channel_model import MarkovChannel
from .errors import ScenarioError, SchemeError, SimulationError
from .multicast_planner import SCHEMES as INFRASTRUCTURE_SCHEMES
from .multihop_planner import SCHEMES as MULTIHOP_SCHEMES
from .multihop_planner import BruteForceCaps, DualSettings
from .scenario import (
    INFRASTRUCTURE,
    MULTIHOP,
    ChannelSpec,
    GroupSpec,
    InfrastructureSpec,
    LinkSpec,
    MultihopSpec,
    Scenario,
    SessionSpec,
    Sweep,
    SweepValue,
)
from .video_model import VideoSource

logger = logging.getLogger(__name__)

MODE_SCHEMES = {INFRASTRUCTURE: INFRASTRUCTURE_SCHEMES, MULTIHOP: MULTIHOP_SCHEMES}
DEFAULT_SCHEMES = {INFRASTRUCTURE: ("greedy",), MULTIHOP: ("dual",)}

_CHAIN_FIELDS = ("lambda", "mu", "eta", "correlation")


def flatten_errors(detail: Any, prefix: str = "") -> Dict[str, List[str]]:
    """DRF error detail as {"channels.defaults.gamma": [...]}."""
    flat: Dict[str, List[str]] = {}
    if isinstance(detail, Mapping):
        for key, value in detail.items():
            name = prefix if key == "non_field_errors" else (f"{prefix}.{key}" if prefix else str(key))
            for path, messages in flatten_errors(value, name).items():
                flat.setdefault(path, []).extend(messages)
    elif isinstance(detail, list) and detail and all(isinstance(item, str) for item in detail):
        flat[prefix or "scenario"] = [str(item) for item in detail]
    elif isinstance(detail, list):
        for index, value in enumerate(detail):
            if value in ({}, [], None):
                continue
            for path, messages in flatten_errors(value, f"{prefix}.{index}" if prefix else str(index)).items():
                flat.setdefault(path, []).extend(messages)
    else:
        flat[prefix or "scenario"] = [str(detail)]
    return flat


def _scenario_error(errors: Dict[str, List[str]]) -> ScenarioError:
    message = "; ".join(f"{path}: {' '.join(messages)}" for path, messages in sorted(errors.items()))
    return ScenarioError(message, errors)


def _channel_spec(params: Mapping[str, Any]) -> ChannelSpec:
    if "eta" in params:
        ch = MarkovChannel.from_utilization(params["eta"], params.get("correlation", 0.5))
    else:
        ch = MarkovChannel(lam=params["lambda"], mu=params["mu"])
    return ChannelSpec(
        lam=ch.lam,
        mu=ch.mu,
        epsilon=params["epsilon"],
        delta=params["delta"],
        gamma=params["gamma"],
    )


def _channel_overrides(defaults: Mapping[str, Any], overrides: Sequence[Mapping[str, Any]]) -> Dict:
    out = {}
    for override in overrides:
        merged = dict(defaults)
        given = {k: v for k, v in override.items() if k not in ("network", "channel")}
        if any(k in given for k in _CHAIN_FIELDS):
            for k in _CHAIN_FIELDS:
                merged.pop(k, None)
        merged.update(given)
        if "eta" not in merged and "lambda" not in merged:
            raise _scenario_error({"channels.overrides": ["correlation needs eta in the same override"]})
        out[(override["network"], override["channel"])] = _channel_spec(merged)
    return out


def _video(block: Mapping[str, Any]) -> VideoSource:
    return VideoSource(
        q_base=block["q_base"],
        beta=block["beta"],
        r_base=block["r_base"],
        r_enh_max=block["r_enh_max"],
    )


def _infrastructure(block: Mapping[str, Any]) -> InfrastructureSpec:
    groups = []
    for group in block["groups"]:
        schedule = sorted((step["gop"], tuple(step["audience"])) for step in group["audience_schedule"])
        groups.append(
            GroupSpec(
                name=group["name"],
                source=_video(group),
                audience=tuple(group["audience"]),
                payload=tuple(group["payload"]),
                audience_schedule=tuple(schedule),
            )
        )
    return InfrastructureSpec(
        gop_slots=block["gop_slots"],
        est_slots=block["est_slots"],
        groups=tuple(groups),
        n_tangents=block["n_tangents"],
    )


def _multihop(block: Mapping[str, Any], channel_count: int) -> MultihopSpec:
    links = tuple(
        LinkSpec(
            a=link["a"],
            b=link["b"],
            delay=link["delay"],
            losses=tuple(link["losses"]) if "losses" in link else (link["loss"],) * channel_count,
        )
        for link in block["links"]
    )
    sessions = tuple(
        SessionSpec(name=s["name"], source=s["source"], dest=s["dest"], video=_video(s)) for s in block["sessions"]
    )
    return MultihopSpec(
        networks=block["networks"],
        nodes={node["id"]: node["network"] for node in block["nodes"]},
        links=links,
        sessions=sessions,
        delay_bound=block["delay_bound"],
        packet_kb=block["packet_kb"],
        slot_s=block["slot_s"],
        gop_slots=block["gop_slots"],
        max_paths=block["max_paths"],
        observers=block["observers"],
        sensing_users=tuple(tuple(row) for row in block["sensing_users"]),
        xi=block["xi"],
        validate_plans=block["validate_plans"],
        dual=DualSettings(**block["dual"]) if "dual" in block else DualSettings(),
        caps=BruteForceCaps(**block["caps"]) if "caps" in block else BruteForceCaps(),
    )


def check_schemes(mode: str, schemes: Sequence[str]) -> Tuple[str, ...]:
    allowed = MODE_SCHEMES[mode]
    unknown = [s for s in schemes if s not in allowed]
    if unknown:
        raise SchemeError(f"schemes {', '.join(unknown)} do not apply to {mode} scenarios; expected {', '.join(allowed)}")
    if not schemes:
        raise SchemeError("at least one scheme is required")
    return tuple(dict.fromkeys(schemes))


def scenario_from_payload(payload: Any) -> Scenario:
    """Validate a decoded scenario document and build the value types the planners consume."""
    # imported here so replica workers never load the Django app
    from ..serializers import ScenarioSerializer

    serializer = ScenarioSerializer(data=payload)
    if not serializer.is_valid():
        raise _scenario_error(flatten_errors(serializer.errors))
    data = serializer.validated_data
    mode = data["mode"]
    schemes = check_schemes(mode, data.get("schemes") or DEFAULT_SCHEMES[mode])
    channels = data["channels"]
    try:
        scenario = Scenario(
            name=data["name"],
            mode=mode,
            seeds=tuple(data["seeds"]),
            horizon_gops=data["horizon_gops"],
            channel_count=channels["count"],
            channel_defaults=_channel_spec(channels["defaults"]),
            channel_overrides=_channel_overrides(channels["defaults"], channels["overrides"]),
            schemes=schemes,
            infrastructure=_infrastructure(data["infrastructure"]) if mode == INFRASTRUCTURE else None,
            multihop=_multihop(data["multihop"], channels["count"]) if mode == MULTIHOP else None,
            sweep=Sweep(data["sweep"]["key"], tuple(data["sweep"]["values"])) if data.get("sweep") else None,
        )
    except ScenarioError:
        raise
    except SimulationError as exc:
        raise _scenario_error({"scenario": [str(exc)]}) from exc
    logger.debug("loaded scenario %s (%s, %d seeds)", scenario.name, mode, len(scenario.seeds))
    return scenario


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}", {"path": [str(exc)]}) from exc
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: not valid JSON ({exc})", {"scenario": [str(exc)]}) from exc
    return scenario_from_payload(payload)


def parse_sweep(text: str) -> Tuple[str, Tuple[SweepValue, ...]]:
    """``key=v1,v2`` from the command line; sensing points are written ``eps:delta``."""
    key, sep, raw = text.partition("=")
    key = key.strip()
    if not sep or not key or not raw.strip():
        raise ScenarioError(f"sweep {text!r} must look like key=v1,v2", {"sweep": ["expected key=v1,v2"]})
    values: List[Any] = []
    for item in raw.split(","):
        item = item.strip()
        try:
            if key == "sensing":
                eps, colon, delta = item.partition(":")
                if not colon:
                    raise ValueError(item)
                values.append([float(eps), float(delta)])
            elif key == "channels":
                values.append(int(item))
            else:
                values.append(float(item))
        except ValueError:
            raise ScenarioError(f"sweep value {item!r} is not valid for {key}", {"sweep.values": [item]})
    return key, tuple(values)


def with_overrides(
    scenario: Scenario,
    payload: Mapping[str, Any],
    seeds: Optional[int] = None,
    schemes: Optional[Sequence[str]] = None,
    sweep: Optional[str] = None,
) -> Scenario:
    """Apply command-line overrides; the sweep is revalidated through the scenario schema."""
    if sweep is not None:
        key, values = parse_sweep(sweep)
        document = dict(payload)
        document["sweep"] = {"key": key, "values": list(values)}
        if schemes is not None:
            document["schemes"] = list(schemes)
        scenario = scenario_from_payload(document)
    elif schemes is not None:
        scenario = replace(scenario, schemes=check_schemes(scenario.mode, schemes))
    if seeds is not None:
        if seeds < 1:
            raise ScenarioError("--seeds must be at least 1", {"seeds": ["must be at least 1"]})
        scenario = replace(scenario, seeds=tuple(range(1, seeds + 1)))
    return scenario
