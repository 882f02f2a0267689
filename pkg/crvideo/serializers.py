from rest_framework import serializers

from .models import ExperimentRun


def open_unit(value):
    if not 0.0 < value < 1.0:
        raise serializers.ValidationError("Must lie strictly between 0 and 1.")


def closed_unit(value):
    if not 0.0 <= value <= 1.0:
        raise serializers.ValidationError("Must lie between 0 and 1.")


class ChannelParamsSerializer(serializers.Serializer):
    """
    Occupancy and sensing parameters of one licensed channel.

    The occupancy chain is given either as `lambda`/`mu` (P(idle -> idle),
    P(busy -> idle)) or as utilization `eta` with one-step `correlation`.
    """
    # overrides may leave the chain out and inherit it
    complete = True

    lambda_ = serializers.FloatField(
        required=False,
        validators=[closed_unit],
        help_text="P(idle -> idle)",
    )
    mu = serializers.FloatField(
        required=False,
        validators=[closed_unit],
        help_text="P(busy -> idle)",
    )
    eta = serializers.FloatField(
        required=False,
        validators=[closed_unit],
        help_text="Long-run busy fraction, used with `correlation` instead of lambda/mu",
    )
    correlation = serializers.FloatField(
        required=False,
        min_value=0.0,
        max_value=0.99,
        help_text="lambda - mu when the chain is given by eta (default 0.5)",
    )
    epsilon = serializers.FloatField(validators=[open_unit], help_text="False-alarm probability")
    delta = serializers.FloatField(validators=[open_unit], help_text="Miss-detection probability")
    gamma = serializers.FloatField(validators=[open_unit], help_text="Maximum allowed collision probability")

    def get_fields(self):
        fields = super().get_fields()
        # `lambda` is a keyword; the wire name is still "lambda"
        fields["lambda"] = fields.pop("lambda_")
        return fields

    def validate(self, attrs):
        has_pair = "lambda" in attrs or "mu" in attrs
        if has_pair and "eta" in attrs:
            raise serializers.ValidationError("Give either lambda/mu or eta, not both.")
        if has_pair and not ("lambda" in attrs and "mu" in attrs):
            raise serializers.ValidationError("lambda and mu must be given together.")
        if self.complete and not has_pair and "eta" not in attrs:
            raise serializers.ValidationError("Give lambda/mu or eta.")
        return attrs


class ChannelOverrideSerializer(ChannelParamsSerializer):
    """Per-channel deviation from the defaults; only the given fields change."""
    network = serializers.IntegerField(min_value=0, default=0)
    channel = serializers.IntegerField(min_value=0)

    complete = False

    def get_fields(self):
        fields = super().get_fields()
        for name in ("epsilon", "delta", "gamma"):
            fields[name].required = False
        return fields


class ChannelBlockSerializer(serializers.Serializer):
    count = serializers.IntegerField(min_value=1, help_text="Channels per primary network (N or M)")
    defaults = ChannelParamsSerializer()
    overrides = serializers.ListField(child=ChannelOverrideSerializer(), required=False, default=list)


class AudienceStepSerializer(serializers.Serializer):
    gop = serializers.IntegerField(min_value=0, help_text="First GoP that uses this audience")
    audience = serializers.ListField(child=serializers.IntegerField(min_value=0))


class VideoSerializer(serializers.Serializer):
    q_base = serializers.FloatField(min_value=0.0, help_text="PSNR (dB) with the base layer only")
    beta = serializers.FloatField(help_text="dB per kb of enhancement data")
    r_base = serializers.FloatField(min_value=0.0, help_text="Base-layer kb per GoP")
    r_enh_max = serializers.FloatField(min_value=0.0, help_text="Maximum enhancement kb per GoP")

    def validate_beta(self, value):
        if value <= 0:
            raise serializers.ValidationError("Must be positive.")
        return value

    def validate_q_base(self, value):
        if value <= 0:
            raise serializers.ValidationError("Must be positive.")
        return value


def _check_audience(audience, layers):
    if len(audience) != layers:
        raise serializers.ValidationError(f"Needs one entry per MC scheme ({layers}).")
    if any(a < b for a, b in zip(audience, audience[1:])):
        raise serializers.ValidationError("Must be nonincreasing in the MC index.")


class GroupSerializer(VideoSerializer):
    name = serializers.CharField(max_length=64)
    audience = serializers.ListField(
        child=serializers.IntegerField(min_value=0),
        min_length=1,
        help_text="Users able to decode each MC scheme, nonincreasing",
    )
    payload = serializers.ListField(
        child=serializers.FloatField(),
        min_length=1,
        help_text="kb carried by one tile under each MC scheme, strictly increasing",
    )
    audience_schedule = serializers.ListField(child=AudienceStepSerializer(), required=False, default=list)

    def validate_payload(self, value):
        if value[0] <= 0 or any(a >= b for a, b in zip(value, value[1:])):
            raise serializers.ValidationError("Must be positive and strictly increasing.")
        return value

    def validate(self, attrs):
        layers = len(attrs["payload"])
        try:
            _check_audience(attrs["audience"], layers)
        except serializers.ValidationError as exc:
            raise serializers.ValidationError({"audience": exc.detail})
        for step in attrs["audience_schedule"]:
            try:
                _check_audience(step["audience"], layers)
            except serializers.ValidationError as exc:
                raise serializers.ValidationError({"audience_schedule": exc.detail})
        return attrs


class InfrastructureSerializer(serializers.Serializer):
    gop_slots = serializers.IntegerField(min_value=1, default=150)
    est_slots = serializers.IntegerField(min_value=1, default=10)
    n_tangents = serializers.IntegerField(min_value=2, default=8)
    groups = serializers.ListField(child=GroupSerializer(), min_length=1)

    def validate(self, attrs):
        if attrs["est_slots"] > attrs["gop_slots"]:
            raise serializers.ValidationError({"est_slots": ["Must not exceed gop_slots."]})
        if len({len(g["payload"]) for g in attrs["groups"]}) > 1:
            raise serializers.ValidationError({"groups": ["All groups must use the same MC scheme set."]})
        return attrs


class NodeSerializer(serializers.Serializer):
    id = serializers.IntegerField(min_value=0)
    network = serializers.IntegerField(min_value=0, help_text="Primary network the node sits in")


class LinkSerializer(serializers.Serializer):
    a = serializers.IntegerField(min_value=0)
    b = serializers.IntegerField(min_value=0)
    delay = serializers.FloatField(min_value=0.0)
    losses = serializers.ListField(
        child=serializers.FloatField(validators=[closed_unit]),
        required=False,
        help_text="Loss rate per channel",
    )
    loss = serializers.FloatField(
        required=False,
        validators=[closed_unit],
        help_text="One loss rate for every channel",
    )

    def validate(self, attrs):
        if attrs["a"] == attrs["b"]:
            raise serializers.ValidationError("A link joins two different nodes.")
        if ("losses" in attrs) == ("loss" in attrs):
            raise serializers.ValidationError("Give exactly one of losses or loss.")
        return attrs


class SessionSerializer(VideoSerializer):
    name = serializers.CharField(max_length=64)
    source = serializers.IntegerField(min_value=0)
    dest = serializers.IntegerField(min_value=0)

    def validate(self, attrs):
        if attrs["source"] == attrs["dest"]:
            raise serializers.ValidationError({"dest": ["Must differ from source."]})
        return attrs


class DualSettingsSerializer(serializers.Serializer):
    step = serializers.FloatField(min_value=0.0, default=0.05)
    e0 = serializers.FloatField(min_value=0.0, default=0.1)
    tol = serializers.FloatField(min_value=0.0, default=1e-6)
    max_iter = serializers.IntegerField(min_value=1, default=10_000)
    iterations_per_ms = serializers.FloatField(
        min_value=0.0,
        required=False,
        allow_null=True,
        default=None,
        help_text="Dual iterations per millisecond; caps each slot at 5% of its duration",
    )


class CapsSerializer(serializers.Serializer):
    sessions = serializers.IntegerField(min_value=1, default=3)
    paths = serializers.IntegerField(min_value=1, default=3)
    channels = serializers.IntegerField(min_value=1, default=4)
    hops = serializers.IntegerField(min_value=1, default=4)


class MultihopSerializer(serializers.Serializer):
    networks = serializers.IntegerField(min_value=1, help_text="Primary networks K")
    nodes = serializers.ListField(child=NodeSerializer(), min_length=2)
    links = serializers.ListField(child=LinkSerializer(), min_length=1)
    sessions = serializers.ListField(child=SessionSerializer(), min_length=1)
    observers = serializers.IntegerField(
        min_value=0,
        required=False,
        allow_null=True,
        default=None,
        help_text="Sensing users per network (default: the network's node count)",
    )
    sensing_users = serializers.ListField(
        child=serializers.ListField(child=serializers.IntegerField(min_value=0), min_length=1),
        required=False,
        default=list,
        help_text="Per network, the number of users sensing each channel; overrides `observers`",
    )
    delay_bound = serializers.FloatField(min_value=0.0)
    max_paths = serializers.IntegerField(min_value=1, required=False, allow_null=True, default=None)
    packet_kb = serializers.FloatField(help_text="L_p, kb per packet")
    slot_s = serializers.FloatField(help_text="Slot duration in seconds")
    gop_slots = serializers.IntegerField(min_value=1, default=10)
    xi = serializers.IntegerField(min_value=1, default=1, help_text="Paths allowed per session")
    validate_plans = serializers.BooleanField(
        default=False, help_text="Check every slot's plan against the routing and channel rules"
    )
    dual = DualSettingsSerializer(required=False)
    caps = CapsSerializer(required=False)

    def validate_packet_kb(self, value):
        if value <= 0:
            raise serializers.ValidationError("Must be positive.")
        return value

    def validate_slot_s(self, value):
        if value <= 0:
            raise serializers.ValidationError("Must be positive.")
        return value

    def validate(self, attrs):
        ids = [node["id"] for node in attrs["nodes"]]
        if len(set(ids)) != len(ids):
            raise serializers.ValidationError({"nodes": ["Node ids must be unique."]})
        known = set(ids)
        for node in attrs["nodes"]:
            if node["network"] >= attrs["networks"]:
                raise serializers.ValidationError(
                    {"nodes": [f"Node {node['id']} references network {node['network']} of {attrs['networks']}."]}
                )
        seen = set()
        for link in attrs["links"]:
            for end in (link["a"], link["b"]):
                if end not in known:
                    raise serializers.ValidationError({"links": [f"Link {link['a']}-{link['b']} references unknown node {end}."]})
            key = tuple(sorted((link["a"], link["b"])))
            if key in seen:
                raise serializers.ValidationError({"links": [f"Link {key[0]}-{key[1]} is listed twice."]})
            seen.add(key)
        for session in attrs["sessions"]:
            for end in (session["source"], session["dest"]):
                if end not in known:
                    raise serializers.ValidationError(
                        {"sessions": [f"Session {session['name']} references unknown node {end}."]}
                    )
        return attrs


class SweepSerializer(serializers.Serializer):
    key = serializers.ChoiceField(choices=["gamma", "channels", "eta", "sensing", "slot_s"])
    values = serializers.ListField(child=serializers.JSONField(), min_length=1)

    def validate(self, attrs):
        key = attrs["key"]
        checked = []
        for value in attrs["values"]:
            try:
                checked.append(_sweep_value(key, value))
            except (TypeError, ValueError) as exc:
                raise serializers.ValidationError({"values": [f"{value!r}: {exc}"]})
        attrs["values"] = checked
        return attrs


def _sweep_value(key, value):
    if key == "sensing":
        if not isinstance(value, (list, tuple)) or len(value) != 2:
            raise ValueError("sensing points are [epsilon, delta] pairs")
        pair = tuple(float(v) for v in value)
        if not all(0.0 < v < 1.0 for v in pair):
            raise ValueError("epsilon and delta must lie strictly between 0 and 1")
        return pair
    if isinstance(value, (list, tuple, dict, bool)) or value is None:
        raise ValueError("expected a number")
    if key == "channels":
        count = int(value)
        if count != value or count < 1:
            raise ValueError("channel counts are positive integers")
        return count
    number = float(value)
    if key == "gamma" and not 0.0 < number < 1.0:
        raise ValueError("gamma must lie strictly between 0 and 1")
    if key == "eta" and not 0.0 <= number <= 1.0:
        raise ValueError("eta must lie between 0 and 1")
    if key == "slot_s" and number <= 0:
        raise ValueError("slot durations are positive")
    return number


class ScenarioSerializer(serializers.Serializer):
    """
    A simulation scenario.

    `mode` selects the infrastructure (single base station, multicast groups)
    or multihop (sessions routed over CR relays) pipeline; the matching block
    must be present.
    """
    name = serializers.CharField(max_length=128)
    mode = serializers.ChoiceField(choices=["infrastructure", "multihop"])
    seeds = serializers.ListField(
        child=serializers.IntegerField(min_value=0),
        min_length=1,
        default=lambda: [1],
        help_text="Replica seeds; every scheme reuses the same seeds",
    )
    horizon_gops = serializers.IntegerField(min_value=1, default=1)
    channels = ChannelBlockSerializer()
    infrastructure = InfrastructureSerializer(required=False)
    multihop = MultihopSerializer(required=False)
    sweep = SweepSerializer(required=False, allow_null=True)
    schemes = serializers.ListField(child=serializers.CharField(), required=False)

    def validate(self, attrs):
        mode = attrs["mode"]
        if mode not in attrs:
            raise serializers.ValidationError({mode: [f"Required when mode is {mode}."]})
        sweep = attrs.get("sweep")
        if sweep and mode == "infrastructure" and sweep["key"] == "slot_s":
            raise serializers.ValidationError({"sweep": ["slot_s applies to multihop scenarios only."]})
        networks = attrs["multihop"]["networks"] if mode == "multihop" else 1
        count = attrs["channels"]["count"]
        for override in attrs["channels"]["overrides"]:
            if override["network"] >= networks or override["channel"] >= count:
                raise serializers.ValidationError(
                    {"channels": [f"Override ({override['network']}, {override['channel']}) is outside the channel grid."]}
                )
        if mode == "multihop":
            for link in attrs["multihop"]["links"]:
                if "losses" in link and len(link["losses"]) != count:
                    raise serializers.ValidationError(
                        {"multihop": [f"Link {link['a']}-{link['b']} needs {count} loss rates."]}
                    )
            users = attrs["multihop"]["sensing_users"]
            if users and (len(users) != networks or any(len(row) != count for row in users)):
                raise serializers.ValidationError(
                    {"multihop": [f"sensing_users needs {networks} rows of {count} counts."]}
                )
        return attrs


class ExperimentRunSerializer(serializers.ModelSerializer):
    """Stored experiment with its scenario and CSV output."""

    class Meta:
        model = ExperimentRun
        fields = ("id", "created_at", "scenario_name", "mode", "scenario", "csv", "row_count")
        read_only_fields = ("id", "created_at")


class MetricRowSerializer(serializers.Serializer):
    """One replica, aggregate or error row of an experiment."""
    sweep_key = serializers.CharField(allow_blank=True)
    sweep_value = serializers.CharField(allow_blank=True)
    scheme = serializers.CharField()
    seed = serializers.CharField(allow_blank=True, help_text="Empty on aggregate rows")
    row_type = serializers.ChoiceField(choices=["replica", "aggregate", "error"])
    mean_psnr_db = serializers.CharField(allow_blank=True)
    utility = serializers.CharField(allow_blank=True)
    collision_rate = serializers.CharField(allow_blank=True)
    iterations = serializers.CharField(allow_blank=True, help_text="Dual iterations to converge (multihop)")
    ci_half_width = serializers.CharField(allow_blank=True, help_text="95% Student-t half-width of mean_psnr_db")
    entity_psnr = serializers.CharField(allow_blank=True, help_text="Per-group or per-session PSNR, ';'-separated")
    trajectory_hash = serializers.CharField(allow_blank=True)
    detail = serializers.CharField(allow_blank=True)


class SimulateResponseSerializer(serializers.Serializer):
    columns = serializers.ListField(child=serializers.CharField())
    rows = serializers.ListField(child=MetricRowSerializer())
    csv = serializers.CharField(help_text="The same rows as CSV text")
    run = ExperimentRunSerializer(required=False, help_text="Only present with ?save=1")
