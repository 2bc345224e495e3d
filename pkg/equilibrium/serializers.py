# equilibrium/serializers.py
import json
import math

from rest_framework import serializers


def significant(value, digits=9):
    """Round a float to the given number of significant digits; non-finite values become None."""
    value = float(value)
    if not math.isfinite(value):
        return None
    return float(f'{value:.{digits}g}')


class SignificantFloatField(serializers.FloatField):
    """Float written with 9 significant digits"""

    def to_representation(self, value):
        return significant(value)


class SignificantVectorField(serializers.ListField):
    child = SignificantFloatField()

    def to_representation(self, data):
        return [self.child.to_representation(item) for item in list(data)]


class AuxiliarySerializer(serializers.Serializer):
    """Auxiliary agent decision (tau', s', q)"""
    tau_prime = SignificantFloatField()
    s_prime = SignificantVectorField()
    q = serializers.SerializerMethodField()

    def get_q(self, obj):
        return [int(round(value)) for value in obj.q]


class NodeRecordSerializer(serializers.Serializer):
    q = serializers.ListField(child=serializers.IntegerField())
    feasible = serializers.BooleanField()
    best_value = SignificantFloatField(allow_null=True)
    starts_used = serializers.IntegerField()


class CertificationReportSerializer(serializers.Serializer):
    """Feasibility breakdown and per-agent gaps of a checked point"""
    verdict = serializers.BooleanField()
    reason = serializers.CharField()
    drcc_mass = SignificantFloatField()
    transport_budget = SignificantFloatField()
    drcc_feasible = serializers.BooleanField()
    local_violations = serializers.SerializerMethodField()
    residual = SignificantFloatField(allow_null=True)
    gaps = SignificantVectorField()

    def get_local_violations(self, obj):
        return [
            [{'row': item['row'], 'amount': significant(item['amount'])} for item in agent]
            for agent in obj.local_violations
        ]


class EquilibriumResultSerializer(serializers.Serializer):
    """
    Solver report {status, residual, x, aux, per_node[], wall_ms}.

    wall_ms is only written when the serializer context has timings=True, so
    repeated runs produce identical files.
    """
    status = serializers.SerializerMethodField()
    problem_class = serializers.CharField()
    residual = SignificantFloatField()
    x = SignificantVectorField(source='x_star.vector')
    aux = AuxiliarySerializer(source='aux_star')
    per_node = NodeRecordSerializer(source='nodes', many=True)
    certification = CertificationReportSerializer(allow_null=True)
    wall_ms = SignificantFloatField()

    def get_status(self, obj):
        return obj.status.value

    def to_representation(self, instance):
        data = super().to_representation(instance)
        if not self.context.get('timings', False):
            data.pop('wall_ms')
        return data


def render_json(data):
    """Stable JSON text for report files."""
    return json.dumps(data, indent=2) + '\n'
