# game_model/serializers.py
from rest_framework import serializers


class VectorField(serializers.ListField):
    """List of finite floats"""
    child = serializers.FloatField()


class MatrixField(serializers.ListField):
    """Row-major matrix given as a list of equal-length rows"""
    child = VectorField(allow_empty=True)

    def to_internal_value(self, data):
        rows = super().to_internal_value(data)
        widths = {len(row) for row in rows}
        if len(widths) > 1:
            raise serializers.ValidationError('rows must all have the same length')
        return rows


def _width(matrix):
    return len(matrix[0]) if matrix else 0


class AgentSerializer(serializers.Serializer):
    """One agent: quadratic cost and local polyhedral set"""
    Q = MatrixField()
    p0 = VectorField()
    P = MatrixField(required=False, default=list)
    rho = VectorField(required=False, default=list, allow_empty=True)
    r0 = serializers.FloatField(required=False, default=0.0)
    H = MatrixField(required=False, default=list, allow_empty=True)
    g = VectorField(required=False, default=list, allow_empty=True)
    lower = VectorField()
    upper = VectorField()

    def validate(self, data):
        """Check block sizes within the agent"""
        dim = len(data['Q'])
        if _width(data['Q']) != dim:
            raise serializers.ValidationError({'Q': 'Q must be a square matrix'})
        for name in ('p0', 'lower', 'upper'):
            if len(data[name]) != dim:
                raise serializers.ValidationError({name: f'expected {dim} entries, got {len(data[name])}'})
        if data['P'] and len(data['P']) != dim:
            raise serializers.ValidationError({'P': f'expected {dim} rows, got {len(data["P"])}'})
        if data['P'] and _width(data['P']) != len(data['rho']):
            raise serializers.ValidationError({'rho': 'rho length must equal the column count of P'})
        if data['H'] and _width(data['H']) != dim:
            raise serializers.ValidationError({'H': f'H rows must have {dim} entries'})
        if len(data['H']) != len(data['g']):
            raise serializers.ValidationError({'g': 'g needs one entry per row of H'})
        if any(lo > hi for lo, hi in zip(data['lower'], data['upper'])):
            raise serializers.ValidationError({'lower': 'lower bound exceeds upper bound'})
        return data


class DrccSerializer(serializers.Serializer):
    """Shared chance constraint data, samples optional when given separately"""
    A = MatrixField()
    beta = MatrixField()
    b = VectorField()
    epsilon = serializers.FloatField()
    theta = serializers.FloatField()
    norm = serializers.CharField(required=False, default='2')
    samples = MatrixField(required=False)

    def validate_epsilon(self, value):
        if not 0.0 < value < 1.0:
            raise serializers.ValidationError('epsilon must lie in (0, 1)')
        return value

    def validate_theta(self, value):
        if value <= 0.0:
            raise serializers.ValidationError('theta must be positive')
        return value

    def validate_norm(self, value):
        if value.strip().lower() not in ('1', '2', 'inf', 'infinity', '∞', '1.0', '2.0'):
            raise serializers.ValidationError('norm must be 1, 2 or inf')
        return value

    def validate(self, data):
        rows = len(data['A'])
        if len(data['beta']) != rows or len(data['b']) != rows:
            raise serializers.ValidationError({'b': 'A, beta and b need the same number of rows'})
        if data.get('samples') and _width(data['samples']) != _width(data['beta']):
            raise serializers.ValidationError({'samples': 'sample dimension must equal the column count of beta'})
        return data


class ProblemSerializer(serializers.Serializer):
    """Whole game file"""
    name = serializers.CharField(required=False, default='', allow_blank=True)
    agents = AgentSerializer(many=True)
    drcc = DrccSerializer()

    def validate_agents(self, value):
        if not value:
            raise serializers.ValidationError('at least one agent is required')
        return value

    def validate(self, data):
        n = sum(len(agent['Q']) for agent in data['agents'])
        if _width(data['drcc']['A']) != n:
            raise serializers.ValidationError({'drcc': f'A must have {n} columns (one per strategy variable)'})
        for agent in data['agents']:
            rivals = n - len(agent['Q'])
            if agent['P'] and _width(agent['P']) != rivals:
                raise serializers.ValidationError({'agents': f'P must have {rivals} columns'})
        return data


class PointSerializer(serializers.Serializer):
    """Candidate profile for certification"""
    x = VectorField()
