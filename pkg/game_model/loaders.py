"""
Reading and writing game files.

The JSON schema is described in README.md. Parse failures are
reported as ProblemFormatError with the line (JSON syntax) or the dotted field
path (schema and data checks).
"""

import json
import logging
from pathlib import Path

import numpy as np

from drcc_gnep.exceptions import GnepError, ProblemFormatError
from wasserstein_drcc.ambiguity import DrccSpec, SampleSet
from wasserstein_drcc.loaders import load_samples

from .problem import AgentSpec, GnepProblem
from .serializers import PointSerializer, ProblemSerializer

logger = logging.getLogger(__name__)


def flatten_errors(errors, prefix=''):
    """Turn nested DRF error structures into (dotted.path, message) pairs."""
    if isinstance(errors, dict):
        pairs = []
        for key, value in errors.items():
            if key == 'non_field_errors':
                path = prefix
            elif isinstance(key, int):
                path = f'{prefix}[{key}]'
            else:
                path = f'{prefix}.{key}' if prefix else str(key)
            pairs.extend(flatten_errors(value, path))
        return pairs
    if isinstance(errors, list):
        if errors and all(not isinstance(item, (dict, list)) for item in errors):
            return [(prefix, str(item)) for item in errors]
        pairs = []
        for index, item in enumerate(errors):
            if item:
                pairs.extend(flatten_errors(item, f'{prefix}[{index}]'))
        return pairs
    return [(prefix, str(errors))]


def _decode(text, path):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProblemFormatError(f'invalid JSON: {exc.msg} (column {exc.colno})', path=path, line=exc.lineno) from exc


def _read(path):
    path = Path(path)
    try:
        return path.read_text()
    except OSError as exc:
        raise ProblemFormatError(f'cannot read file: {exc.strerror}', path=path) from exc


def build_problem(data, samples=None, path=None):
    """
    Validate decoded JSON and construct the GnepProblem.

    Args:
        data: decoded problem document
        samples: SampleSet overriding drcc.samples
        path: file name used in diagnostics

    Returns:
        GnepProblem
    """
    serializer = ProblemSerializer(data=data)
    if not serializer.is_valid():
        field, message = flatten_errors(serializer.errors)[0]
        raise ProblemFormatError(message, path=path, field=field)
    validated = serializer.validated_data

    agents = []
    for index, agent in enumerate(validated['agents']):
        try:
            agents.append(AgentSpec(
                Q=agent['Q'], p0=agent['p0'], P=agent['P'], r0=agent['r0'], rho=agent['rho'],
                H=agent['H'], g=agent['g'], lower=agent['lower'], upper=agent['upper'],
            ))
        except GnepError as exc:
            field = getattr(exc, 'field', None) or ''
            raise ProblemFormatError(str(exc), path=path, field=f'agents[{index}].{field}'.rstrip('.')) from exc

    drcc = validated['drcc']
    if samples is None:
        if not drcc.get('samples'):
            raise ProblemFormatError('no samples given in the file or on the command line', path=path,
                                     field='drcc.samples')
        samples = SampleSet(np.array(drcc['samples'], dtype=float))
    try:
        spec = DrccSpec(
            A=drcc['A'], beta=drcc['beta'], b=drcc['b'], epsilon=drcc['epsilon'],
            theta=drcc['theta'], norm=drcc['norm'], samples=samples,
        )
        problem = GnepProblem(agents, spec, name=validated.get('name', ''))
    except GnepError as exc:
        field = getattr(exc, 'field', None) or ''
        raise ProblemFormatError(str(exc), path=path, field=f'drcc.{field}'.rstrip('.')) from exc
    return problem


def parse_problem(text, samples=None, path=None):
    return build_problem(_decode(text, path), samples=samples, path=path)


def load_problem(path, samples_path=None):
    samples = load_samples(samples_path) if samples_path else None
    problem = parse_problem(_read(path), samples=samples, path=path)
    logger.info(
        f'Loaded problem {problem.name or Path(path).name}: {problem.num_agents} agents, '
        f'n={problem.n}, m={problem.drcc.m}, K={problem.drcc.K}'
    )
    return problem


def _norm_label(order):
    return 'inf' if np.isinf(order) else str(int(order))


def dump_problem(problem):
    """Problem as a JSON-ready dict in the load_problem schema."""
    drcc = problem.drcc
    return {
        'name': problem.name,
        'agents': [
            {
                'Q': agent.Q.tolist(),
                'p0': agent.p0.tolist(),
                'P': agent.P.tolist(),
                'rho': agent.rho.tolist(),
                'r0': agent.r0,
                'H': agent.H.tolist(),
                'g': agent.g.tolist(),
                'lower': agent.lower.tolist(),
                'upper': agent.upper.tolist(),
            }
            for agent in problem.agents
        ],
        'drcc': {
            'A': drcc.A.tolist(),
            'beta': drcc.beta.tolist(),
            'b': drcc.b.tolist(),
            'epsilon': drcc.epsilon,
            'theta': drcc.theta,
            'norm': _norm_label(drcc.norm),
            'samples': drcc.samples.samples.tolist(),
        },
    }


def write_problem(problem, path):
    Path(path).write_text(json.dumps(dump_problem(problem), indent=2) + '\n')
    logger.info(f'Wrote problem to {path}')


def load_point(path, problem):
    """
    Read a candidate profile: either a bare JSON list or {"x": [...]}.

    Returns:
        StrategyProfile of the given problem
    """
    data = _decode(_read(path), path)
    if isinstance(data, list):
        data = {'x': data}
    serializer = PointSerializer(data=data)
    if not serializer.is_valid():
        field, message = flatten_errors(serializer.errors)[0]
        raise ProblemFormatError(message, path=path, field=field)
    x = serializer.validated_data['x']
    if len(x) != problem.n:
        raise ProblemFormatError(f'point has {len(x)} entries, the game has {problem.n} variables',
                                 path=path, field='x')
    return problem.profile(np.array(x, dtype=float))
