# wasserstein_drcc/loaders.py
import logging
from pathlib import Path

import numpy as np

from drcc_gnep.exceptions import ProblemFormatError

from .ambiguity import SampleSet

logger = logging.getLogger(__name__)


def parse_samples(text, path=None):
    """Parse one sample per line, whitespace separated; '#' starts a comment."""
    rows = []
    width = None
    for line_number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        try:
            values = [float(token) for token in line.split()]
        except ValueError as exc:
            raise ProblemFormatError(f'not a number ({exc})', path=path, line=line_number) from exc
        if not all(np.isfinite(values)):
            raise ProblemFormatError('samples must be finite', path=path, line=line_number)
        if width is None:
            width = len(values)
        elif len(values) != width:
            raise ProblemFormatError(
                f'expected {width} values, found {len(values)}', path=path, line=line_number
            )
        rows.append(values)
    if not rows:
        raise ProblemFormatError('no samples found', path=path)
    return SampleSet(np.array(rows, dtype=float))


def load_samples(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ProblemFormatError(f'cannot read samples: {exc.strerror}', path=path) from exc
    samples = parse_samples(text, path=path)
    logger.info(f'Loaded {samples.K} samples of dimension {samples.dim} from {path}')
    return samples


def format_samples(samples):
    return ''.join(' '.join(f'{value:.17g}' for value in row) + '\n' for row in samples.samples)
