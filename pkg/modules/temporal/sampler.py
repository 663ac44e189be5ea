from typing import List, Tuple

import numpy as np

from core.config import SamplerSpec
from core.errors import SpecError
from core.models import SampleMode


def segment_spans(total_frames: int, num_segments: int) -> List[Tuple[int, int]]:
    """Equal [lo, hi) spans; the first ``total % segments`` spans get one extra frame."""
    base, extra = divmod(total_frames, num_segments)
    spans = []
    lo = 0
    for k in range(num_segments):
        hi = lo + base + (1 if k < extra else 0)
        spans.append((lo, hi))
        lo = hi
    return spans


def _repeat_short(total_frames: int, num_segments: int) -> List[int]:
    # each frame appears num_segments // total times; the trailing frames take the remainder
    base, extra = divmod(num_segments, total_frames)
    indices = []
    for f in range(total_frames):
        indices.extend([f] * (base + (1 if f >= total_frames - extra else 0)))
    return indices


def segment_sample(spec: SamplerSpec) -> List[int]:
    """Sparse segment sampling: one frame per equal-length span of the video.

    ``eval_center`` takes ``(lo + hi) // 2`` of each span, ``train_random``
    draws uniformly inside each span from a generator seeded by ``spec.seed``.
    """
    if spec.num_segments < 1:
        raise SpecError("num_segments must be >= 1")
    if spec.total_frames < spec.num_segments:
        return _repeat_short(spec.total_frames, spec.num_segments)

    spans = segment_spans(spec.total_frames, spec.num_segments)
    if spec.mode == SampleMode.EVAL_CENTER:
        return [(lo + hi) // 2 for lo, hi in spans]
    rng = np.random.default_rng(spec.seed)
    return [int(rng.integers(lo, hi)) for lo, hi in spans]
