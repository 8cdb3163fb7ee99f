"""Feed a recorded event stream through the localization pipeline."""

from __future__ import annotations

from ..config import PipelineConfig
from ..errors import LocalizationError
from ..map_store import GlobalMap
from ..pipeline import Pipeline


class ReplayError(LocalizationError):
    def __init__(self, index: int, t: float, cause: Exception):
        self.index = index
        self.t = t
        self.cause = cause
        super().__init__(f"event {index} (t={t}): {type(cause).__name__}: {cause}")


def replay(events, gmap: GlobalMap | None, config: PipelineConfig | None = None, pipeline: Pipeline | None = None):
    """Run every event through a fresh pipeline; return the emitted odometry.

    Pass ``pipeline`` to inspect its statistics afterwards.
    """
    pipe = pipeline if pipeline is not None else Pipeline(gmap, config)
    out = []
    for k, ev in enumerate(events):
        try:
            sample = pipe.step(ev)
        except LocalizationError as exc:
            raise ReplayError(k, ev.t, exc) from exc
        if sample is not None:
            out.append(sample)
    return out
