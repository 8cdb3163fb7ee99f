"""Absolute trajectory error between an estimate and ground truth."""

from __future__ import annotations

import math

import numpy as np

from ..errors import NoAssociations


def associate(est_times, truth_times, max_dt: float = 0.02) -> list[tuple[int, int]]:
    """Pair each estimate with the nearest truth timestamp within ``max_dt``."""
    truth_times = np.asarray(truth_times, dtype=float)
    if len(truth_times) == 0:
        return []
    order = np.argsort(truth_times, kind="stable")
    sorted_t = truth_times[order]
    pairs = []
    for i, t in enumerate(est_times):
        k = int(np.searchsorted(sorted_t, t))
        best = None
        for j in (k - 1, k):
            if 0 <= j < len(sorted_t):
                d = abs(sorted_t[j] - t)
                if d <= max_dt and (best is None or d < best[0]):
                    best = (d, j)
        if best is not None:
            pairs.append((i, int(order[best[1]])))
    return pairs


def compute_ate_rmse(estimate, truth, max_dt: float = 0.02, xy_only: bool = False) -> float:
    """Root-mean-square translation error over timestamp-associated pairs.

    No alignment is applied: both trajectories are expected in the map frame.
    """
    pairs = associate([s.t for s in estimate], [s.t for s in truth], max_dt)
    if not pairs:
        raise NoAssociations(f"no estimate within {max_dt} s of a truth timestamp")
    dims = 2 if xy_only else 3
    sq = 0.0
    for i, j in pairs:
        d = estimate[i].pose.translation[:dims] - truth[j].pose.translation[:dims]
        sq += float(d @ d)
    return math.sqrt(sq / len(pairs))
