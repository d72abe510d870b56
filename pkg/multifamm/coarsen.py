"""
Greedy trajectory coarsening

Repeatedly drops the interior point that is best approximated by the segment
between its current neighbours, tracking the cumulative squared-distance loss.
"""

import logging
from dataclasses import dataclass, field, replace
from heapq import heapify, heappop, heappush
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError
from .fundata import FunCurve, FunDataset, curves_from_frame

logger = logging.getLogger(__name__)

SAME_T_TOL = 1e-12


@dataclass
class Polyline:
    t: np.ndarray
    y: np.ndarray          # (m, k), k = 2 for planar trajectories

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.y.ndim == 1:
            self.y = self.y[:, None]
        if len(self.t) < 2 or len(self.t) != len(self.y):
            raise DataError(f"polyline needs >= 2 points with matching t/y (got {len(self.t)}, {len(self.y)})")
        if np.any(np.diff(self.t) <= 0):
            raise DataError("polyline t must be strictly increasing")

    def __len__(self) -> int:
        return len(self.t)


@dataclass
class StopRule:
    """Any combination; coarsening stops at the first rule that fires"""
    target_size: Optional[int] = None
    relative_threshold: Optional[float] = None     # R*
    absolute_threshold: Optional[float] = None     # S*

    def __post_init__(self):
        if self.target_size is None and self.relative_threshold is None \
                and self.absolute_threshold is None:
            raise ConfigError("stop rule needs target_size, relative or absolute threshold")
        if self.target_size is not None and self.target_size < 2:
            raise ConfigError(f"target size must be >= 2, got {self.target_size}")
        for name in ("relative_threshold", "absolute_threshold"):
            value = getattr(self, name)
            if value is not None and value < 0:
                raise ConfigError(f"{name} must be >= 0")


@dataclass
class CoarsenResult:
    kept: np.ndarray                                   # sorted, always contains first and last
    removed: List[int] = field(default_factory=list)   # removal order
    deltas: List[float] = field(default_factory=list)  # loss of each removal
    cumulative: List[float] = field(default_factory=list)
    relative: List[float] = field(default_factory=list)
    mean_ref_loss: float = 0.0
    stop_reason: str = ""

    @property
    def total_loss(self) -> float:
        return self.cumulative[-1] if self.cumulative else 0.0

    def to_dict(self) -> Dict:
        return {
            "kept": self.kept.tolist(),
            "removed": list(self.removed),
            "deltas": list(self.deltas),
            "cumulative": list(self.cumulative),
            "relative": list(self.relative),
            "mean_ref_loss": self.mean_ref_loss,
            "stop_reason": self.stop_reason,
        }


def point_segment_sqdist(p, a, b) -> float:
    """Squared distance of p to the segment [a, b]"""
    p, a, b = (np.asarray(v, dtype=float) for v in (p, a, b))
    yp = p - a
    seg = b - a
    length = float(np.sqrt(seg @ seg))
    if length == 0.0:
        return float(yp @ yp)
    u = seg / length
    proj = float(yp @ u)
    if proj <= 0.0:
        return float(yp @ yp)
    if proj <= length:
        perp = yp - proj * u
        return float(perp @ perp)
    rest = yp - seg
    return float(rest @ rest)


def mean_reference_loss(pl: Polyline) -> float:
    """Mean squared distance of the interior points to the first-last segment"""
    if len(pl) < 3:
        raise DataError("mean reference loss needs at least 3 points")
    first, last = pl.y[0], pl.y[-1]
    return float(np.mean([point_segment_sqdist(pl.y[i], first, last) for i in range(1, len(pl) - 1)]))


def coarsen(pl: Polyline, stop: StopRule) -> CoarsenResult:
    """
    Greedy coarsening with neighbour-only updates.

    The interior point with the smallest loss is removed (ties: smallest
    index); only its two neighbours are re-scored. A threshold rule is checked
    before committing the removal that would exceed it. A zero threshold
    removes nothing; with a zero reference loss the relative rule only fires
    at zero.
    """
    m = len(pl)
    if stop.target_size is not None and stop.target_size > m:
        raise ConfigError(f"target size {stop.target_size} exceeds {m} points")

    ref = mean_reference_loss(pl) if m >= 3 else 0.0
    prev = list(range(-1, m - 1))
    nxt = list(range(1, m + 1))
    alive = [True] * m
    version = [0] * m

    def score(i: int) -> float:
        return point_segment_sqdist(pl.y[i], pl.y[prev[i]], pl.y[nxt[i]])

    heap = [(score(i), i, 0) for i in range(1, m - 1)]
    heapify(heap)

    result = CoarsenResult(kept=np.arange(m), mean_ref_loss=ref)
    size, total = m, 0.0
    reason = "exhausted"
    while True:
        if stop.target_size is not None and size <= stop.target_size:
            reason = "target_size"
            break
        while heap and (not alive[heap[0][1]] or heap[0][2] != version[heap[0][1]]):
            heappop(heap)
        if not heap:
            break

        delta, i, _ = heap[0]
        new_total = total + delta
        # a zero threshold keeps every point, zero-loss removals included
        if stop.absolute_threshold is not None \
                and (stop.absolute_threshold == 0 or new_total > stop.absolute_threshold):
            reason = "absolute_threshold"
            break
        if stop.relative_threshold is not None and (
                stop.relative_threshold == 0 or (ref > 0 and new_total / ref > stop.relative_threshold)):
            reason = "relative_threshold"
            break

        heappop(heap)
        alive[i] = False
        left, right = prev[i], nxt[i]
        nxt[left], prev[right] = right, left
        size -= 1
        total = new_total

        result.removed.append(i)
        result.deltas.append(delta)
        result.cumulative.append(total)
        result.relative.append(total / ref if ref > 0 else 0.0)

        for j in (left, right):
            if 0 < j < m - 1:
                version[j] += 1
                heappush(heap, (score(j), j, version[j]))

    result.kept = np.flatnonzero(alive)
    result.stop_reason = reason
    return result


def coarsen_frame(points: pd.DataFrame, lead_dims: Sequence[str], stop: StopRule
                  ) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """
    Coarsen every curve of a long point table on its lead dimensions.

    The lead dimensions (e.g. the x/y coordinates of a hand) must share their
    time points within a curve; time points removed there are dropped on all
    other dimensions too.

    Returns:
        (kept rows, per-curve summary)
    """
    missing = [c for c in ("curve_id", "dim", "t", "y") if c not in points.columns]
    if missing:
        raise DataError(f"point table lacks columns {missing}")
    lead_dims = list(lead_dims)
    if not lead_dims:
        raise ConfigError("coarsening needs at least one lead dimension")
    unknown = [d for d in lead_dims if d not in set(points["dim"])]
    if unknown:
        raise DataError(f"lead dimensions not in data: {unknown}")

    kept_parts, summary = [], []
    for cid, rows in points.groupby("curve_id", sort=False):
        lead = [rows[rows["dim"] == d].sort_values("t") for d in lead_dims]
        t = lead[0]["t"].to_numpy(dtype=float)
        for d, part in zip(lead_dims[1:], lead[1:]):
            if not np.array_equal(part["t"].to_numpy(dtype=float), t):
                raise DataError(f"curve '{cid}': lead dimension '{d}' has different time points")

        if len(t) < 3:
            kept_parts.append(rows)
            summary.append({"curve_id": cid, "n_before": len(t), "n_after": len(t),
                            "loss": 0.0, "relative_loss": 0.0, "stop_reason": "too_short"})
            continue

        pl = Polyline(t, np.column_stack([p["y"].to_numpy(dtype=float) for p in lead]))
        res = coarsen(pl, stop)
        dropped_t = np.delete(t, res.kept)
        rt = rows["t"].to_numpy(dtype=float)
        drop = np.zeros(len(rows), dtype=bool)
        if dropped_t.size:
            drop = np.min(np.abs(rt[:, None] - dropped_t[None, :]), axis=1) <= SAME_T_TOL
        kept_parts.append(rows[~drop])
        summary.append({
            "curve_id": cid,
            "n_before": len(t),
            "n_after": len(res.kept),
            "loss": res.total_loss,
            "relative_loss": res.relative[-1] if res.relative else 0.0,
            "stop_reason": res.stop_reason,
        })

    kept = pd.concat(kept_parts, ignore_index=True) if kept_parts else points.iloc[:0]
    report = pd.DataFrame(summary, columns=["curve_id", "n_before", "n_after", "loss",
                                            "relative_loss", "stop_reason"])
    logger.info(f"Coarsened {len(report)} curves: {len(points)} -> {len(kept)} rows")
    return kept, report


def coarsen_dataset(ds: FunDataset, lead_dims: Sequence[str], stop: StopRule
                    ) -> Tuple[FunDataset, pd.DataFrame]:
    """coarsen_frame on a dataset; curve order, covariates and labels are kept"""
    kept, report = coarsen_frame(ds.long_frame[["curve_id", "dim", "t", "y"]], lead_dims, stop)
    points = dict(curves_from_frame(kept))
    curves = tuple(
        FunCurve(c.id, points[c.id], dict(c.covariates), dict(c.group_labels))
        for c in ds.curves
    )
    return replace(ds, curves=curves), report
