"""Learning-free baseline: replicate road speed to lanes, split road flow
equally among lanes. Its output satisfies the aggregation constraints by
construction."""

from __future__ import annotations

import numpy as np

from .data import TrafficSeries
from .errors import ContractError
from .graphs import LaneNetwork


def physics_lane_values(road_values: np.ndarray, lane_net: LaneNetwork,
                        kind: str) -> np.ndarray:
    """Map road states [..., I] to lane states [..., N]."""
    road_values = np.asarray(road_values, dtype=np.float64)
    spread = road_values[..., lane_net.parent_road]
    if kind == "speed":
        return spread
    if kind == "flow":
        return spread / lane_net.lane_counts[lane_net.parent_road]
    raise ContractError(f"unknown traffic kind {kind!r}")


def physics_infer(road_series: TrafficSeries, lane_net: LaneNetwork,
                  kind: str | None = None) -> TrafficSeries:
    """Baseline lane series from a road series."""
    if road_series.level != "road":
        raise ContractError("physics baseline needs a road-level series")
    if kind is not None and kind != road_series.kind:
        raise ContractError(
            f"requested kind {kind!r} but series is {road_series.kind!r}")
    values = physics_lane_values(road_series.values, lane_net, road_series.kind)
    return TrafficSeries(values=values, kind=road_series.kind,
                         units=road_series.units,
                         interval_minutes=road_series.interval_minutes, level="lane")
