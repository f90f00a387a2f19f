"""Datasets: synthetic generation, CSV ingestion, windowing, normalization.

Synthetic ground truth obeys the aggregation constraints exactly because
the road series is derived from the (already clipped) lane series. Lane
heterogeneity comes from persistent per-lane biases; the diurnal base and
the AR(1) disturbance are shared by all lanes of a road, so with zero
bias strength every lane equals its road and the physics baseline is
exact.

CSV schema: header ``timestamp,road_id,lane_id,value`` with ISO-8601
timestamps on a fixed interval. Missing cells are filled by carrying the
last observation forward (leading gaps borrow the first observation) and
the fill count is reported.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from .diffusion import aggregate_lanes
from .errors import ConfigError, ContractError, DataError, SchemaError
from .graphs import LaneNetwork, RoadNetwork, build_lane_network, load_graph_json, save_graph_json

KINDS = ("speed", "flow")
DEFAULT_UNITS = {"speed": "miles/hour", "flow": "veh/5-min"}
CSV_HEADER = ["timestamp", "road_id", "lane_id", "value"]


@dataclass
class TrafficSeries:
    """A [T x nodes] state matrix tagged with kind, units, and level."""

    values: np.ndarray
    kind: str
    units: str
    interval_minutes: float
    level: str                  # "road" | "lane"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.kind not in KINDS:
            raise ContractError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.level not in ("road", "lane"):
            raise ContractError(f"level must be road or lane, got {self.level!r}")
        if self.values.ndim != 2:
            raise DataError(f"series must be [T, nodes], got shape {self.values.shape}")
        if not np.isfinite(self.values).all():
            raise DataError("series contains NaN or Inf")
        if (self.values < 0).any():
            raise DataError(f"{self.kind} values must be non-negative")

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.values.shape[1]


def check_kind(series: TrafficSeries, kind: str) -> None:
    if series.kind != kind:
        raise ContractError(f"series is tagged {series.kind!r}, expected {kind!r}")


def derive_road_series(lane_series: TrafficSeries, lane_net: LaneNetwork) -> TrafficSeries:
    """Aggregate lanes to roads: mean for speed, sum for flow."""
    if lane_series.level != "lane":
        raise ContractError("can only aggregate a lane-level series")
    road_values = aggregate_lanes(lane_series.values, lane_net, lane_series.kind)
    return TrafficSeries(values=road_values, kind=lane_series.kind,
                         units=lane_series.units,
                         interval_minutes=lane_series.interval_minutes, level="road")


def generate_synthetic(lane_net: LaneNetwork, t_total: int, kind: str = "speed",
                       seed: int = 0, lane_bias_strength: float = 4.0,
                       noise_std: float = 2.0, base_level: float | None = None,
                       slow_amp: float | None = None, fast_amp: float | None = None,
                       slow_period: int = 288, fast_period: int = 36,
                       ar_coeff: float = 0.6,
                       interval_minutes: float = 5.0) -> tuple[TrafficSeries, TrafficSeries]:
    """Synthetic lane series plus its exactly consistent road series."""
    if kind not in KINDS:
        raise ContractError(f"kind must be one of {KINDS}, got {kind!r}")
    rng = np.random.default_rng(seed)
    n_roads = len(lane_net.lane_counts)
    n_lanes = lane_net.lane_count
    if base_level is None:
        base_level = 60.0 if kind == "speed" else 30.0
    if slow_amp is None:
        slow_amp = 6.0 if kind == "speed" else 8.0
    if fast_amp is None:
        fast_amp = 3.0 if kind == "speed" else 4.0

    t = np.arange(t_total)[:, None]
    levels = base_level * (1.0 + 0.08 * rng.standard_normal(n_roads))
    slow = slow_amp * (0.8 + 0.4 * rng.random(n_roads))
    fast = fast_amp * (0.8 + 0.4 * rng.random(n_roads))
    phi = rng.uniform(0.0, 2.0 * np.pi, n_roads)
    psi = rng.uniform(0.0, 2.0 * np.pi, n_roads)
    base = (levels[None, :]
            + slow[None, :] * np.sin(2.0 * np.pi * t / slow_period + phi[None, :])
            + fast[None, :] * np.sin(2.0 * np.pi * t / fast_period + psi[None, :]))

    # AR(1) disturbance per road, shared by that road's lanes
    noise = np.zeros((t_total, n_roads))
    w = rng.standard_normal((t_total, n_roads))
    noise[0] = noise_std * w[0]
    damp = noise_std * np.sqrt(1.0 - ar_coeff ** 2)
    for k in range(1, t_total):
        noise[k] = ar_coeff * noise[k - 1] + damp * w[k]

    bias = lane_bias_strength * rng.standard_normal(n_lanes)
    road_part = (base + noise)[:, lane_net.parent_road]
    lane_values = np.clip(road_part + bias[None, :], 0.0, None)

    lane_series = TrafficSeries(values=lane_values, kind=kind,
                                units=DEFAULT_UNITS[kind],
                                interval_minutes=interval_minutes, level="lane")
    return lane_series, derive_road_series(lane_series, lane_net)


def write_csv(lane_series: TrafficSeries, lane_net: LaneNetwork, path: str | Path,
              start: str = "2017-02-05T00:00:00") -> None:
    """Emit the lane series in the ingestion schema; floats survive a round trip."""
    t0 = datetime.fromisoformat(start)
    delta = timedelta(minutes=lane_series.interval_minutes)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for step in range(lane_series.n_steps):
            stamp = (t0 + step * delta).isoformat()
            for flat in range(lane_net.lane_count):
                road, lane = lane_net.flat_to_pair(flat)
                writer.writerow([stamp, road, lane,
                                 repr(float(lane_series.values[step, flat]))])


def load_csv(path: str | Path, lane_net: LaneNetwork, kind: str,
             units: str | None = None) -> tuple[TrafficSeries, TrafficSeries, int]:
    """Read lane CSV into a dense [T, N] matrix plus the derived road series.

    Returns (lane series, road series, filled-gap count).
    """
    if kind not in KINDS:
        raise ContractError(f"kind must be one of {KINDS}, got {kind!r}")
    path = Path(path)
    stamp_index: dict[str, int] = {}
    stamps: list[datetime] = []
    cells: list[tuple[int, int, float]] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != CSV_HEADER:
            raise SchemaError(f"{path}: expected header {','.join(CSV_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise SchemaError(f"{path}:{lineno}: expected 4 columns, got {len(row)}")
            raw_stamp, raw_road, raw_lane, raw_value = row
            try:
                stamp = datetime.fromisoformat(raw_stamp.strip())
            except ValueError as exc:
                raise SchemaError(f"{path}:{lineno}: bad timestamp {raw_stamp!r}") from exc
            try:
                flat = lane_net.pair_to_flat(int(raw_road), int(raw_lane))
            except (IndexError, ValueError) as exc:
                raise SchemaError(
                    f"{path}:{lineno}: unknown lane ({raw_road}, {raw_lane})") from exc
            try:
                value = float(raw_value)
            except ValueError as exc:
                raise SchemaError(f"{path}:{lineno}: bad value {raw_value!r}") from exc
            key = stamp.isoformat()
            if key not in stamp_index:
                if stamps and stamp <= stamps[-1]:
                    raise DataError(f"{path}:{lineno}: timestamps are not increasing")
                stamp_index[key] = len(stamps)
                stamps.append(stamp)
            cells.append((stamp_index[key], flat, value))

    if not stamps:
        raise DataError(f"{path}: no data rows")
    if len(stamps) >= 2:
        deltas = {(b - a) for a, b in zip(stamps, stamps[1:])}
        if len(deltas) != 1:
            raise DataError(f"{path}: timestamps are not on a fixed interval")
        interval = deltas.pop().total_seconds() / 60.0
    else:
        interval = 5.0

    n_steps = len(stamps)
    matrix = np.full((n_steps, lane_net.lane_count), np.nan)
    for step, flat, value in cells:
        matrix[step, flat] = value

    never_seen = np.flatnonzero(np.isnan(matrix).all(axis=0))
    if never_seen.size:
        raise SchemaError(f"{path}: lane {int(never_seen[0])} has no observations")

    gaps = int(np.isnan(matrix).sum())
    for col in range(matrix.shape[1]):
        column = matrix[:, col]
        missing = np.isnan(column)
        if not missing.any():
            continue
        first = int(np.flatnonzero(~missing)[0])
        column[:first] = column[first]
        for step in range(first + 1, n_steps):
            if np.isnan(column[step]):
                column[step] = column[step - 1]

    if not np.isfinite(matrix).all():
        raise DataError(f"{path}: non-finite values after gap filling")
    if (matrix < 0).any():
        raise DataError(f"{path}: negative {kind} values")

    lane_series = TrafficSeries(values=matrix, kind=kind,
                                units=units or DEFAULT_UNITS[kind],
                                interval_minutes=interval, level="lane")
    return lane_series, derive_road_series(lane_series, lane_net), gaps


@dataclass
class WindowedSplit:
    name: str
    road: np.ndarray       # [n, T, I]
    lanes: np.ndarray      # [n, T, N]
    t_index: np.ndarray    # [n, T] absolute timestamp indices

    @property
    def n_windows(self) -> int:
        return self.road.shape[0]


@dataclass
class Normalizer:
    """Per-node z-score statistics taken from the training block only."""

    road_mean: np.ndarray
    road_std: np.ndarray
    lane_mean: np.ndarray
    lane_std: np.ndarray
    source: str = "train"
    clamped_roads: list[int] = field(default_factory=list)
    clamped_lanes: list[int] = field(default_factory=list)

    @classmethod
    def from_blocks(cls, road_block: np.ndarray, lane_block: np.ndarray) -> "Normalizer":
        def stats(block):
            mean = block.mean(axis=0)
            std = block.std(axis=0)
            clamped = np.flatnonzero(std < 1e-9).tolist()
            std = np.where(std < 1e-9, 1.0, std)
            return mean, std, clamped

        r_mean, r_std, r_clamped = stats(road_block)
        l_mean, l_std, l_clamped = stats(lane_block)
        return cls(road_mean=r_mean, road_std=r_std, lane_mean=l_mean,
                   lane_std=l_std, clamped_roads=r_clamped, clamped_lanes=l_clamped)

    def normalize_roads(self, x: np.ndarray) -> np.ndarray:
        return (x - self.road_mean) / self.road_std

    def denormalize_roads(self, x: np.ndarray) -> np.ndarray:
        return x * self.road_std + self.road_mean

    def normalize_lanes(self, x: np.ndarray) -> np.ndarray:
        return (x - self.lane_mean) / self.lane_std

    def denormalize_lanes(self, x: np.ndarray) -> np.ndarray:
        return x * self.lane_std + self.lane_mean


def make_windows(road_series: TrafficSeries, lane_series: TrafficSeries,
                 window: int, stride: int = 1,
                 ratios: tuple[float, float, float] = (0.7, 0.1, 0.2)
                 ) -> tuple[dict[str, WindowedSplit], dict[str, tuple[int, int]]]:
    """Chronological train/val/test blocks, sliding windows inside each.

    No window crosses a block boundary, so the split timestamp sets are
    pairwise disjoint.
    """
    if window < 1:
        raise ConfigError(f"window must be >= 1, got {window}")
    if stride < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {ratios}")
    t_total = road_series.n_steps
    if lane_series.n_steps != t_total:
        raise DataError("road and lane series lengths differ")
    n_train = int(t_total * ratios[0])
    n_val = int(t_total * ratios[1])
    bounds = {"train": (0, n_train),
              "val": (n_train, n_train + n_val),
              "test": (n_train + n_val, t_total)}

    splits: dict[str, WindowedSplit] = {}
    for name, (lo, hi) in bounds.items():
        starts = list(range(lo, hi - window + 1, stride))
        if not starts:
            if name == "train" or (name == "val" and ratios[1] > 0) \
                    or (name == "test" and ratios[2] > 0):
                raise DataError(
                    f"{name} block [{lo}, {hi}) too small for window {window}")
            starts = []
        idx = np.array([[s + k for k in range(window)] for s in starts], dtype=np.int64)
        road = road_series.values[idx] if starts else np.zeros((0, window, road_series.n_nodes))
        lanes = lane_series.values[idx] if starts else np.zeros((0, window, lane_series.n_nodes))
        splits[name] = WindowedSplit(name=name, road=road, lanes=lanes,
                                     t_index=idx if starts else np.zeros((0, window), dtype=np.int64))
    return splits, bounds


@dataclass
class LaneDataset:
    """Everything a training or evaluation run needs, immutable once built."""

    road_net: RoadNetwork
    lane_net: LaneNetwork
    road_series: TrafficSeries
    lane_series: TrafficSeries
    window: int
    stride: int
    ratios: tuple[float, float, float]
    splits: dict[str, WindowedSplit]
    bounds: dict[str, tuple[int, int]]
    normalizer: Normalizer

    @property
    def kind(self) -> str:
        return self.lane_series.kind

    def manifest(self) -> dict:
        return {
            "kind": self.kind,
            "units": self.lane_series.units,
            "interval_minutes": self.lane_series.interval_minutes,
            "road_count": self.road_net.road_count,
            "lane_counts": self.road_net.lane_counts.tolist(),
            "n_timestamps": self.road_series.n_steps,
            "window": self.window,
            "stride": self.stride,
            "split_ratios": list(self.ratios),
            "split_bounds": {k: list(v) for k, v in self.bounds.items()},
            "windows": {k: int(v.n_windows) for k, v in self.splits.items()},
            "normalization": {
                "source": self.normalizer.source,
                "clamped_roads": self.normalizer.clamped_roads,
                "clamped_lanes": self.normalizer.clamped_lanes,
            },
        }


def build_dataset(road_net: RoadNetwork, lane_net: LaneNetwork,
                  road_series: TrafficSeries, lane_series: TrafficSeries,
                  window: int, stride: int = 1,
                  ratios: tuple[float, float, float] = (0.7, 0.1, 0.2)) -> LaneDataset:
    check_kind(road_series, lane_series.kind)
    splits, bounds = make_windows(road_series, lane_series, window, stride, ratios)
    lo, hi = bounds["train"]
    normalizer = Normalizer.from_blocks(road_series.values[lo:hi],
                                        lane_series.values[lo:hi])
    return LaneDataset(road_net=road_net, lane_net=lane_net,
                       road_series=road_series, lane_series=lane_series,
                       window=window, stride=stride, ratios=ratios,
                       splits=splits, bounds=bounds, normalizer=normalizer)


def save_dataset_dir(out_dir: str | Path, road_net: RoadNetwork,
                     lane_series: TrafficSeries, lane_net: LaneNetwork,
                     extra: dict | None = None) -> None:
    """Write graph.json + lanes.csv + manifest.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_graph_json(road_net, out / "graph.json")
    write_csv(lane_series, lane_net, out / "lanes.csv")
    manifest = {
        "kind": lane_series.kind,
        "units": lane_series.units,
        "interval_minutes": lane_series.interval_minutes,
        "road_count": road_net.road_count,
        "lane_counts": road_net.lane_counts.tolist(),
        "n_timestamps": lane_series.n_steps,
    }
    manifest.update(extra or {})
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_dataset_dir(path: str | Path, kind: str | None = None
                     ) -> tuple[RoadNetwork, LaneNetwork, TrafficSeries, TrafficSeries, dict]:
    """Read a dataset directory written by save_dataset_dir (or hand-built)."""
    root = Path(path)
    manifest = {}
    manifest_path = root / "manifest.json"
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text())
    kind = kind or manifest.get("kind")
    if kind is None:
        raise ConfigError(f"{root}: no kind in manifest and none supplied")
    road_net = load_graph_json(root / "graph.json")
    lane_net = build_lane_network(road_net)
    lane_series, road_series, gaps = load_csv(root / "lanes.csv", lane_net, kind,
                                              units=manifest.get("units"))
    manifest["filled_gaps"] = gaps
    return road_net, lane_net, lane_series, road_series, manifest
