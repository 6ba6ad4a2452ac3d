"""Basin data: ingestion, unit conversion, standardization, fusion, batching,
and a synthetic linear-reservoir watershed generator.

On-disk layout (one file per basin)::

    <forcing_dir>/<basin_id>.csv      date,var1,var2,...   (header required)
    <streamflow_dir>/<basin_id>.csv   date,discharge_cfs   (-999 = missing)
    attributes.csv                    basin_id,area_km2,attr1,...
    manifest.txt                      one basin id per line
"""
from __future__ import annotations

import csv
import datetime as dt
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import FusionError, IngestionError, ParameterError, ParseError, StatsError
from .tensor import RngStream

logger = logging.getLogger(__name__)

CUBIC_FEET_TO_M3 = 0.0283168
SECONDS_PER_DAY = 86400.0
STD_FLOOR = 1e-6
MISSING_SENTINEL = -999.0

SYNTH_WET_PROB = 0.3
SYNTH_WET_MEAN_MM = 5.0
SYNTH_AREA_KM2 = 100.0


def cfs_to_mm_per_day(q_cfs, area_km2: float):
    """Convert discharge in ft³/s to depth over the basin in mm/day."""
    if not area_km2 > 0:
        raise ParameterError(f"basin area must be > 0 km², got {area_km2}")
    return np.asarray(q_cfs, dtype=np.float64) * CUBIC_FEET_TO_M3 * SECONDS_PER_DAY * 1000.0 / (area_km2 * 1e6)


def mm_per_day_to_cfs(q_mm, area_km2: float):
    if not area_km2 > 0:
        raise ParameterError(f"basin area must be > 0 km², got {area_km2}")
    return np.asarray(q_mm, dtype=np.float64) * (area_km2 * 1e6) / (CUBIC_FEET_TO_M3 * SECONDS_PER_DAY * 1000.0)


def _as_day(value) -> np.datetime64:
    if isinstance(value, np.datetime64):
        return value.astype("datetime64[D]")
    if isinstance(value, (dt.date, str)):
        return np.datetime64(str(value), "D")
    raise ParameterError(f"cannot interpret {value!r} as a date")


# ---------------------------------------------------------------------------
# records


@dataclass(frozen=True, eq=False)
class ForcingBlock:
    variables: tuple[str, ...]
    values: np.ndarray  # [n_days, n_vars]


@dataclass(frozen=True, eq=False)
class BasinRecord:
    basin_id: str
    area_km2: float
    attribute_names: tuple[str, ...]
    attributes: np.ndarray
    dates: np.ndarray  # datetime64[D], contiguous
    discharge: np.ndarray  # mm/day, NaN where unobserved
    forcings: Mapping[str, ForcingBlock] = field(default_factory=dict)

    def __post_init__(self):
        if not self.area_km2 > 0:
            raise IngestionError(f"basin {self.basin_id}: area must be > 0, got {self.area_km2}")
        n = len(self.dates)
        if len(self.discharge) != n:
            raise IngestionError(f"basin {self.basin_id}: discharge length {len(self.discharge)} != {n} dates")
        observed = self.discharge[~np.isnan(self.discharge)]
        if np.any(observed < 0):
            raise IngestionError(f"basin {self.basin_id}: negative observed discharge")
        for name, block in self.forcings.items():
            if block.values.shape != (n, len(block.variables)):
                raise IngestionError(f"basin {self.basin_id}: product {name} has shape "
                                     f"{block.values.shape}, expected ({n}, {len(block.variables)})")
        for arr in (self.dates, self.discharge, self.attributes, *(b.values for b in self.forcings.values())):
            arr.setflags(write=False)

    @property
    def n_days(self) -> int:
        return len(self.dates)

    def day_index(self, date) -> int:
        return int((_as_day(date) - self.dates[0]).astype(int))


@dataclass(frozen=True)
class SplitSpec:
    train_start: np.datetime64 = np.datetime64("1999-10-01")
    train_end: np.datetime64 = np.datetime64("2008-09-30")
    test_start: np.datetime64 = np.datetime64("1989-10-01")
    test_end: np.datetime64 = np.datetime64("1999-09-30")

    def __post_init__(self):
        for name in ("train_start", "train_end", "test_start", "test_end"):
            object.__setattr__(self, name, _as_day(getattr(self, name)))
        if self.train_start > self.train_end or self.test_start > self.test_end:
            raise ParameterError("split ranges must have start <= end")
        if not (self.train_end < self.test_start or self.test_end < self.train_start):
            raise ParameterError("training and test ranges overlap")

    def to_dict(self) -> dict:
        return {k: str(getattr(self, k)) for k in ("train_start", "train_end", "test_start", "test_end")}

    @classmethod
    def from_dict(cls, d: Mapping) -> "SplitSpec":
        return cls(**{k: d[k] for k in ("train_start", "train_end", "test_start", "test_end")})


def _range_mask(dates: np.ndarray, start, end) -> np.ndarray:
    return (dates >= start) & (dates <= end)


# ---------------------------------------------------------------------------
# file parsing


def _parse_date(text: str, path, line: int) -> np.datetime64:
    try:
        return np.datetime64(dt.date.fromisoformat(text.strip()), "D")
    except ValueError:
        raise ParseError(path, line, f"bad date {text!r}") from None


def _parse_float(text: str, path, line: int) -> float:
    try:
        return float(text)
    except ValueError:
        raise ParseError(path, line, f"bad number {text!r}") from None


def _check_contiguous(dates: np.ndarray, path):
    if len(dates) == 0:
        raise IngestionError(f"{path}: no data rows")
    steps = np.diff(dates).astype(int)
    if np.any(steps <= 0):
        i = int(np.argmax(steps <= 0))
        raise IngestionError(f"{path}: dates not strictly increasing at {dates[i]} -> {dates[i + 1]}")
    if np.any(steps != 1):
        i = int(np.argmax(steps != 1))
        raise IngestionError(f"{path}: date gap between {dates[i]} and {dates[i + 1]}")


def read_forcing_file(path) -> tuple[np.ndarray, tuple[str, ...], np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(path, 1, "empty forcing file")
    header = [h.strip() for h in rows[0]]
    if len(header) < 2:
        raise ParseError(path, 1, "forcing header needs a date column and at least one variable")
    variables = tuple(header[1:])
    dates, values = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(path, lineno, f"expected {len(header)} fields, got {len(row)}")
        dates.append(_parse_date(row[0], path, lineno))
        values.append([_parse_float(v, path, lineno) for v in row[1:]])
    dates = np.array(dates, dtype="datetime64[D]")
    _check_contiguous(dates, path)
    return dates, variables, np.array(values, dtype=np.float64)


def read_streamflow_file(path) -> tuple[np.ndarray, np.ndarray]:
    """Dates and discharge in cfs; negative sentinels come back as NaN."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    dates, q = [], []
    for lineno, row in enumerate(rows, start=1):
        if not row:
            continue
        if lineno == 1 and row[0].strip().lower() == "date":
            continue
        if len(row) != 2:
            raise ParseError(path, lineno, f"expected 2 fields, got {len(row)}")
        dates.append(_parse_date(row[0], path, lineno))
        q.append(_parse_float(row[1], path, lineno))
    dates = np.array(dates, dtype="datetime64[D]")
    _check_contiguous(dates, path)
    q = np.array(q, dtype=np.float64)
    q[q < 0] = np.nan
    return dates, q


@dataclass(frozen=True, eq=False)
class AttributeRow:
    basin_id: str
    area_km2: float
    names: tuple[str, ...]
    values: np.ndarray


def read_attributes_file(path) -> dict[str, AttributeRow]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(path, 1, "empty attributes file")
    header = [h.strip() for h in rows[0]]
    if header[:2] != ["basin_id", "area_km2"]:
        raise ParseError(path, 1, "header must start with basin_id,area_km2")
    names = tuple(header[2:])
    out = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(path, lineno, f"expected {len(header)} fields, got {len(row)}")
        bid = row[0].strip()
        out[bid] = AttributeRow(bid, _parse_float(row[1], path, lineno), names,
                                np.array([_parse_float(v, path, lineno) for v in row[2:]], dtype=np.float64))
    return out


def read_manifest(path) -> list[str]:
    ids = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            ids.append(line)
    return ids


def ingest_basin(forcing_files: Mapping[str, str | Path], streamflow_file, attribute_row: AttributeRow) -> BasinRecord:
    """Parse one basin's files into a date-aligned record in mm/day.

    The record spans the date range covered by every forcing product;
    streamflow days outside that range are dropped and uncovered days are NaN.
    """
    if not forcing_files:
        raise IngestionError(f"basin {attribute_row.basin_id}: no forcing products given")
    parsed = {name: read_forcing_file(p) for name, p in forcing_files.items()}
    start = max(d[0] for d, _, _ in parsed.values())
    end = min(d[-1] for d, _, _ in parsed.values())
    if start > end:
        raise IngestionError(f"basin {attribute_row.basin_id}: forcing products share no dates")
    dates = np.arange(start, end + np.timedelta64(1, "D"), dtype="datetime64[D]")
    forcings = {}
    for name, (d, variables, values) in parsed.items():
        i0 = int((start - d[0]).astype(int))
        forcings[name] = ForcingBlock(variables, values[i0:i0 + len(dates)].copy())

    q_dates, q_cfs = read_streamflow_file(streamflow_file)
    discharge = np.full(len(dates), np.nan)
    lo, hi = max(start, q_dates[0]), min(end, q_dates[-1])
    if lo <= hi:
        a = int((lo - start).astype(int))
        b = int((lo - q_dates[0]).astype(int))
        n = int((hi - lo).astype(int)) + 1
        discharge[a:a + n] = cfs_to_mm_per_day(q_cfs[b:b + n], attribute_row.area_km2)
    return BasinRecord(attribute_row.basin_id, attribute_row.area_km2, attribute_row.names,
                       attribute_row.values.copy(), dates, discharge, forcings)


@dataclass(frozen=True)
class DataPaths:
    forcing_dirs: Mapping[str, Path]
    streamflow_dir: Path
    attributes_file: Path
    manifest: Path


def load_dataset(paths: DataPaths) -> list[BasinRecord]:
    attrs = read_attributes_file(paths.attributes_file)
    records = []
    for bid in read_manifest(paths.manifest):
        if bid not in attrs:
            raise IngestionError(f"basin {bid} listed in manifest but missing from {paths.attributes_file}")
        files = {name: Path(d) / f"{bid}.csv" for name, d in paths.forcing_dirs.items()}
        present = {name: p for name, p in files.items() if p.exists()}
        if not present:
            raise IngestionError(f"basin {bid}: no forcing file in any product directory")
        records.append(ingest_basin(present, Path(paths.streamflow_dir) / f"{bid}.csv", attrs[bid]))
    return records


def _fmt(x: float) -> str:
    return repr(float(x))


def write_dataset(records: Sequence[BasinRecord], root) -> DataPaths:
    """Write records in the ingestion layout; floats use round-trip ``repr``."""
    root = Path(root)
    products = sorted({p for r in records for p in r.forcings})
    forcing_dirs = {p: root / "forcing" / p for p in products}
    for d in forcing_dirs.values():
        d.mkdir(parents=True, exist_ok=True)
    flow_dir = root / "streamflow"
    flow_dir.mkdir(parents=True, exist_ok=True)
    for rec in records:
        days = [str(d) for d in rec.dates]
        for name, block in rec.forcings.items():
            lines = [",".join(("date",) + block.variables)]
            lines += [",".join([day] + [_fmt(v) for v in row]) for day, row in zip(days, block.values)]
            (forcing_dirs[name] / f"{rec.basin_id}.csv").write_text("\n".join(lines) + "\n")
        q = mm_per_day_to_cfs(rec.discharge, rec.area_km2)
        lines = ["date,discharge_cfs"]
        lines += [f"{day},{_fmt(MISSING_SENTINEL if np.isnan(v) else v)}" for day, v in zip(days, q)]
        (flow_dir / f"{rec.basin_id}.csv").write_text("\n".join(lines) + "\n")
    names = records[0].attribute_names if records else ()
    lines = [",".join(("basin_id", "area_km2") + names)]
    lines += [",".join([r.basin_id, _fmt(r.area_km2)] + [_fmt(v) for v in r.attributes]) for r in records]
    (root / "attributes.csv").write_text("\n".join(lines) + "\n")
    (root / "manifest.txt").write_text("".join(f"{r.basin_id}\n" for r in records))
    return DataPaths(forcing_dirs, flow_dir, root / "attributes.csv", root / "manifest.txt")


# ---------------------------------------------------------------------------
# normalization


@dataclass(frozen=True, eq=False)
class NormalizationStats:
    """Training-window statistics; inputs are forcing variables then attributes."""

    product: str
    variables: tuple[str, ...]
    input_mean: np.ndarray
    input_std: np.ndarray
    q_mean: float
    q_std: float
    basin_q_mean: Mapping[str, float]
    basin_q_std: Mapping[str, float]

    @property
    def input_dim(self) -> int:
        return len(self.variables)

    def basin_std_standardized(self, basin_id: str) -> float:
        return self.basin_q_std[basin_id] / self.q_std

    def standardize_q(self, q):
        return (np.asarray(q, dtype=np.float64) - self.q_mean) / self.q_std

    def destandardize_q(self, z):
        return np.asarray(z, dtype=np.float64) * self.q_std + self.q_mean

    def to_dict(self) -> dict:
        return {
            "product": self.product,
            "variables": list(self.variables),
            "input_mean": [float(v) for v in self.input_mean],
            "input_std": [float(v) for v in self.input_std],
            "q_mean": float(self.q_mean),
            "q_std": float(self.q_std),
            "basin_q_mean": {k: float(v) for k, v in self.basin_q_mean.items()},
            "basin_q_std": {k: float(v) for k, v in self.basin_q_std.items()},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "NormalizationStats":
        return cls(d["product"], tuple(d["variables"]), np.array(d["input_mean"], dtype=np.float64),
                   np.array(d["input_std"], dtype=np.float64), float(d["q_mean"]), float(d["q_std"]),
                   dict(d["basin_q_mean"]), dict(d["basin_q_std"]))


def _sole_product(records: Sequence[BasinRecord], product: str | None) -> str:
    if product is not None:
        return product
    names = {p for r in records for p in r.forcings}
    if len(names) != 1:
        raise StatsError(f"records carry products {sorted(names)}; pass product= or fuse them first")
    return names.pop()


def _pop_stats(values: np.ndarray, what: str) -> tuple[float, float]:
    values = values[~np.isnan(values)]
    if values.size == 0:
        raise StatsError(f"no observed values for {what} in the training window")
    m = float(np.mean(values))
    s = float(np.sqrt(np.mean((values - m) ** 2)))
    return m, max(s, STD_FLOOR)


def compute_norm_stats(records: Sequence[BasinRecord], split: SplitSpec, product: str | None = None) -> NormalizationStats:
    """Means and population stds over the training window of all given basins."""
    if not records:
        raise StatsError("no records")
    product = _sole_product(records, product)
    variables = records[0].forcings[product].variables
    blocks, q_all = [], []
    basin_mean, basin_std = {}, {}
    for r in records:
        if product not in r.forcings:
            raise StatsError(f"basin {r.basin_id} lacks product {product!r}")
        if r.forcings[product].variables != variables:
            raise StatsError(f"basin {r.basin_id}: variable list differs for product {product!r}")
        sel = _range_mask(r.dates, split.train_start, split.train_end)
        blocks.append(r.forcings[product].values[sel])
        q = r.discharge[sel]
        q_all.append(q)
        basin_mean[r.basin_id], basin_std[r.basin_id] = _pop_stats(q, f"discharge of basin {r.basin_id}")
    forcing = np.concatenate(blocks, axis=0)
    means, stds = [], []
    for j, name in enumerate(variables):
        m, s = _pop_stats(forcing[:, j], f"variable {name!r}")
        means.append(m)
        stds.append(s)
    attrs = np.stack([r.attributes for r in records]) if records[0].attributes.size else np.zeros((len(records), 0))
    for j, name in enumerate(records[0].attribute_names):
        m, s = _pop_stats(attrs[:, j], f"attribute {name!r}")
        means.append(m)
        stds.append(s)
    q_mean, q_std = _pop_stats(np.concatenate(q_all), "discharge")
    return NormalizationStats(product, tuple(variables) + tuple(records[0].attribute_names),
                              np.array(means), np.array(stds), q_mean, q_std, basin_mean, basin_std)


def standardize(values, mean, std):
    return (np.asarray(values, dtype=np.float64) - mean) / std


def destandardize(values, mean, std):
    return np.asarray(values, dtype=np.float64) * std + mean


def input_matrix(record: BasinRecord, stats: NormalizationStats) -> np.ndarray:
    """Standardized ``[n_days, input_dim]`` inputs; attributes repeated daily, NaN imputed as 0."""
    if stats.product not in record.forcings:
        raise ParameterError(f"basin {record.basin_id} lacks product {stats.product!r}")
    forcing = record.forcings[stats.product].values
    raw = np.concatenate([forcing, np.broadcast_to(record.attributes, (record.n_days, record.attributes.size))], axis=1)
    if raw.shape[1] != stats.input_dim:
        raise ParameterError(f"basin {record.basin_id} has {raw.shape[1]} inputs, stats expect {stats.input_dim}")
    x = standardize(raw, stats.input_mean, stats.input_std)
    return np.nan_to_num(x, nan=0.0)


# ---------------------------------------------------------------------------
# multi-forcing fusion


def fuse_forcings(records: Sequence[BasinRecord], products: Sequence[str]) -> list[BasinRecord]:
    """Concatenate products' variables in order; keep only basins carrying all of them.

    The fused product is named ``"+".join(products)`` and its variables are
    prefixed ``product:``.
    """
    products = list(products)
    if not products:
        raise FusionError("no products requested")
    name = "+".join(products)
    fused = []
    for r in records:
        missing = [p for p in products if p not in r.forcings]
        if missing:
            logger.info("fusion drops basin %s (missing %s)", r.basin_id, missing)
            continue
        variables = tuple(f"{p}:{v}" for p in products for v in r.forcings[p].variables)
        values = np.concatenate([r.forcings[p].values for p in products], axis=1)
        fused.append(replace(r, forcings={name: ForcingBlock(variables, values)}))
    if not fused:
        raise FusionError(f"no basin carries all of {products}")
    return fused


def add_forcing_noise(records: Sequence[BasinRecord], source: str, target: str, rel_sigma: float,
                      rng: RngStream) -> list[BasinRecord]:
    """Attach ``target``: a multiplicative log-normal corruption of ``source``."""
    out = []
    for r, child in zip(records, rng.split(len(records))):
        block = r.forcings[source]
        noise = np.exp(rel_sigma * child.normal(0.0, 1.0, block.values.shape) - 0.5 * rel_sigma ** 2)
        forcings = dict(r.forcings)
        forcings[target] = ForcingBlock(block.variables, block.values * noise)
        out.append(replace(r, forcings=forcings))
    return out


# ---------------------------------------------------------------------------
# batching


@dataclass
class Batch:
    x: np.ndarray  # [batch, seq_len, input_dim]
    y: np.ndarray  # [batch, L, 1] standardized, NaN replaced by 0
    mask: np.ndarray  # [batch, L, 1], 1 where observed
    basin_std: np.ndarray  # [batch]
    basin_index: np.ndarray
    end_index: np.ndarray


class BatchSampler:
    """Uniform (basin, window-end) sampler over each basin's training range.

    A basin is drawn uniformly, then a window end uniformly among the days
    whose full ``seq_len`` lookback lies inside the training range.
    """

    def __init__(self, records: Sequence[BasinRecord], stats: NormalizationStats, split: SplitSpec,
                 seq_len: int, head: str = "seq2seq"):
        if head not in ("seq2seq", "seq2one"):
            raise ParameterError(f"unknown head mode {head!r}")
        if seq_len < 1:
            raise ParameterError("seq_len must be >= 1")
        self.seq_len = seq_len
        self.head = head
        self.x, self.y, self.ends, self.bstd = [], [], [], []
        for r in records:
            idx = np.flatnonzero(_range_mask(r.dates, split.train_start, split.train_end))
            if idx.size < seq_len:
                raise ParameterError(f"basin {r.basin_id}: training window has {idx.size} days < seq_len={seq_len}")
            self.x.append(input_matrix(r, stats))
            self.y.append(stats.standardize_q(r.discharge))
            self.ends.append(np.arange(idx[0] + seq_len - 1, idx[-1] + 1))
            self.bstd.append(stats.basin_std_standardized(r.basin_id))
        self.basin_ids = [r.basin_id for r in records]

    def sample(self, batch_size: int, rng: RngStream) -> Batch:
        basins = rng.integers(0, len(self.x), batch_size)
        ends = np.array([self.ends[b][rng.integers(0, len(self.ends[b]))] for b in basins])
        offsets = np.arange(-self.seq_len + 1, 1)
        x = np.stack([self.x[b][e + offsets] for b, e in zip(basins, ends)])
        if self.head == "seq2seq":
            y = np.stack([self.y[b][e + offsets] for b, e in zip(basins, ends)])
        else:
            y = np.array([[self.y[b][e]] for b, e in zip(basins, ends)])
        y = y[..., None]
        mask = (~np.isnan(y)).astype(np.float64)
        return Batch(x, np.nan_to_num(y, nan=0.0), mask, np.array([self.bstd[b] for b in basins]), basins, ends)


def make_batch(records, stats, split, seq_len, batch_size, rng: RngStream, head: str = "seq2seq") -> Batch:
    return BatchSampler(records, stats, split, seq_len, head).sample(batch_size, rng)


# ---------------------------------------------------------------------------
# synthetic watershed


def simulate_reservoir(precip, k: float, et_rate: float, s0: float):
    """Linear reservoir: ``Q_t = k·S_t``, ``E_t = et_rate·S_t``,
    ``S_{t+1} = max(0, S_t + P_t - E_t - Q_t)``.

    Returns ``(Q, E, S)`` with ``len(S) == len(precip) + 1``.
    """
    if not 0 < k < 1:
        raise ParameterError(f"k must lie in (0, 1), got {k}")
    if et_rate < 0:
        raise ParameterError(f"et_rate must be >= 0, got {et_rate}")
    if s0 < 0:
        raise ParameterError(f"initial storage must be >= 0, got {s0}")
    precip = np.asarray(precip, dtype=np.float64)
    n = precip.size
    q, e, s = np.empty(n), np.empty(n), np.empty(n + 1)
    s[0] = s0
    for t in range(n):
        q[t] = k * s[t]
        e[t] = et_rate * s[t]
        s[t + 1] = max(0.0, s[t] + precip[t] - e[t] - q[t])
    return q, e, s


def _per_basin(value, n: int, name: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(value, dtype=np.float64))
    if arr.size == 1:
        return np.full(n, arr[0])
    if arr.size != n:
        raise ParameterError(f"{name} needs 1 or {n} values, got {arr.size}")
    return arr


def seasonal_pet(dates: np.ndarray) -> np.ndarray:
    """Deterministic seasonal potential-ET index (mm/day), peaking in mid-summer."""
    doy = (dates - dates.astype("datetime64[Y]")).astype(int)
    return 3.0 + 2.0 * np.sin(2.0 * np.pi * (doy - 105) / 365.25)


def synth_linear_reservoir(n_basins: int, n_days: int, k=0.1, et_rate=0.02, rng: RngStream | None = None, *,
                           start_date="2000-01-01", wet_prob: float = SYNTH_WET_PROB,
                           wet_mean: float = SYNTH_WET_MEAN_MM, s0=None,
                           area_km2: float = SYNTH_AREA_KM2, product: str = "synthetic") -> list[BasinRecord]:
    """Seeded Markovian watersheds.

    ``k``, ``et_rate`` and ``s0`` may be scalars or per-basin sequences; a
    missing ``s0`` is drawn uniformly from [0, 20) mm.  Forcings are
    precipitation and a seasonal ET proxy; attributes are ``(k, et_rate, s0)``.
    """
    if n_basins < 1:
        raise ParameterError("n_basins must be >= 1")
    if n_days < 1:
        raise ParameterError("n_days must be >= 1")
    if not 0 < wet_prob <= 1 or not wet_mean > 0:
        raise ParameterError("wet_prob must lie in (0, 1] and wet_mean be > 0")
    if rng is None:
        raise ParameterError("synthetic generation needs an RngStream")
    ks = _per_basin(k, n_basins, "k")
    ets = _per_basin(et_rate, n_basins, "et_rate")
    dates = np.arange(_as_day(start_date), _as_day(start_date) + np.timedelta64(n_days, "D"), dtype="datetime64[D]")
    pet = seasonal_pet(dates)
    records = []
    for i, child in enumerate(rng.split(n_basins)):
        s_init = float(child.uniform(0.0, 20.0, None)) if s0 is None else float(_per_basin(s0, n_basins, "s0")[i])
        wet = child.bernoulli(wet_prob, n_days)
        depth = child.exponential(wet_mean, n_days)
        precip = np.where(wet, depth, 0.0)
        q, _, _ = simulate_reservoir(precip, ks[i], ets[i], s_init)
        block = ForcingBlock(("prcp", "pet"), np.column_stack([precip, pet]))
        records.append(BasinRecord(f"syn{i:03d}", area_km2, ("k", "et_rate", "s0"),
                                   np.array([ks[i], ets[i], s_init]), dates.copy(), q, {product: block}))
    return records
