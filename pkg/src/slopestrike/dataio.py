"""Ingestion, splitting, synthetic price generation and checkpoint persistence."""

from __future__ import annotations

import csv
import datetime as dt
import json
import logging
import zlib
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

CSV_HEADER = ("ticker", "date", "adjprc")


class DataError(Exception):
    """Malformed input data (parse failures, constraint violations)."""


class CheckpointError(Exception):
    """Unreadable or inconsistent checkpoint file."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint was written by an unsupported format version."""


@dataclass
class PriceSeries:
    """One stock recording: ordered (date, adjusted price) pairs."""

    ticker: str
    dates: list[dt.date]
    adjprc: np.ndarray

    def __post_init__(self):
        self.adjprc = np.asarray(self.adjprc, dtype=np.float64)
        if len(self.dates) != len(self.adjprc):
            raise DataError(f"{self.ticker}: {len(self.dates)} dates vs {len(self.adjprc)} prices")
        if np.any(self.adjprc <= 0.0):
            raise DataError(f"{self.ticker}: non-positive adjprc")
        for a, b in zip(self.dates, self.dates[1:]):
            if b <= a:
                raise DataError(f"{self.ticker}: dates not strictly increasing at {b}")

    def __len__(self) -> int:
        return len(self.adjprc)

    def head(self, n: int) -> "PriceSeries":
        return PriceSeries(self.ticker, self.dates[:n], self.adjprc[:n].copy())


@dataclass
class SplitSpec:
    n_bins: int = 8
    fractions: tuple[float, float, float] = (0.75, 0.10, 0.15)
    min_length: int = 600

    def __post_init__(self):
        if self.n_bins < 1:
            raise DataError(f"n_bins must be >= 1, got {self.n_bins}")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise DataError(f"fractions {self.fractions} do not sum to 1")


def load_csv(path) -> list[PriceSeries]:
    """Parse a ``ticker,date,adjprc`` CSV into one series per ticker.

    Rows are sorted by date per ticker; duplicate (ticker, date) pairs and
    non-positive prices are rejected with the offending line number.
    """
    rows: dict[str, list[tuple[dt.date, float]]] = {}
    seen: set[tuple[str, str]] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
            raise DataError(f"{path}: expected header {','.join(CSV_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            ticker, date_str, price_str = (c.strip() for c in row)
            key = (ticker, date_str)
            if key in seen:
                raise DataError(f"{path}:{lineno}: duplicate entry for {ticker} on {date_str}")
            seen.add(key)
            try:
                date = dt.date.fromisoformat(date_str)
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: bad date '{date_str}'") from exc
            try:
                price = float(price_str)
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: bad price '{price_str}'") from exc
            if price <= 0.0 or not np.isfinite(price):
                raise DataError(f"{path}:{lineno}: non-positive adjprc {price_str}")
            rows.setdefault(ticker, []).append((date, price))
    if not rows:
        raise DataError(f"{path}: no data rows")
    series = []
    for ticker in sorted(rows):
        entries = sorted(rows[ticker], key=lambda e: e[0])
        series.append(PriceSeries(ticker, [e[0] for e in entries],
                                  np.array([e[1] for e in entries])))
    return series


def _allocate(n: int, fractions: tuple[float, float, float]) -> tuple[int, int, int]:
    # largest-remainder apportionment; ties resolved train > val > test
    raw = [n * f for f in fractions]
    counts = [int(np.floor(r)) for r in raw]
    rem = n - sum(counts)
    order = sorted(range(3), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in range(rem):
        counts[order[i]] += 1
    return tuple(counts)


def stratified_split(series: list[PriceSeries], spec: SplitSpec, seed: int):
    """Bin series by median price into equal-width bins and allocate by fractions.

    Series shorter than ``spec.min_length`` are dropped with a warning.  Bins
    with fewer than 3 members fall back to a single global allocation pool.
    Returns (train, val, test); union is always a partition of the kept input.
    """
    kept = []
    for s in series:
        if len(s) < spec.min_length:
            logger.warning("dropping %s: %d days < min_length %d", s.ticker, len(s), spec.min_length)
        else:
            kept.append(s)
    if not kept:
        raise DataError("no series left after min-length filtering")

    medians = np.array([float(np.median(s.adjprc)) for s in kept])
    lo, hi = medians.min(), medians.max()
    if hi == lo:
        bin_of = np.zeros(len(kept), dtype=int)
    else:
        width = (hi - lo) / spec.n_bins
        # ties at interior edges go to the lower bin
        ratio = (medians - lo) / width
        bin_of = np.ceil(ratio).astype(int) - 1
        bin_of[medians == lo] = 0
        bin_of = np.clip(bin_of, 0, spec.n_bins - 1)

    rng = np.random.default_rng(seed)
    train: list[PriceSeries] = []
    val: list[PriceSeries] = []
    test: list[PriceSeries] = []
    pool: list[int] = []
    for b in range(spec.n_bins):
        members = [i for i in range(len(kept)) if bin_of[i] == b]
        if not members:
            continue
        if len(members) < 3:
            logger.info("bin %d has %d series; deferring to global allocation", b, len(members))
            pool.extend(members)
            continue
        perm = rng.permutation(len(members))
        shuffled = [members[j] for j in perm]
        n_tr, n_va, _ = _allocate(len(shuffled), spec.fractions)
        train.extend(kept[i] for i in shuffled[:n_tr])
        val.extend(kept[i] for i in shuffled[n_tr:n_tr + n_va])
        test.extend(kept[i] for i in shuffled[n_tr + n_va:])
    if pool:
        perm = rng.permutation(len(pool))
        shuffled = [pool[j] for j in perm]
        n_tr, n_va, _ = _allocate(len(shuffled), spec.fractions)
        train.extend(kept[i] for i in shuffled[:n_tr])
        val.extend(kept[i] for i in shuffled[n_tr:n_tr + n_va])
        test.extend(kept[i] for i in shuffled[n_tr + n_va:])
    return train, val, test


def business_days(start: dt.date, n: int) -> list[dt.date]:
    """n consecutive weekdays beginning at the first weekday >= start."""
    days = []
    d = start
    while len(days) < n:
        if d.weekday() < 5:
            days.append(d)
        d += dt.timedelta(days=1)
    return days


def synth_gbm(n_series: int, n_days: int, s0: float, mu: float, sigma: float,
              seed: int) -> list[PriceSeries]:
    """Geometric Brownian motion price paths on consecutive weekdays.

    p_t = p_{t-1} * exp((mu - sigma^2/2) + sigma * z_t) with z_t standard
    normal from the seeded generator.
    """
    if s0 <= 0.0:
        raise DataError(f"s0 must be positive, got {s0}")
    if sigma < 0.0:
        raise DataError(f"sigma must be non-negative, got {sigma}")
    if n_days < 120:
        raise DataError(f"n_days must be >= 120 (encoder 100 + horizon 20), got {n_days}")
    rng = np.random.default_rng(seed)
    dates = business_days(dt.date(2020, 1, 6), n_days)
    out = []
    for i in range(n_series):
        z = rng.standard_normal(n_days - 1)
        log_steps = (mu - 0.5 * sigma * sigma) + sigma * z
        prices = s0 * np.exp(np.concatenate([[0.0], np.cumsum(log_steps)]))
        out.append(PriceSeries(f"SYN{i:03d}", list(dates), prices))
    return out


# ---------------------------------------------------------------------------
# checkpoints: {header JSON}\n\0 + raw little-endian float64 blobs + CRC-32
# ---------------------------------------------------------------------------

FORMAT_VERSION = 1
_HEADER_SEP = b"\n\x00"


def save_checkpoint(arrays: dict[str, np.ndarray], path, arch: dict | None = None) -> None:
    """Write named float64 arrays with a JSON header and a CRC-32 trailer."""
    header = {
        "format_version": FORMAT_VERSION,
        "arch": arch or {},
        "arrays": [{"name": k, "shape": list(np.asarray(v).shape)} for k, v in arrays.items()],
    }
    body = json.dumps(header, sort_keys=True).encode("utf-8") + _HEADER_SEP
    for v in arrays.values():
        body += np.ascontiguousarray(v, dtype="<f8").tobytes()
    crc = zlib.crc32(body) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(crc.to_bytes(4, "little"))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a checkpoint; returns (arrays, arch). Verifies CRC and version."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4:
        raise CheckpointError(f"{path}: truncated checkpoint")
    body, trailer = blob[:-4], blob[-4:]
    if (zlib.crc32(body) & 0xFFFFFFFF) != int.from_bytes(trailer, "little"):
        raise CheckpointError(f"{path}: checksum mismatch (corrupt or truncated)")
    sep = body.find(_HEADER_SEP)
    if sep < 0:
        raise CheckpointError(f"{path}: missing header separator")
    try:
        header = json.loads(body[:sep].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header") from exc
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    arrays: dict[str, np.ndarray] = {}
    offset = sep + len(_HEADER_SEP)
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        chunk = body[offset:offset + nbytes]
        if len(chunk) != nbytes:
            raise CheckpointError(f"{path}: array '{entry['name']}' truncated")
        arrays[entry["name"]] = np.frombuffer(chunk, dtype="<f8").reshape(shape).copy()
        offset += nbytes
    if offset != len(body):
        raise CheckpointError(f"{path}: {len(body) - offset} trailing bytes after arrays")
    return arrays, header.get("arch", {})


def write_series_csv(series: list[PriceSeries], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for s in series:
            for d, p in zip(s.dates, s.adjprc):
                writer.writerow([s.ticker, d.isoformat(), f"{p:.10g}"])
