"""Calibration records: CSV parsing, epoch aggregation, synthetic generation."""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Iterable, Literal, Sequence

import numpy as np
from scipy.special import ndtri
from scipy.stats import rankdata

from .copula import CopulaJoint, CorrelationMatrix, correlation_stderr, nearest_psd_correlation, sample
from .noise_model import BetaMarginal, DriftSpec, NoiseParameter, fit_beta_moments, fit_hyperparams, rescale_to_unit, unit_to_raw

__all__ = [
    "DataError",
    "CalibrationRecord",
    "EpochModel",
    "parse_csv",
    "write_csv",
    "aggregate_epochs",
    "generate_synthetic",
    "epochs_to_json",
    "epochs_from_json",
    "pair_correlation",
    "MIN_PAIR_OBS",
    "DEFAULT_PSD_FLOOR",
]

HEADER = ("timestamp", "parameter_id", "value")
MIN_PAIR_OBS = 3
# Fitted matrices are repaired to this minimum eigenvalue so the copula density stays defined.
DEFAULT_PSD_FLOOR = 1e-6
SYNTHETIC_START = datetime(2022, 1, 1, tzinfo=timezone.utc)
SYNTHETIC_SPAN = timedelta(days=28)


class DataError(ValueError):
    """Input data is malformed or insufficient."""


@dataclass(frozen=True)
class CalibrationRecord:
    timestamp: datetime
    parameter_id: int
    value: float


def parse_timestamp(text: str) -> datetime:
    s = text.strip()
    if s.endswith(("Z", "z")):
        s = s[:-1] + "+00:00"
    ts = datetime.fromisoformat(s)
    if ts.tzinfo is None:
        return ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S") + (
        f".{ts.microsecond:06d}Z" if ts.microsecond else "Z"
    )


def parse_csv(
    path: str | Path,
    known_ids: Iterable[int] | None = None,
    lenient: bool = False,
) -> list[CalibrationRecord]:
    """Read ``timestamp,parameter_id,value`` rows, validating every line.

    All malformed rows are collected and reported together with their line
    numbers. Rows naming a parameter outside ``known_ids`` are an error, or
    are dropped when ``lenient`` is set.
    """
    known = None if known_ids is None else set(int(i) for i in known_ids)
    records: list[CalibrationRecord] = []
    problems: list[str] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file, expected header {','.join(HEADER)}")
        if tuple(h.strip() for h in header) != HEADER:
            raise DataError(f"{path}: header must be {','.join(HEADER)}, got {','.join(header)}")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                problems.append(f"line {line}: expected 3 columns, got {len(row)}")
                continue
            try:
                ts = parse_timestamp(row[0])
            except ValueError:
                problems.append(f"line {line}: bad timestamp {row[0]!r}")
                continue
            try:
                pid = int(row[1])
            except ValueError:
                problems.append(f"line {line}: bad parameter_id {row[1]!r}")
                continue
            try:
                value = float(row[2])
            except ValueError:
                problems.append(f"line {line}: bad value {row[2]!r}")
                continue
            if not math.isfinite(value):
                problems.append(f"line {line}: non-finite value {row[2]!r}")
                continue
            if known is not None and pid not in known:
                if not lenient:
                    problems.append(f"line {line}: unknown parameter_id {pid}")
                continue
            records.append(CalibrationRecord(ts, pid, value))
    if problems:
        raise DataError(f"{path}: " + "; ".join(problems))
    return records


def write_csv(records: Sequence[CalibrationRecord], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER)
        for r in records:
            w.writerow((format_timestamp(r.timestamp), r.parameter_id, repr(float(r.value))))


# ---------------------------------------------------------------------------
# Aggregation


@dataclass(frozen=True, eq=False)
class EpochModel:
    epoch_key: str | int
    marginals: tuple[BetaMarginal, ...]
    corr: CorrelationMatrix
    sample_counts: tuple[int, ...]
    pair_counts: np.ndarray | None = None
    flagged_pairs: tuple[tuple[int, int], ...] = ()

    @property
    def sample_count(self) -> int:
        return min(self.sample_counts)

    @property
    def d(self) -> int:
        return len(self.marginals)

    def means(self) -> np.ndarray:
        return np.array([m.mean() for m in self.marginals])

    def variances(self) -> np.ndarray:
        return np.array([m.variance() for m in self.marginals])

    def joint(self) -> CopulaJoint:
        return CopulaJoint(self.marginals, self.corr)

    def corr_stderr(self) -> np.ndarray:
        """Per-entry large-sample standard error, ``1/sqrt(n_pair - 1)``."""
        counts = self.pair_counts if self.pair_counts is not None else np.full((self.d, self.d), self.sample_count)
        out = np.vectorize(correlation_stderr, otypes=[float])(counts)
        np.fill_diagonal(out, 0.0)
        return out


def pair_correlation(a: np.ndarray, b: np.ndarray, method: Literal["normal_score", "pearson"] = "normal_score") -> float:
    """Correlation of aligned observations; NaN when undefined."""
    if a.size < 2:
        return math.nan
    if method == "normal_score":
        n = a.size
        a = ndtri(rankdata(a) / (n + 1))
        b = ndtri(rankdata(b) / (n + 1))
    elif method != "pearson":
        raise ValueError(f"unknown correlation method {method!r}")
    da, db = a - a.mean(), b - b.mean()
    denom = math.sqrt(float(da @ da) * float(db @ db))
    if denom == 0.0:
        return math.nan
    return float(np.clip((da @ db) / denom, -1.0, 1.0))


def _window_keys(records: Sequence[CalibrationRecord], window) -> list:
    if window == "monthly":
        return [r.timestamp.strftime("%Y-%m") for r in records]
    size = int(window)
    if size < 2:
        raise ValueError("fixed-count windows need at least 2 timestamps")
    stamps = sorted({r.timestamp for r in records})
    n_full = len(stamps) // size
    slot = {ts: (i // size if i // size < n_full else None) for i, ts in enumerate(stamps)}
    return [slot[r.timestamp] for r in records]


def aggregate_epochs(
    records: Sequence[CalibrationRecord],
    params: Sequence[NoiseParameter],
    window: Literal["monthly"] | int = "monthly",
    correlation: Literal["normal_score", "pearson"] = "normal_score",
    psd_floor: float = DEFAULT_PSD_FLOOR,
) -> list[EpochModel]:
    """Fit one :class:`EpochModel` per window, in chronological order.

    ``window`` is ``"monthly"`` (UTC calendar months) or an integer count of
    distinct timestamps per window; an incomplete trailing window is dropped.
    Correlations use the timestamps both parameters share; pairs with fewer
    than three shared timestamps, or a constant aligned series, get 0 and are
    listed in ``flagged_pairs``.
    """
    params = tuple(params)
    d = len(params)
    pos = {p.id: i for i, p in enumerate(params)}
    keys = _window_keys(records, window)
    grouped: dict = defaultdict(lambda: [dict() for _ in range(d)])
    first_seen: dict = {}
    for r, key in zip(records, keys):
        if key is None:
            continue
        if r.parameter_id not in pos:
            raise DataError(f"record for unknown parameter_id {r.parameter_id}")
        series = grouped[key][pos[r.parameter_id]]
        if r.timestamp in series:
            raise DataError(f"parameter {r.parameter_id} has two records at {format_timestamp(r.timestamp)}")
        p = params[pos[r.parameter_id]]
        value = 1.0 - r.value if p.complement else r.value
        series[r.timestamp] = float(rescale_to_unit(value, p))
        first_seen[key] = min(first_seen.get(key, r.timestamp), r.timestamp)

    models = []
    for key in sorted(grouped, key=lambda k: (first_seen[k], k)):
        series = grouped[key]
        marginals = []
        for p, s in zip(params, series):
            if len(s) < 2:
                raise DataError(f"epoch {key}: parameter {p.id} has {len(s)} observation(s), need at least 2")
            try:
                a, b = fit_beta_moments(np.fromiter(s.values(), float), name=f"epoch {key}: parameter {p.id}")
            except ValueError as exc:
                raise DataError(str(exc)) from None
            marginals.append(BetaMarginal.static(a, b))
        corr = np.eye(d)
        counts = np.zeros((d, d), dtype=int)
        flagged = []
        for i in range(d):
            counts[i, i] = len(series[i])
            for j in range(i + 1, d):
                common = sorted(series[i].keys() & series[j].keys())
                counts[i, j] = counts[j, i] = len(common)
                c = math.nan
                if len(common) >= MIN_PAIR_OBS:
                    xi = np.array([series[i][t] for t in common])
                    xj = np.array([series[j][t] for t in common])
                    c = pair_correlation(xi, xj, correlation)
                if math.isnan(c):
                    flagged.append((params[i].id, params[j].id))
                    c = 0.0
                corr[i, j] = corr[j, i] = c
        fixed = nearest_psd_correlation(corr, psd_floor)
        models.append(
            EpochModel(
                epoch_key=key,
                marginals=tuple(marginals),
                corr=CorrelationMatrix(fixed),
                sample_counts=tuple(len(s) for s in series),
                pair_counts=counts,
                flagged_pairs=tuple(flagged),
            )
        )
    return models


# ---------------------------------------------------------------------------
# Synthetic data


def _month_start(offset: int) -> datetime:
    y, m = divmod(SYNTHETIC_START.month - 1 + offset, 12)
    return SYNTHETIC_START.replace(year=SYNTHETIC_START.year + y, month=m + 1)


def generate_synthetic(
    drifts: Sequence[DriftSpec | BetaMarginal],
    corr: CorrelationMatrix,
    epochs: int,
    per_epoch: int,
    seed: int,
    params: Sequence[NoiseParameter] | None = None,
) -> list[CalibrationRecord]:
    """Draw ``per_epoch`` calibration snapshots in each of ``epochs`` consecutive months.

    All parameters share each snapshot's timestamp, so every pair aligns.
    Values are reported in physical units (dephasing times un-rescaled,
    complemented parameters flipped back to error rates).
    """
    if epochs < 1 or per_epoch < 2:
        raise ValueError("need epochs >= 1 and per_epoch >= 2")
    marginals = tuple(fit_hyperparams(s) if isinstance(s, DriftSpec) else s for s in drifts)
    d = len(marginals)
    if params is not None and len(params) != d:
        raise ValueError(f"{len(params)} parameters but {d} drift specs")
    step = SYNTHETIC_SPAN / per_epoch
    out = []
    for e in range(epochs):
        joint = CopulaJoint(marginals, corr, float(e))
        x = sample(joint, per_epoch, (int(seed), e))
        start = _month_start(e)
        for j in range(per_epoch):
            ts = start + timedelta(seconds=int((step * j).total_seconds()))
            for k in range(d):
                v = float(x[j, k])
                if params is not None:
                    p = params[k]
                    v = float(unit_to_raw(v, p))
                    if p.complement:
                        v = 1.0 - v
                pid = params[k].id if params is not None else k
                out.append(CalibrationRecord(ts, pid, v))
    return out


# ---------------------------------------------------------------------------
# JSON


def epochs_to_json(models: Sequence[EpochModel], params: Sequence[NoiseParameter] | None = None) -> dict:
    ids = [p.id for p in params] if params is not None else None
    out = []
    for m in models:
        out.append(
            {
                "epoch": m.epoch_key,
                "parameter_ids": ids if ids is not None else list(range(m.d)),
                "alpha": [mg.alpha0 for mg in m.marginals],
                "beta": [mg.beta0 for mg in m.marginals],
                "mean": m.means().tolist(),
                "variance": m.variances().tolist(),
                "sample_counts": list(m.sample_counts),
                "corr": m.corr.to_list(),
                "flagged_pairs": [list(p) for p in m.flagged_pairs],
            }
        )
    return {"epochs": out}


def epochs_from_json(doc: dict) -> list[EpochModel]:
    models = []
    for e in doc["epochs"]:
        marg = tuple(BetaMarginal.static(a, b) for a, b in zip(e["alpha"], e["beta"]))
        models.append(
            EpochModel(
                epoch_key=e["epoch"],
                marginals=marg,
                corr=CorrelationMatrix(np.array(e["corr"])),
                sample_counts=tuple(e["sample_counts"]),
                flagged_pairs=tuple(tuple(p) for p in e.get("flagged_pairs", [])),
            )
        )
    return models


def dump_json(doc, path: str | Path) -> None:
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
