"""End-to-end pipelines: epoch joints, distance tables, stability tables, scaling curves."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .config import DEFAULT_DRIFT, DEFAULT_OMEGA, RunConfig
from .copula import ClusterPartition, CopulaJoint, CorrelationMatrix, cluster_by_threshold, find_threshold
from .divergence import HellingerTriple, hellinger_clustered, hellinger_profile
from .ingest import aggregate_epochs, generate_synthetic, parse_csv
from .noise_model import DriftSpec, NoiseParameter, depolarizing_parameter_set, fit_hyperparams
from .simulator import BvCircuit, observable_samples
from .stability import (
    ScalingLawInput,
    StabilityReport,
    scaling_law_mean,
    stability_report,
    sup_observable_bv,
)

__all__ = [
    "EpochSeries",
    "model_series",
    "fitted_series",
    "series_from_config",
    "distance_table",
    "stability_table",
    "scaling_table",
    "bound_ratio_by_n",
]


@dataclass(frozen=True)
class EpochSeries:
    labels: tuple
    joints: tuple[CopulaJoint, ...]
    params: tuple[NoiseParameter, ...]

    def subset(self, ids: Sequence[int] | None) -> EpochSeries:
        if ids is None:
            return self
        pos = {p.id: i for i, p in enumerate(self.params)}
        missing = [i for i in ids if i not in pos]
        if missing:
            raise ValueError(f"unknown parameter ids {missing}")
        idx = [pos[i] for i in ids]
        return EpochSeries(self.labels, tuple(j.subset(idx) for j in self.joints), tuple(self.params[i] for i in idx))


def model_series(
    specs: Sequence[DriftSpec], corr: CorrelationMatrix, epochs: int, params: Sequence[NoiseParameter], anchor: str = "start"
) -> EpochSeries:
    """Exact joints at epochs ``0 .. epochs-1`` from drift specifications."""
    marginals = tuple(fit_hyperparams(s, anchor) for s in specs)
    return EpochSeries(
        tuple(range(epochs)), tuple(CopulaJoint(marginals, corr, float(t)) for t in range(epochs)), tuple(params)
    )


def fitted_series(cfg: RunConfig, lenient: bool = False) -> tuple[EpochSeries, list]:
    """Joints fitted from the configured CSV, or from freshly generated synthetic records."""
    params = cfg.params()
    data = cfg["data"]
    path = cfg.csv_path()
    if path is not None:
        records = parse_csv(path, [p.id for p in params], lenient=lenient)
    else:
        syn = cfg["synthetic"]
        records = generate_synthetic(cfg.drift_specs(), cfg.correlation(), syn["epochs"], syn["per_epoch"], cfg.seed, params)
    models = aggregate_epochs(records, params, data["window"], data["correlation"], data["psd_floor"])
    series = EpochSeries(tuple(m.epoch_key for m in models), tuple(m.joint() for m in models), params)
    return series, models


def series_from_config(cfg: RunConfig, lenient: bool = False) -> EpochSeries:
    if cfg["source"] == "fitted" or cfg.csv_path() is not None:
        return fitted_series(cfg, lenient)[0]
    return model_series(cfg.drift_specs(), cfg.correlation(), cfg.epochs(), cfg.params(), cfg["synthetic"]["anchor"])


def _partitions(joints: Sequence[CopulaJoint], max_dim: int, threshold: float | None) -> list[ClusterPartition]:
    thr = find_threshold([j.corr for j in joints], max_dim) if threshold is None else threshold
    return [cluster_by_threshold(j.corr, thr) for j in joints]


def distance_table(
    series: EpochSeries,
    ref: int,
    n_samples: int,
    seed: int,
    chunk_size: int = 1 << 16,
    clustering: dict | None = None,
) -> list[HellingerTriple]:
    """Distance from epoch ``ref`` to every epoch (including ``ref`` itself)."""
    joints = series.joints
    if not 0 <= ref < len(joints):
        raise ValueError(f"reference epoch {ref} out of range (have {len(joints)} epochs)")
    if clustering and clustering.get("enabled"):
        parts = _partitions(joints, clustering.get("max_cluster_dim", 7), clustering.get("threshold"))
        return [
            hellinger_clustered(joints[ref], q, parts[ref], part, n_samples, seed, chunk_size)
            for q, part in zip(joints, parts)
        ]
    return hellinger_profile(joints[ref], joints, n_samples, seed, chunk_size)


def stability_table(
    series: EpochSeries,
    distance_series: EpochSeries,
    circuit: BvCircuit | None,
    ref: int,
    distance_samples: int,
    observable_samples_n: int,
    seed: int,
    c: float = 1.0,
    chunk_size: int = 1 << 16,
    clustering: dict | None = None,
) -> list[StabilityReport]:
    """One report per non-reference epoch.

    The observable uses the same draw stream at every epoch, so ``s`` is a
    paired difference; its standard error is that of the per-draw differences.
    """
    distances = distance_table(distance_series, ref, distance_samples, seed, chunk_size, clustering)
    base = observable_samples(circuit, series.joints[ref], observable_samples_n, seed, chunk_size)
    out = []
    for t, joint in enumerate(series.joints):
        if t == ref:
            continue
        v = base if joint is series.joints[ref] else observable_samples(circuit, joint, observable_samples_n, seed, chunk_size)
        diff = v - base
        se = float(diff.std(ddof=1) / math.sqrt(diff.size))
        out.append(
            stability_report(
                (series.labels[ref], series.labels[t]), float(base.mean()), float(v.mean()), distances[t], c, se
            )
        )
    return out


def circuit_for(cfg: RunConfig) -> BvCircuit | None:
    if cfg.observable == "analytic":
        return None
    circ = cfg["circuit"]
    return BvCircuit(
        cfg.secret,
        cfg.params(),
        idle_times=tuple(circ["idle_times"]) if "idle_times" in circ else None,
        cnot_duration=circ["cnot_duration"],
        qubit_limit=circ["qubit_limit"],
    )


def default_c(cfg: RunConfig) -> float:
    st = cfg["stability"]
    if st["c"] is not None:
        return float(st["c"])
    if cfg.observable == "analytic":
        return sup_observable_bv(cfg.n, st["depolarizing_lower"])
    return 1.0


def bound_ratio_by_n(
    n_values: Sequence[int],
    spec: DriftSpec,
    rho: float,
    epochs: int,
    distance_samples: int,
    observable_samples_n: int,
    seed: int,
    ref: int = 0,
    target: int | None = None,
    c: float = 1.0,
) -> list[StabilityReport]:
    """Analytic-mode stability report between ``ref`` and ``target`` for each qubit count."""
    target = epochs - 1 if target is None else target
    out = []
    for n in n_values:
        params = depolarizing_parameter_set(n)
        series = model_series([spec] * n, CorrelationMatrix.equicorrelated(n, rho), epochs, params)
        pair = EpochSeries((series.labels[ref], series.labels[target]), (series.joints[ref], series.joints[target]), params)
        out.append(stability_table(pair, pair, None, 0, distance_samples, observable_samples_n, seed, c)[0])
    return out


def scaling_table(n_values: Sequence[int], t1: dict, t2: dict) -> list[dict]:
    rows = []
    for n in n_values:
        a = ScalingLawInput(n, t1["mu"], t1["sigma"], t1["rho"])
        b = ScalingLawInput(n, t2["mu"], t2["sigma"], t2["rho"])
        m1, m2 = scaling_law_mean(a), scaling_law_mean(b)
        rows.append({"n": n, "mean_t1": m1, "mean_t2": m2, "s": abs(m1 - m2)})
    return rows


def default_scaling_inputs(cfg: RunConfig) -> tuple[dict, dict]:
    sc = cfg["scaling"]
    spec = cfg.drift_specs()[0] if cfg["noise_model"] == "depolarizing" else None
    syn = cfg["synthetic"]
    if spec is None:
        d = {**DEFAULT_DRIFT["depolarizing"], "omega": DEFAULT_OMEGA, **syn.get("drift", {})}
        mu0, sigma0, omega = d["mu0"], d["sigma0"], d["omega"]
    else:
        mu0, sigma0, omega = spec.mu0, spec.sigma0, spec.omega
    rho = syn.get("equicorrelation", 0.5)
    t1 = sc.get("t1", {"mu": mu0, "sigma": sigma0, "rho": rho})
    t2 = sc.get("t2", {"mu": mu0, "sigma": sigma0 * math.sqrt(omega), "rho": rho})
    return t1, t2


def report_rows(reports: Sequence[StabilityReport]) -> list[dict]:
    return [
        {
            "epoch": r.epoch_pair[1],
            "s": r.s_observed,
            "s_max": r.s_max,
            "ratio": r.ratio,
            "H_n": r.distance.normalized,
            "stderr": r.s_stderr,
        }
        for r in reports
    ]


def attribution_rows(label, triple: HellingerTriple, params: Sequence[NoiseParameter]) -> list[dict]:
    """Per-parameter marginal distance and its share of the summed marginal distances."""
    total = float(np.sum(triple.marginal))
    return [
        {
            "epoch": label,
            "parameter_id": p.id,
            "kind": p.kind.value,
            "targets": "-".join(map(str, p.targets)),
            "H": h,
            "share": h / total if total > 0 else 0.0,
        }
        for p, h in zip(params, triple.marginal)
    ]
