"""Command-line front end: ``reliab fit|distance|verify|scaling|generate``."""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .experiments import (
    attribution_rows,
    bound_ratio_by_n,
    circuit_for,
    default_c,
    default_scaling_inputs,
    distance_table,
    fitted_series,
    report_rows,
    scaling_table,
    series_from_config,
    stability_table,
)
from .ingest import DataError, dump_json, epochs_to_json, generate_synthetic, write_csv
from .noise_model import DriftSpec

log = logging.getLogger("reliab")

EXIT_OK = 0
EXIT_BOUND_VIOLATED = 1
EXIT_CONFIG = 2
EXIT_DATA = 3


def _finite(x: float):
    return x if math.isfinite(x) else None


def _write_table(rows: Sequence[dict], path: Path, columns: Sequence[str] | None = None) -> None:
    columns = list(columns or (rows[0].keys() if rows else []))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([repr(float(r[c])) if isinstance(r[c], float) else r[c] for c in columns])


def _out_dir(cfg: RunConfig, args) -> Path:
    out = Path(args.out) if args.out else Path(cfg["output_dir"])
    if not out.is_absolute() and not args.out:
        out = cfg.base_dir / out
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_generate(cfg: RunConfig, args) -> int:
    syn = cfg["synthetic"]
    params = cfg.params()
    records = generate_synthetic(cfg.drift_specs(), cfg.correlation(), syn["epochs"], syn["per_epoch"], cfg.seed, params)
    path = _out_dir(cfg, args) / "calibration.csv"
    write_csv(records, path)
    log.info("wrote %d records to %s", len(records), path)
    return EXIT_OK


def cmd_fit(cfg: RunConfig, args) -> int:
    series, models = fitted_series(cfg, args.lenient)
    path = _out_dir(cfg, args) / "epochs.json"
    dump_json(epochs_to_json(models, series.params), path)
    log.info("fitted %d epochs -> %s", len(models), path)
    return EXIT_OK


def _epoch_index(series, label) -> int:
    for i, lab in enumerate(series.labels):
        if str(lab) == str(label):
            return i
    raise ConfigError(f"epoch {label!r} not found; available: {', '.join(map(str, series.labels))}")


def cmd_distance(cfg: RunConfig, args) -> int:
    series = series_from_config(cfg, args.lenient)
    ref = _epoch_index(series, args.ref_epoch) if args.ref_epoch is not None else cfg["stability"]["reference_epoch"]
    mc = cfg["monte_carlo"]
    triples = distance_table(series, ref, mc["distance_samples"], cfg.seed, mc["chunk_size"], cfg["clustering"])
    picks = range(len(series.labels)) if args.epoch is None else [_epoch_index(series, args.epoch)]
    out = _out_dir(cfg, args)
    rows, attribution, report = [], [], []
    for t in picks:
        tr = triples[t]
        row = {"epoch": series.labels[t]}
        row.update({f"H_X{k}": h for k, h in enumerate(tr.marginal)})
        row.update({"H_n": tr.normalized, "H_a": tr.averaged, "H_r": tr.raw, "H_r_stderr": tr.stderr})
        rows.append(row)
        attribution += attribution_rows(series.labels[t], tr, series.params)
        report.append({"reference": series.labels[ref], "epoch": series.labels[t], **tr.to_dict()})
    _write_table(rows, out / "distances.csv")
    _write_table(attribution, out / "attribution.csv", ["epoch", "parameter_id", "kind", "targets", "H", "share"])
    dump_json({"distances": report}, out / "distance.json")
    return EXIT_OK


def cmd_verify(cfg: RunConfig, args) -> int:
    series = series_from_config(cfg, args.lenient)
    st, mc = cfg["stability"], cfg["monte_carlo"]
    ref = st["reference_epoch"]
    if ref >= len(series.joints):
        raise ConfigError(f"reference_epoch {ref} out of range ({len(series.joints)} epochs)")
    try:
        dist_series = series.subset(st["distance_parameters"])
    except ValueError as exc:
        raise ConfigError(f"distance_parameters: {exc}") from None
    c = default_c(cfg)
    reports = stability_table(
        series,
        dist_series,
        circuit_for(cfg),
        ref,
        mc["distance_samples"],
        mc["observable_samples"],
        cfg.seed,
        c,
        mc["chunk_size"],
        cfg["clustering"],
    )
    out = _out_dir(cfg, args)
    _write_table(report_rows(reports), out / "s_by_smax.csv", ["epoch", "s", "s_max", "ratio", "H_n", "stderr"])
    holds = all(r.holds for r in reports)
    doc = {
        "c": c,
        "observable": cfg.observable,
        "reference_epoch": series.labels[ref],
        "bound_holds": holds,
        "max_ratio": _finite(max((r.ratio for r in reports), default=0.0)),
        "reports": [{**r.to_dict(), "ratio": _finite(r.ratio)} for r in reports],
    }
    dump_json(doc, out / "stability.json")
    for r in reports:
        log.info("epoch %s: s=%.3g s_max=%.3g ratio=%.3g", r.epoch_pair[1], r.s_observed, r.s_max, r.ratio)
    return EXIT_OK if holds else EXIT_BOUND_VIOLATED


def cmd_scaling(cfg: RunConfig, args) -> int:
    sc = cfg["scaling"]
    t1, t2 = default_scaling_inputs(cfg)
    try:
        rows = scaling_table(sc["n_values"], t1, t2)
    except ValueError as exc:
        raise ConfigError(f"scaling: {exc}") from None
    columns = ["n", "mean_t1", "mean_t2", "s"]
    if sc["with_bound"]:
        spec = DriftSpec(t1["mu"], t1["sigma"], (t2["sigma"] / t1["sigma"]) ** 2, cfg.epochs() - 1)
        mc = cfg["monte_carlo"]
        reps = bound_ratio_by_n(
            sc["n_values"], spec, t1["rho"], cfg.epochs(), mc["distance_samples"], mc["observable_samples"], cfg.seed
        )
        for row, rep in zip(rows, reps):
            row.update({"s_mc": rep.s_observed, "s_mc_stderr": rep.s_stderr, "s_max": rep.s_max, "ratio": rep.ratio})
        columns += ["s_mc", "s_mc_stderr", "s_max", "ratio"]
    _write_table(rows, _out_dir(cfg, args) / "scaling.csv", columns)
    return EXIT_OK


COMMANDS = {
    "fit": cmd_fit,
    "distance": cmd_distance,
    "verify": cmd_verify,
    "scaling": cmd_scaling,
    "generate": cmd_generate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reliab", description="Noise-drift reliability analysis for the Bernstein-Vazirani circuit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="JSON run configuration")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--out", default=None, help="output directory (overrides output_dir)")
    parser.add_argument("--lenient", action="store_true", help="skip CSV rows with unknown parameter ids")
    parser.add_argument("--ref-epoch", default=None, help="distance: reference epoch label")
    parser.add_argument("--epoch", default=None, help="distance: only this epoch")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be non-negative")
            cfg.raw["seed"] = args.seed
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
