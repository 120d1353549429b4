"""Command-line driver: ``roa-forge <command> --config cfg.json --seed N``.

Every command reads a JSON config and writes into an output directory::

    dataset.csv, pi_points.csv      gen-data
    model.json, train_report.json   train
    roa.json, certification.json    certify
    levelset.csv                    export-levelset
    timings.json                    wall-clock times of every stage

Wall-clock times are kept out of the other files so that identical
config and seed give byte-identical outputs.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import certify as cert
from . import dynamics as dyn
from . import lyap_init, nn, value
from .errors import ConfigurationError, ContractViolation, EstimationFailure, TrainingAborted

logger = logging.getLogger("roa_forge")

DATASET = "dataset.csv"
PI_POINTS = "pi_points.csv"
MODEL = "model.json"
TRAIN_REPORT = "train_report.json"
ROA = "roa.json"
REPORT = "certification.json"
LEVELSET = "levelset.csv"
TIMINGS = "timings.json"

LEVELSET_COLUMNS = ["x1", "x2", "omega_nn", "nu", "in_W_omega2", "in_E_c2", "in_E_c1", "safe"]


@dataclass
class PipelineConfig:
    system: dyn.SystemSpec
    scenario: int = 2
    value: value.ValueConfig = field(default_factory=value.ValueConfig)
    train: nn.TrainConfig = field(default_factory=nn.TrainConfig)
    verify: cert.CertifyConfig = field(default_factory=cert.CertifyConfig)
    resolution: int = 100
    out: str = "out"
    seed: int = 0


def _pick(d, cls):
    keys = cls.__dataclass_fields__.keys()
    unknown = set(d) - set(keys)
    if unknown:
        raise ConfigurationError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return {k: v for k, v in d.items() if k in keys}


def load_config(path: Optional[str], seed: int, scenario=None, out=None, slack=None) -> PipelineConfig:
    """Read the JSON config; command-line values override config fields."""
    raw = {}
    if path:
        with open(path) as fh:
            raw = json.load(fh)
    if "system" not in raw:
        raise ConfigurationError("config needs a 'system' entry")
    system = dyn.system_from_config(raw)
    scenario = int(scenario if scenario is not None else raw.get("scenario", 2))
    if scenario not in (1, 2):
        raise ConfigurationError("scenario must be 1 or 2")
    vraw = dict(raw.get("value", {}))
    vraw.setdefault("seed_base", seed)
    vcfg = value.ValueConfig(**_pick(vraw, value.ValueConfig))
    traw = dict(raw.get("train", {}))
    traw["seed"] = seed
    traw["hidden"] = tuple(traw.get("hidden", nn.default_hidden(system)))
    tcfg = nn.TrainConfig(**_pick(traw, nn.TrainConfig))
    craw = dict(raw.get("verify", {}))
    craw["seed"] = seed
    if slack is not None:
        craw["slack"] = float(slack)
    ccfg = cert.CertifyConfig(**_pick(craw, cert.CertifyConfig))
    resolution = int(raw.get("levelset", {}).get("resolution", 100))
    if resolution < 50:
        raise ConfigurationError("level-set resolution must be at least 50 per axis")
    return PipelineConfig(system, scenario, vcfg, tcfg, ccfg, resolution,
                          out if out is not None else raw.get("out", "out"), seed)


def _path(cfg: PipelineConfig, name: str) -> str:
    return os.path.join(cfg.out, name)


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _record_time(cfg, stage, seconds):
    path = _path(cfg, TIMINGS)
    data = {}
    if os.path.exists(path):
        with open(path) as fh:
            data = json.load(fh)
    data[stage] = seconds
    _write_json(path, data)


def _roa_and_system(cfg: PipelineConfig):
    """Initial ROA for the full disturbance set (cached in ``roa.json``) and the prepared system."""
    path = _path(cfg, ROA)
    if os.path.exists(path):
        roa = lyap_init.EllipsoidRoa.load(path)
    else:
        roa = lyap_init.initial_roa(cfg.system)
        roa.save(path)
    sys_ = cfg.system
    if sys_.alpha_kind == dyn.ALPHA_SCALED_NU:
        sys_ = dyn.with_lyapunov_matrix(sys_, roa.P)
    return dyn.with_scenario(sys_, cfg.scenario), roa


# ---------------------------------------------------------------------------
# commands


def cmd_list_systems(out=None) -> None:
    out = sys.stdout if out is None else out
    header = f"{'system':<12} {'n':>2} {'m':>2} {'W':<18} {'dt':>6}  domain"
    print(header, file=out)
    for name in dyn.SYSTEM_IDS:
        s = dyn.get_system(name)
        w = f"[{s.w_lo[0]:g}, {s.w_hi[0]:g}]"
        dom = " x ".join(f"[{lo:.4g}, {hi:.4g}]" for lo, hi in zip(s.domain_lo, s.domain_hi))
        print(f"{name:<12} {s.n:>2} {s.m:>2} {w:<18} {s.dt:>6g}  {dom}", file=out)


def cmd_gen_data(cfg: PipelineConfig) -> float:
    os.makedirs(cfg.out, exist_ok=True)
    sys_, _ = _roa_and_system(cfg)
    start = time.perf_counter()
    Xd = nn.sample_domain(sys_, cfg.train.Nd, cfg.seed)
    targets, diverged = value.w_targets(sys_, Xd, cfg.value)
    Xpi = nn.sample_domain(sys_, cfg.train.Npi, cfg.seed + 7919)
    elapsed = time.perf_counter() - start
    value.write_dataset_csv(_path(cfg, DATASET), Xd, targets, diverged)
    value.write_points_csv(_path(cfg, PI_POINTS), Xpi)
    _record_time(cfg, "gen_data", elapsed)
    print(f"gen-data: {Xd.shape[0]} rows, {int(diverged.sum())} diverged, {elapsed:.1f} s")
    return elapsed


def cmd_train(cfg: PipelineConfig):
    sys_, _ = _roa_and_system(cfg)
    Xd, yd, _ = value.read_dataset_csv(_path(cfg, DATASET))
    Xpi = value.read_points_csv(_path(cfg, PI_POINTS))
    model, report = nn.train(sys_, cfg.train, cfg.value, data=(Xd, yd), pi_points=Xpi)
    model.save(_path(cfg, MODEL))
    summary = report.to_dict()
    wall = summary.pop("wall_time_s")
    _write_json(_path(cfg, TRAIN_REPORT), summary)
    _record_time(cfg, "train", wall)
    print(f"train: loss {report.final_loss:.3e} (data {report.data_loss:.3e}, "
          f"physics {report.physics_loss:.3e}) after {report.epochs_run} epochs, {wall:.1f} s")
    return report


def cmd_certify(cfg: PipelineConfig) -> cert.CertificationReport:
    sys_, roa = _roa_and_system(cfg)
    model = nn.MlpModel.load(_path(cfg, MODEL))
    report = cert.certify(sys_, model, roa, cfg.verify)
    timing = report.seconds
    report.seconds = {}
    report.save(_path(cfg, REPORT))
    _record_time(cfg, "certify", timing)
    verdicts = ", ".join(f"{k}={v}" for k, v in report.verdicts.items())
    print(f"certify: c1={report.c1:.6g} c2={report.c2:.6g} omega1={report.omega1:.6g} "
          f"omega2={report.omega2:.6g} [{verdicts}]")
    for key, w in report.witnesses.items():
        print(f"  {key} witness x={w['x']} w={w['w']}")
    if report.failure:
        print(f"  failure: {report.failure} {report.estimates.get('error', '')}")
    return report


def _parse_slice(text: Optional[str]):
    """``x3=<v>`` fixes the third coordinate; ``x3=project`` takes the min over it."""
    if text is None:
        return 0.0
    key, _, val = text.partition("=")
    if key.strip() != "x3" or not val:
        raise ConfigurationError("--slice expects x3=<value> or x3=project")
    val = val.strip()
    return val if val == "project" else float(val)


def levelset_grid(sys_, model, roa, report: cert.CertificationReport, resolution=100, slice_value=0.0):
    """Rows ``(x1, x2, omega_nn, nu, in_W_omega2, in_E_c2, in_E_c1, safe)`` on a 2-D grid."""
    a1 = np.linspace(sys_.domain_lo[0], sys_.domain_hi[0], resolution)
    a2 = np.linspace(sys_.domain_lo[1], sys_.domain_hi[1], resolution)
    G1, G2 = np.meshgrid(a1, a2, indexing="ij")
    base = np.stack([G1.ravel(), G2.ravel()], axis=1)
    if sys_.n == 2:
        layers = [base]
    elif slice_value == "project":
        layers = [np.column_stack([base, np.full(len(base), v)])
                  for v in np.linspace(sys_.domain_lo[2], sys_.domain_hi[2], resolution)]
    else:
        v = float(slice_value)
        if not sys_.domain_lo[2] <= v <= sys_.domain_hi[2]:
            raise ConfigurationError("slice value lies outside the domain")
        layers = [np.column_stack([base, np.full(len(base), v)])]
    om = np.stack([nn.omega_nn(model, sys_, X) for X in layers])
    nu = np.stack([roa.nu(X) for X in layers])
    safe = np.stack([dyn.g_max(sys_, X) < 1.0 for X in layers])
    omega2 = report.omega2 if math.isfinite(report.omega2) else -math.inf
    c2 = report.c2 if math.isfinite(report.c2) else roa.c1
    in_w = om <= omega2
    # projections keep a cell when some x3 in the column qualifies
    row_safe = np.where(in_w.any(axis=0), (safe | ~in_w).all(axis=0), safe.any(axis=0))
    return {
        "x1": base[:, 0], "x2": base[:, 1],
        "omega_nn": om.min(axis=0), "nu": nu.min(axis=0),
        "in_W_omega2": in_w.any(axis=0), "in_E_c2": (nu <= c2).any(axis=0),
        "in_E_c1": (nu <= roa.c1).any(axis=0), "safe": row_safe,
    }


def cmd_export_levelset(cfg: PipelineConfig, slice_text=None) -> str:
    sys_, roa = _roa_and_system(cfg)
    model = nn.MlpModel.load(_path(cfg, MODEL))
    report = cert.CertificationReport.load(_path(cfg, REPORT))
    grid = levelset_grid(sys_, model, roa, report, cfg.resolution, _parse_slice(slice_text))
    path = _path(cfg, LEVELSET)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LEVELSET_COLUMNS)
        for i in range(len(grid["x1"])):
            row = []
            for c in LEVELSET_COLUMNS:
                v = grid[c][i]
                row.append(str(bool(v)).lower() if isinstance(v, (bool, np.bool_)) else repr(float(v)))
            writer.writerow(row)
    print(f"export-levelset: {len(grid['x1'])} rows -> {path}")
    return path


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="roa-forge", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=["list-systems", "gen-data", "train", "certify",
                                            "export-levelset", "run-all"])
    parser.add_argument("--config", help="JSON pipeline configuration")
    parser.add_argument("--seed", type=int, help="seed for every random draw")
    parser.add_argument("--scenario", type=int, choices=[1, 2])
    parser.add_argument("--out", help="output directory (overrides the config)")
    parser.add_argument("--slice", dest="slice_text", help="x3=<v> or x3=project (3-D systems)")
    parser.add_argument("--slack", type=float, help="inflate every interval enclosure by this amount")
    parser.add_argument("--omega2-offset", type=float, default=0.0,
                        help="add this to the refined omega2 before the final verdicts")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "list-systems":
        cmd_list_systems()
        return 0
    if args.config is None or args.seed is None:
        print("error: --config and --seed are required", file=sys.stderr)
        return 1
    try:
        cfg = load_config(args.config, args.seed, args.scenario, args.out, args.slack)
        if args.omega2_offset:
            cfg.verify = cert.CertifyConfig(**{**cfg.verify.__dict__, "omega2_offset": args.omega2_offset})
        os.makedirs(cfg.out, exist_ok=True)
        if args.command in ("gen-data", "run-all"):
            cmd_gen_data(cfg)
        if args.command in ("train", "run-all"):
            cmd_train(cfg)
        code = 0
        if args.command in ("certify", "run-all"):
            code = cmd_certify(cfg).exit_code()
        if args.command in ("export-levelset", "run-all"):
            cmd_export_levelset(cfg, args.slice_text)
        return code
    except TrainingAborted as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return cert.EXIT_TRAINING
    except EstimationFailure as exc:
        print(f"estimation failed: {exc}", file=sys.stderr)
        return cert.EXIT_ESTIMATION
    except (ConfigurationError, ContractViolation, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return cert.EXIT_GENERIC


if __name__ == "__main__":
    sys.exit(main())
