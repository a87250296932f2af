"""Command-line front end: ``python -m arwssm <subcommand> [flags]``.

Every run writes its primary output file(s) plus ``manifest.json`` into the
output directory (``--out``, else ``$ARWSSM_OUT``, else the working
directory).  Primary outputs depend only on the flags and the seed; the
timestamp lives in the manifest only.  A manifest can be fed back through
``--config`` to repeat a run.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, rng
from .certifier import WALK_CAP, barrier_increment_samples, build_certificate, verify_certificate
from .dynamics import run_dynamics
from .engine import DEFAULT_CAP, stabilize
from .experiments import InsufficientResolution, ScanSpec, estimate_mu_c, replica_seeds, scan
from .fast import stabilize_fast, supports
from .invariants import run_all
from .lattice import Box, InstructionField, Model, parse_lambda, sample_poisson_config

OUT_ENV = "ARWSSM_OUT"
SUBCOMMANDS = ("stabilize", "dynamics", "certify", "sample-increments", "scan", "estimate-mu-c", "selftest")

# flag name -> (dest, type, default); a default of None means "subcommand decides"
COMMON = {
    "model": (str, "ssm"),
    "lambda": (str, "1"),
    "mu": (str, None),
    "L": (str, None),
    "n": (int, 10),
    "replicas": (int, None),
    "seed": (int, 0),
    "cap": (int, None),
    "format": (str, "csv"),
    "workers": (int, 1),
}
EXTRA = {
    "stabilize": {"policy": (str, "fifo"), "engine": (str, "auto")},
    "dynamics": {"t": (float, math.inf)},
    "certify": {},
    "sample-increments": {"count": (int, 100000), "mode": (str, "fresh"), "start": (int, None)},
    "scan": {"kernel": (str, "nn"), "observables": (str, None), "certifier_n": (int, None)},
    "estimate-mu-c": {"method": (str, "crossing"), "ceiling": (float, 1.2), "exponent": (float, 1.0),
                      "bootstrap": (int, 1000)},
    "selftest": {"scale": (float, 1.0)},
}


class UsageError(Exception):
    def __init__(self, flag, msg):
        super().__init__(f"--{flag}: {msg}")
        self.flag = flag


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="arwssm", description="ARW and stochastic sandpile simulator")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        for flag, (typ, _) in {**COMMON, **EXTRA[name]}.items():
            dest = flag.replace("-", "_")
            p.add_argument(f"--{flag.replace('_', '-')}", dest=dest, type=typ, default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--config", default=None)
    return parser


def load_config(path) -> dict:
    """``key = value`` lines, or a JSON object (a previous manifest works too)."""
    text = Path(path).read_text(encoding="utf-8")
    if text.lstrip().startswith("{"):
        data = json.loads(text)
        return dict(data.get("config", data))
    out = {}
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            key, sep, val = line.partition("=")
            if not sep:
                raise UsageError("config", f"bad line {line!r}")
            out[key.strip()] = val.strip()
    return out


def resolve(args) -> dict:
    """Merge defaults, config file and explicit flags (flags win)."""
    table = {**COMMON, **EXTRA[args.subcommand]}
    config = load_config(args.config) if args.config else {}
    config = {{"lam": "lambda", "Ls": "L", "mus": "mu"}.get(k, k).replace("-", "_"): v for k, v in config.items()}
    unknown = set(config) - set(table)
    if unknown:
        raise UsageError("config", f"unknown keys {sorted(unknown)}")
    cfg = {}
    for key, (typ, default) in table.items():
        val = getattr(args, key)
        if val is None and key in config:
            raw = config[key]
            if isinstance(raw, (list, tuple)):
                raw = ",".join(str(x) for x in raw)
            try:
                val = raw if raw is None else typ(raw)
            except (TypeError, ValueError):
                raise UsageError(key, f"bad value {raw!r} in config")
        cfg[key] = default if val is None else val
    if cfg["model"] not in ("arw", "ssm"):
        raise UsageError("model", "expected arw or ssm")
    if cfg["format"] not in ("csv", "records"):
        raise UsageError("format", "expected csv or records")
    try:
        parse_lambda(cfg["lambda"])
    except (ValueError, ZeroDivisionError):
        raise UsageError("lambda", f"expected a positive rational or inf, got {cfg['lambda']!r}")
    for key in ("seed", "workers"):
        if cfg[key] < 0 or (key == "workers" and cfg[key] < 1):
            raise UsageError(key, "must be positive")
    return cfg


def _model(cfg) -> Model:
    return Model.ssm() if cfg["model"] == "ssm" else Model.arw(cfg["lambda"])


def _float_list(cfg, key, default=None):
    raw = cfg[key] if cfg[key] is not None else default
    if raw is None:
        raise UsageError(key, "required")
    try:
        vals = [float(v) for v in str(raw).replace(",", " ").split()]
    except ValueError:
        raise UsageError(key, f"bad number in {raw!r}")
    if not vals or any(v < 0 for v in vals):
        raise UsageError(key, "expected non-negative numbers")
    return vals


def _one(cfg, key, default):
    vals = _float_list(cfg, key, default)
    if len(vals) != 1:
        raise UsageError(key, "expected a single value")
    return vals[0]


def records_text(records) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)


def records_csv(records) -> str:
    """CSV over the union of record keys; list values are joined with ``;``."""
    head = []
    for r in records:
        head += [k for k in r if k not in head]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(head)
    for r in records:
        row = []
        for k in head:
            v = r.get(k, "")
            if isinstance(v, (list, tuple)):
                v = ";".join(str(x) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            row.append(v)
        w.writerow(row)
    return buf.getvalue()


def tabular(cfg, records, stem) -> dict:
    if cfg["format"] == "csv":
        return {f"{stem}.csv": records_csv(records)}
    return {f"{stem}.jsonl": records_text(records)}


def _volume_config(cfg, model, default_L):
    L = int(_one(cfg, "L", default_L))
    mu = _one(cfg, "mu", None)
    pseed, fseed = replica_seeds(cfg["seed"], 0)
    box = Box.centered(L)
    return L, mu, box, sample_poisson_config(pseed, mu, box), InstructionField(fseed, model)


def cmd_stabilize(cfg):
    model = _model(cfg)
    L, mu, box, eta, fld = _volume_config(cfg, model, 100)
    cap = cfg["cap"] or DEFAULT_CAP
    if cfg["engine"] not in ("auto", "generic", "compiled"):
        raise UsageError("engine", "expected auto, generic or compiled")
    compiled = cfg["engine"] == "compiled" or (cfg["engine"] == "auto" and supports(fld) and len(box) > 2000)
    res = stabilize_fast(model, eta, box, fld, cap) if compiled else stabilize(model, eta, box, fld, cfg["policy"],
                                                                                   cap)
    sites = sorted(set(res.odometer.half_counts) | set(res.final.codes()))
    rows = [{"site": x[0], "half_count": res.odometer[x], "topplings": res.odometer.topplings(x),
             "initial": eta.code(x), "final": res.final.code(x)} for x in sites]
    summary = {"record": "summary", "L": L, "mu": mu, "truncated": res.truncated,
               "half_topplings": res.half_topplings, "origin_topplings": res.odometer.topplings((0,))}
    print(f"origin topplings {summary['origin_topplings']}, half-topplings {res.half_topplings}"
          f"{', truncated' if res.truncated else ''}")
    if cfg["format"] == "records":
        return {"stabilize.jsonl": records_text([summary] + rows)}, 0
    return {"stabilize.csv": records_csv(rows)}, 0


def cmd_dynamics(cfg):
    model = _model(cfg)
    L, mu, box, eta, fld = _volume_config(cfg, model, 50)
    clock_seed = rng.derive_seed(cfg["seed"], 0, 2)
    traj = run_dynamics(model, eta, fld, cfg["t"], clock_seed, cap=cfg["cap"] or DEFAULT_CAP,
                        keep_events=cfg["format"] == "records")
    print(f"quiescent {traj.quiescent}, t_final {traj.t_final:.6g}, origin topplings {traj.topplings((0,))}")
    if cfg["format"] == "records":
        return {"dynamics.jsonl": records_text(traj.records())}, 0
    rows = [{"site": x[0], "topplings": traj.odometer[x] // 2, "final": traj.final.code(x)}
            for x in sorted(set(traj.odometer.support()) | set(traj.final.codes()))]
    return {"dynamics.csv": records_csv(rows)}, 0


def cmd_certify(cfg):
    model = _model(cfg)
    if not model.is_ssm and model.instant_sleep:
        raise UsageError("lambda", "certificates need a finite sleep rate")
    n = cfg["n"]
    mu = _one(cfg, "mu", None)
    if mu <= 0:
        raise UsageError("mu", "must be positive")
    default_L = int(math.ceil(3 * n / mu)) + 100
    L, mu, box, eta, fld = _volume_config(cfg, model, default_L)
    cert = build_certificate(model, eta, fld, n, cap=cfg["cap"] or WALK_CAP, keep_traces=False)
    verdict = {"record": "verification", "success": cert.success, "failure_step": cert.failure_step,
               "failure_reason": cert.failure_reason, "walk_steps": cert.walk_steps, "L": L, "mu": mu}
    code = 1
    if cert.success:
        rep = verify_certificate(cert, eta, fld)
        verdict.update(verified=rep.ok, reason=rep.reason, origin_half=rep.origin_half,
                       generic_origin_half=rep.generic_origin_half, volume=list(rep.volume))
        code = 0 if rep.ok else 1
        print(f"certificate {'verified' if rep.ok else 'REJECTED: ' + rep.reason}; origin odometer {rep.origin_half}")
    else:
        print(f"certificate failed at step {cert.failure_step}: {cert.failure_reason}")
    rows = [{"step": k, "start": cert.starts[k], "barrier": cert.barriers[k],
             "kept_index": cert.kept[k][1] if k in cert.kept else None, "stop_index": cert.stop_index[k],
             "parity": cert.parities.get(k), "prefix_steps": cert.prefix[k][0],
             "prefix_hash": f"{cert.prefix[k][1]:016x}"} for k in cert.order() if k in cert.barriers]
    return {"certificate.txt": cert.to_text(), **tabular(cfg, [verdict] + rows, "verification")}, code


def cmd_sample_increments(cfg):
    model = _model(cfg)
    if cfg["mode"] not in ("fresh", "chain"):
        raise UsageError("mode", "expected fresh or chain")
    if cfg["count"] < 1:
        raise UsageError("count", "must be positive")
    sample = barrier_increment_samples(model, cfg["count"], cfg["seed"], cfg["start"], cfg["cap"], cfg["mode"])
    v = sample.values
    summary = {"model": model.kind, "lambda": "" if model.is_ssm else cfg["lambda"], "mode": sample.mode,
               "seed": cfg["seed"], "count": len(v), "start": sample.start, "mean": float(v.mean()),
               "stderr": float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else math.nan,
               "tails": sample.tails, "diverged": sample.diverged}
    print(f"mean increment {summary['mean']:.4f} +- {summary['stderr']:.4f} over {len(v)} samples")
    ks, counts = np.unique(v, return_counts=True)
    hist = [{"value": int(k), "count": int(c)} for k, c in zip(ks, counts)]
    if cfg["format"] == "records":
        return {"increments.jsonl": records_text([{"record": "summary", **summary}]
                                                  + [{"record": "histogram", **h} for h in hist])}, 0
    return {"increments.csv": records_csv([summary]), "increments_histogram.csv": records_csv(hist)}, 0


def cmd_scan(cfg):
    extra = {"certifier_n": cfg["certifier_n"] if cfg["certifier_n"] is not None else cfg["n"]}
    if cfg["observables"]:
        extra["observables"] = cfg["observables"]
    try:
        spec = ScanSpec(model=cfg["model"], lam=cfg["lambda"], kernel=cfg["kernel"],
                        mus=cfg["mu"] or "0.5", Ls=cfg["L"] or "100", replicas=cfg["replicas"] or 100,
                        cap=cfg["cap"] or ScanSpec.cap, seed=cfg["seed"], workers=cfg["workers"], **extra)
    except ValueError as err:
        raise UsageError("config", str(err))
    res = scan(spec, cfg["workers"])
    flagged = sum(c["flagged"] for c in res.cells)
    print(f"{len(res.cells)} cells, {flagged} flagged for truncation")
    if cfg["format"] == "records":
        return {"scan.jsonl": res.to_records()}, 0
    return {"scan.csv": res.to_csv()}, 0


def cmd_estimate_mu_c(cfg):
    model = _model(cfg)
    Ls = [int(x) for x in _float_list(cfg, "L", "1000,3000,10000")]
    if cfg["method"] not in ("crossing", "odometer"):
        raise UsageError("method", "expected crossing or odometer")
    try:
        est = estimate_mu_c(model, Ls, cfg["replicas"] or 200, cfg["seed"], cfg["method"], cfg["ceiling"],
                            cfg["exponent"], cfg["bootstrap"], cfg["cap"] or DEFAULT_CAP, cfg["workers"])
    except InsufficientResolution as err:
        print(f"no estimate: {err}")
        return tabular(cfg, [{"record": "estimate", "value": None, "reason": str(err)}], "mu_c"), 1
    lo, hi = est.interval
    print(f"mu_c estimate {est.value:.4f} (bootstrap 95% interval {lo:.4f} .. {hi:.4f})")
    return tabular(cfg, est.records(), "mu_c"), 0


def cmd_selftest(cfg):
    reports = run_all(cfg["seed"], cfg["scale"])
    for r in reports:
        print(r.line())
    rows = [{"suite": r.name, "ok": r.ok, "checked": r.checked, "failures": r.failures} for r in reports]
    return tabular(cfg, rows, "selftest"), 0 if all(r.ok for r in reports) else 1


COMMANDS = {
    "stabilize": cmd_stabilize,
    "dynamics": cmd_dynamics,
    "certify": cmd_certify,
    "sample-increments": cmd_sample_increments,
    "scan": cmd_scan,
    "estimate-mu-c": cmd_estimate_mu_c,
    "selftest": cmd_selftest,
}


def write_outputs(out_dir: Path, files: dict, manifest: dict):
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        with open(out_dir / name, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    with open(out_dir / "manifest.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = resolve(args)
        files, status = COMMANDS[args.subcommand](cfg)
    except UsageError as err:
        print(f"arwssm {args.subcommand}: error: {err}", file=sys.stderr)
        return 2
    except FileNotFoundError as err:
        print(f"arwssm {args.subcommand}: error: --config: {err}", file=sys.stderr)
        return 2
    out_dir = Path(args.out or os.environ.get(OUT_ENV) or ".")
    manifest = {"subcommand": args.subcommand, "config": {k: v for k, v in cfg.items() if v is not None
                                                          and not (isinstance(v, float) and math.isinf(v))},
                "seed": cfg["seed"], "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
                "version": __version__, "outputs": sorted(files), "exit_status": status}
    write_outputs(out_dir, files, manifest)
    return status


if __name__ == "__main__":
    sys.exit(main())
