"""Command-line front end.

    mpfest simulate --config sim.json --out data/
    mpfest estimate --config est.json --out results/
    mpfest compare  --config cmp.json --out results/
    mpfest diagnose --config diag.json --out results/

Configs are JSON; unknown keys are rejected and every run writes the fully
resolved config (with its SHA-256) next to its results. Relative paths in a
config are resolved against the config file's directory.

Exit codes: 0 success, 2 configuration or missing input, 3 numerical
failure, 4 dataset cannot support the estimation pipeline.
"""

import argparse
import copy
import hashlib
import io
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .diagnostics import COND_WARN, GAMMA_WARN, compare_report, dataset_conditioning
from .errors import ConfigError, MPFError, NoMatch, PipelineError
from .estimator import EstimatorConfig, PFReport, estimate
from .linmodel import LinearSystem, modal_decompose
from .simgen import (
    BoxSampler,
    PointSampler,
    VertexSampler,
    generate_scenarios,
    load_measurement_set,
    manifest_dict,
    write_trajectory_csv,
)
from .symmetry import SymmetryConfig

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_PIPELINE = 0, 2, 3, 4

REQUIRED = object()

DEFAULTS = {
    "simulate": {
        "system": REQUIRED,
        "dataset": {
            "count": None,
            "duration": 10.0,
            "dt": None,
            "sampler": {"kind": "rectangle", "half_widths": None, "edges": None,
                        "scale": 1.0, "points": None, "jitter": 0.0},
            "noise_sigma": 0.0,
            "seed": 0,
            "method": "analytic",
            "observed": None,
        },
        "output": {"directory": "."},
    },
    "estimate": {
        "dataset": {"manifest": REQUIRED},
        "symmetry": {"r_threshold": None, "norm": "euclidean", "weights": None,
                     "max_pair_residual": None, "candidate_stride": None},
        "transform": {"cond_bound": 1e6},
        "prony": {"order": "auto", "lag": "auto", "shared_poles": True,
                  "max_pole_segments": 16},
        "estimator": {"mode": "full", "modes": None, "freq_tol": 0.05,
                      "target_pairs": None, "groups": None, "stitch": "auto",
                      "exclusion_floor": 1e-6, "shape_floor": 1e-8},
        "diagnostics": {"gamma_warn": GAMMA_WARN, "cond_warn": COND_WARN},
        "output": {"directory": ".", "formats": ["json", "csv"]},
    },
    "compare": {
        "system": REQUIRED,
        "report": REQUIRED,
        "compare": {"tol_hz": 0.05, "min_magnitude": 0.0},
        "output": {"directory": "."},
    },
    "diagnose": {
        "dataset": {"manifest": REQUIRED},
        "diagnostics": {"gamma_warn": GAMMA_WARN, "cond_warn": COND_WARN},
        "output": {"directory": "."},
    },
}

SAMPLER_KINDS = ("rectangle", "parallelotope", "random", "points")


# -- config -------------------------------------------------------------------


def _merge(defaults, given, where):
    if not isinstance(given, dict):
        raise ConfigError(f"{where or 'config'}: expected an object")
    unknown = sorted(set(given) - set(defaults))
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown key(s) {', '.join(unknown)}")
    out = {}
    for key, dv in defaults.items():
        path = f"{where}.{key}" if where else key
        if key in given:
            gv = given[key]
            if isinstance(dv, dict):
                out[key] = _merge(dv, gv, path)
            else:
                out[key] = copy.deepcopy(gv)
        elif dv is REQUIRED:
            raise ConfigError(f"{path}: required")
        elif isinstance(dv, dict):
            out[key] = _merge(dv, {}, path)
        else:
            out[key] = copy.deepcopy(dv)
    return out


def resolve_config(command, raw):
    """Defaults filled in, unknown keys rejected."""
    return _merge(DEFAULTS[command], raw, "")


def config_hash(cfg):
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def _path(base, p):
    p = Path(p)
    return p if p.is_absolute() else base / p


# -- output ---------------------------------------------------------------------


def atomic_write(path, text):
    """Write through a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dump(obj):
    return json.dumps(obj, indent=2, sort_keys=False) + "\n"


def _write_resolved(out, cfg):
    atomic_write(out / "resolved_config.json",
                 _dump({"config": cfg, "sha256": config_hash(cfg), "version": __version__}))


class Console:
    def __init__(self, quiet=False):
        self.quiet = quiet

    def say(self, msg=""):
        if not self.quiet:
            print(msg)


# -- commands ---------------------------------------------------------------------


def _load_system(spec, base):
    if isinstance(spec, dict):
        return LinearSystem.from_dict(spec)
    p = _path(base, spec)
    if not p.exists():
        raise FileNotFoundError(f"system: {p} not found")
    return LinearSystem.from_json(p)


def _sampler(spec, n):
    kind = spec["kind"]
    if kind not in SAMPLER_KINDS:
        raise ConfigError(f"dataset.sampler.kind: expected one of {', '.join(SAMPLER_KINDS)}")
    if kind == "rectangle":
        hw = spec["half_widths"] if spec["half_widths"] is not None else [1.0] * n
        return VertexSampler(2.0 * np.diag(np.asarray(hw, dtype=float)), spec["jitter"])
    if kind == "parallelotope":
        if spec["edges"] is None:
            raise ConfigError("dataset.sampler.edges: required for a parallelotope sampler")
        return VertexSampler(np.asarray(spec["edges"], dtype=float), spec["jitter"])
    if kind == "random":
        return BoxSampler(spec["scale"])
    if spec["points"] is None:
        raise ConfigError("dataset.sampler.points: required for a points sampler")
    return PointSampler(spec["points"])


def cmd_simulate(cfg, base, out, con):
    sys_ = _load_system(cfg["system"], base)
    ds = cfg["dataset"]
    sampler = _sampler(ds["sampler"], sys_.n)
    count = ds["count"]
    if count is None and ds["sampler"]["kind"] == "random":
        raise ConfigError("dataset.count: required for a random sampler")
    ms = generate_scenarios(sys_, sampler, count, ds["duration"], ds["dt"], ds["seed"],
                            ds["noise_sigma"], ds["method"], ds["observed"])
    texts, names = [], []
    for tr in ms:
        buf = _csv_text(tr, ms.labels)
        texts.append(buf)
        names.append(f"{tr.scenario_id}.csv")
    # everything is computed before the first file is written
    for name, text in zip(names, texts):
        atomic_write(out / name, text)
    atomic_write(out / "manifest.json", _dump(manifest_dict(ms, names)))
    _write_resolved(out, cfg)
    con.say(f"wrote {len(names)} trajectories ({ms.n} states, dt={ms.dt:.6g} s) to {out}")
    return EXIT_OK


def _csv_text(tr, labels):
    buf = io.StringIO()
    write_trajectory_csv(tr, buf, labels)
    return buf.getvalue()


def _estimator_config(cfg):
    sym = SymmetryConfig(**{k: (tuple(v) if k == "weights" and v is not None else v)
                            for k, v in cfg["symmetry"].items()})
    p, e = cfg["prony"], cfg["estimator"]
    order = None if p["order"] in (None, "auto") else int(p["order"])
    lag = None if p["lag"] in (None, "auto") else int(p["lag"])
    return EstimatorConfig(
        symmetry=sym,
        target_pairs=e["target_pairs"],
        cond_bound=float(cfg["transform"]["cond_bound"]),
        order=order,
        lag=lag,
        modes=None if e["modes"] is None else tuple(float(f) for f in e["modes"]),
        freq_tol=float(e["freq_tol"]),
        shared_poles=bool(p["shared_poles"]),
        exclusion_floor=float(e["exclusion_floor"]),
        shape_floor=float(e["shape_floor"]),
        max_pole_segments=int(p["max_pole_segments"]),
        diagnostics=False,
    )


def _manifest(cfg, base):
    p = _path(base, cfg["dataset"]["manifest"])
    if not p.exists():
        raise FileNotFoundError(f"dataset.manifest: {p} not found")
    return load_measurement_set(p)


def cmd_estimate(cfg, base, out, con):
    from .diagnostics import attach_diagnostics

    ms = _manifest(cfg, base)
    ecfg = _estimator_config(cfg)
    e = cfg["estimator"]
    mode = e["mode"]
    kw = {}
    if mode == "subspace":
        if not e["groups"]:
            raise ConfigError("estimator.groups: required for the subspace mode")
        kw = {"groups": e["groups"], "stitch": e["stitch"]}
    elif mode not in ("full", "partial", "blackbox"):
        raise ConfigError(f"estimator.mode: unknown mode {mode!r}")
    report = estimate(ms, ecfg, mode, **kw)
    d = cfg["diagnostics"]
    attach_diagnostics(report, ms, gamma_warn=d["gamma_warn"], cond_warn=d["cond_warn"])
    report.provenance["config_sha256"] = config_hash(cfg)
    fmts = cfg["output"]["formats"]
    if "json" in fmts:
        atomic_write(out / "report.json", report.to_json() + "\n")
    if "csv" in fmts:
        atomic_write(out / "report.csv", report.to_csv())
    _write_resolved(out, cfg)
    for m, hz in enumerate(report.frequencies):
        con.say(f"mode {hz:.3f} Hz (lambda = {report.eigenvalues[m]:.4g})")
        for lab, v in report.table(m):
            con.say(f"  {lab:>12s}  {v:5.2f}")
    if report.diagnostics.get("low_confidence"):
        con.say("warning: coherent measurements, low-confidence modes "
                + ", ".join(f"{f:.3f} Hz" for f in report.diagnostics["low_confidence_modes"]))
    return EXIT_OK


def cmd_compare(cfg, base, out, con):
    sys_ = _load_system(cfg["system"], base)
    rp = _path(base, cfg["report"])
    if not rp.exists():
        raise FileNotFoundError(f"report: {rp} not found")
    report = PFReport.from_dict(json.loads(rp.read_text()))
    if len(report.labels) != sys_.n:
        raise ConfigError(f"report has {len(report.labels)} states, system has {sys_.n}")
    dec = modal_decompose(sys_)
    c = cfg["compare"]
    er = compare_report(report, dec, tol=c["tol_hz"], min_magnitude=c["min_magnitude"])
    doc = er.to_dict()
    doc["config_sha256"] = config_hash(cfg)
    atomic_write(out / "errors.json", _dump(doc))
    _write_resolved(out, cfg)
    for hz in er.meta["unmatched_hz"]:
        con.say(f"warning: {NoMatch.__name__}: no model mode within "
                f"{c['tol_hz']} Hz of {hz:.3f} Hz")
    con.say(f"max |e2| = {er.max_abs_e2:.4g} %")
    return EXIT_OK


def cmd_diagnose(cfg, base, out, con):
    ms = _manifest(cfg, base)
    d = cfg["diagnostics"]
    reps, worst = dataset_conditioning(ms, d["gamma_warn"], d["cond_warn"])
    doc = {
        "trajectories": [r.to_dict() for r in reps],
        "worst": worst.to_dict() if worst else None,
        "warning_count": sum(r.warning for r in reps),
        "config_sha256": config_hash(cfg),
    }
    atomic_write(out / "conditioning.json", _dump(doc))
    _write_resolved(out, cfg)
    for r in reps:
        mark = "  WARN" if r.warning else ""
        con.say(f"{r.source}: gamma={r.gamma:.4f} pair={r.pair} "
                f"bound={r.condition_lower_bound:.4g} cond={r.condition_estimate:.4g}{mark}")
    if worst is not None:
        con.say(f"worst: {worst.source} (cond {worst.condition_estimate:.4g})")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "compare": cmd_compare,
    "diagnose": cmd_diagnose,
}


def build_parser():
    ap = argparse.ArgumentParser(prog="mpfest", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--out", help="output directory (overrides output.directory)")
        p.add_argument("--seed", type=int, help="override dataset.seed")
        p.add_argument("--quiet", action="store_true")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    con = Console(args.quiet)
    command = args.command
    try:
        cfg_path = Path(args.config)
        if not cfg_path.exists():
            raise FileNotFoundError(f"config {cfg_path} not found")
        try:
            raw = json.loads(cfg_path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        cfg = resolve_config(command, raw)
        if args.seed is not None:
            if "dataset" not in cfg or "seed" not in cfg["dataset"]:
                raise ConfigError(f"--seed: {command} has no dataset seed")
            if args.seed < 0 or args.seed >= 2 ** 64:
                raise ConfigError("--seed: must be an unsigned 64-bit integer")
            cfg["dataset"]["seed"] = args.seed
        if args.out is not None:
            cfg["output"]["directory"] = args.out
        base = cfg_path.resolve().parent
        out = _path(Path.cwd(), cfg["output"]["directory"])
        return COMMANDS[command](cfg, base, out, con)
    except (ConfigError, FileNotFoundError, KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, MPFError) and not isinstance(exc, ConfigError):
            return _fail(exc, EXIT_PIPELINE if isinstance(exc, PipelineError) else EXIT_NUMERIC)
        return _fail(exc, EXIT_CONFIG)
    except PipelineError as exc:
        return _fail(exc, EXIT_PIPELINE)
    except (MPFError, np.linalg.LinAlgError, FloatingPointError) as exc:
        return _fail(exc, EXIT_NUMERIC)


def _fail(exc, code):
    print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
