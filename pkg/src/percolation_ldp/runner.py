"""Experiment runner: one entry point per experiment, with a reproducible manifest.

``run(command, config, **params)`` validates the configuration, executes the
experiment, and writes its outputs plus ``manifest.json`` into a directory
named by the hash of the manifest's reproducible content (command, params,
configuration and seed; worker count and timestamps are excluded, since they
never change the outputs).  ``main(argv)`` is a thin argument parser over
``run`` for ``python -m percolation_ldp``.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path

import numpy as np

from .config import (ConfigError, InfeasibleConfig, default_workers, to_jsonable,
                     validate_config)
from .events import ConstrainedConnection, HausdorffBall, PointInCluster, PointsInCluster
from .geometry import GeometryError, PolygonalSet
from .lattice import (LatticeConfig, SubcriticalityError, auto_box_radius, extract_origin_cluster,
                      lattice_site, sample_configuration)
from .ldp import (ResolutionError, concentration_csv_rows, estimate_rate, rate_csv_rows,
                  sample_conditioned, steiner_concentration, write_csv)
from .norm import NormModel, RateFit, build_norm_model, default_directions, estimate_norm, synthetic_model
from .oracle import EnumerationCapError, exact_event_probability
from .stats import derive_seed

MANIFEST_VERSION = "manifest/1"
COMMANDS = ("sample", "oracle", "estimate-norm", "build-norm", "steiner", "ldp-rate",
            "conditioned", "concentration", "selftest", "replay")
EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_INFEASIBLE = 0, 1, 2, 3


def tool_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


@dataclass
class RunResult:
    status: int
    out_dir: Path | None = None
    files: dict = field(default_factory=dict)
    stdout: str = ""
    error: dict | None = None
    manifest: dict | None = None


class _Outputs:
    def __init__(self):
        self.files: dict[str, bytes] = {}
        self.lines: list[str] = []
        self.fingerprint: str | None = None

    def text(self, name, text):
        self.files[name] = text.encode()

    def json(self, name, payload):
        self.text(name, json.dumps(payload, indent=2, sort_keys=True) + "\n")

    def say(self, line):
        self.lines.append(str(line))


# --------------------------------------------------------------------------
# argument helpers
# --------------------------------------------------------------------------

def parse_point(text) -> tuple:
    if isinstance(text, str):
        return tuple(float(x) for x in text.split(","))
    return tuple(float(x) for x in text)


def _points(value) -> list[tuple]:
    if value is None:
        return []
    if isinstance(value, str):
        value = value.split()
    return [parse_point(v) for v in value]


def load_gauge(source, d: int = 2) -> NormModel:
    """A synthetic gauge by name, or a corr-norm/1 JSON file."""
    source = source or "euclidean"
    if source in NormModel.ANALYTIC:
        return synthetic_model(source, d)
    with open(source) as fh:
        return NormModel.from_json(fh.read())


def parse_set(source) -> PolygonalSet:
    """``origin``, ``segment:x,y`` (from the origin), ``polyline:x,y;x,y;..`` or a JSON file."""
    if isinstance(source, PolygonalSet):
        return source
    if source in (None, "origin"):
        return PolygonalSet.origin()
    kind, _, rest = source.partition(":")
    if kind == "segment":
        return PolygonalSet.segment((0.0, 0.0), parse_point(rest))
    if kind == "polyline":
        return PolygonalSet.polyline([parse_point(p) for p in rest.split(";")])
    with open(source) as fh:
        return PolygonalSet.from_json(fh.read())


def _lattice(cfg, n=1, box_radius=None, **kw) -> LatticeConfig:
    lat = cfg["lattice"]
    R = box_radius or lat["box_radius"] or 1
    return LatticeConfig(d=lat["d"], n=n, p=lat["p"], box_radius=R,
                         p_c=lat["p_c"] or None, **kw)


def _fmt(x):
    return f"{x:.10g}"


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def _cmd_sample(cfg, params, out: _Outputs, workers):
    n = int(params.get("n", 1))
    R = cfg["lattice"]["box_radius"] or auto_box_radius(2 * n)
    config = _lattice(cfg, n, R)
    bc = sample_configuration(config, cfg["run"]["seed"])
    cl = extract_origin_cluster(bc)
    out.json("cluster.json", {
        "n": n, "box_radius": R, "open_edges": bc.edge_ids(),
        "cluster_sites": cl.sites.tolist(), "touches_boundary": cl.touches_boundary})
    out.say(f"open edges {len(bc.open_edges)} of {config.num_edges}; "
            f"origin cluster has {len(cl)} sites; touches boundary {cl.touches_boundary}")


def _oracle_event(params, n):
    kind = params.get("event", "point-in-cluster")
    targets = _points(params.get("target"))
    if kind == "point-in-cluster":
        if len(targets) != 1:
            raise ValueError("point-in-cluster needs exactly one --target")
        return PointInCluster(targets[0])
    if kind == "points-in-cluster":
        return PointsInCluster(tuple(targets))
    eps = float(params.get("eps", 0.5))
    if kind == "hausdorff-ball":
        return HausdorffBall(parse_set(params.get("set")), eps)
    if kind == "constrained-connection":
        if len(targets) != 2:
            raise ValueError("constrained-connection needs two --target points")
        return ConstrainedConnection(targets[0], targets[1], eps)
    raise ValueError(f"unknown event kind {kind!r}")


def _cmd_oracle(cfg, params, out: _Outputs, workers):
    n = int(params.get("n", 1))
    lat = cfg["lattice"]
    if params.get("unit_square"):
        edges = (((0, 0), (1, 0)), ((1, 0), (1, 1)), ((0, 1), (1, 1)), ((0, 0), (0, 1)))
        config = LatticeConfig(d=2, n=1, p=lat["p"], box_radius=1, edge_subset=edges)
    else:
        config = _lattice(cfg, n, lat["box_radius"] or 1)
    event = _oracle_event(params, config.n)
    prob = exact_event_probability(config, event, cfg["percolation"]["enumeration_cap"])
    out.json("oracle.json", {"event": event.kind, "probability": prob, "p": config.p,
                             "n": config.n, "edges": config.num_edges})
    out.say(_fmt(prob))


def _cmd_estimate_norm(cfg, params, out: _Outputs, workers):
    lat = cfg["lattice"]
    template = _lattice(cfg, 1, lat["box_radius"] or 1)
    dirs = default_directions(lat["d"])
    k = cfg["norm"]["directions"]
    if k:
        dirs = dirs[np.linspace(0, len(dirs) - 1, k).round().astype(int)]
    model = estimate_norm(template, cfg["norm"]["scales"], dirs,
                          cfg["percolation"]["replicates"], cfg["run"]["seed"], workers)
    out.fingerprint = model.fingerprint
    out.text("norm.json", model.to_json() + "\n")
    rows = ["direction,slope,intercept"]
    for f in model.provenance["fits"]:
        rows.append(f"\"{' '.join(repr(x) for x in f['direction'])}\",{f['slope']!r},"
                    f"{f['intercept']!r}")
    out.text("fits.csv", "\n".join(rows) + "\n")
    out.say(f"norm model {model.fingerprint} from {len(dirs)} directions")


def _cmd_build_norm(cfg, params, out: _Outputs, workers):
    source = params.get("fits")
    if source is None or source in NormModel.ANALYTIC:
        model = synthetic_model(source or "euclidean", cfg["lattice"]["d"])
    else:
        with open(source) as fh:
            payload = json.load(fh)
        fits = payload["provenance"]["fits"] if "provenance" in payload else payload
        model = build_norm_model([RateFit(tuple(f["direction"]), f["slope"], f.get("intercept", 0.0))
                                  for f in fits])
    out.fingerprint = model.fingerprint
    out.text("norm.json", model.to_json() + "\n")
    out.say(f"norm model {model.fingerprint} ({model.kind})")


def _cmd_steiner(cfg, params, out: _Outputs, workers):
    from .steiner import solve_steiner

    N = load_gauge(params.get("gauge"), cfg["lattice"]["d"])
    out.fingerprint = N.fingerprint
    pts = [p for p in _points(params.get("terminals")) if any(p)]
    trees = solve_steiner(pts, N, cfg["steiner"]["tol"])
    best = min(t.total_length for t in trees)
    out.json("steiner.json", [json.loads(t.to_json()) for t in trees])
    out.say(f"minimum {_fmt(best)}; {len(trees)} minimal tree{'s' if len(trees) != 1 else ''}")


def _cmd_ldp_rate(cfg, params, out: _Outputs, workers):
    S = parse_set(params.get("set"))
    N = load_gauge(params["gauge"], cfg["lattice"]["d"]) if params.get("gauge") else None
    if N is not None:
        out.fingerprint = N.fingerprint
    template = _lattice(cfg)
    est = estimate_rate(S, cfg["ldp"]["eps"], cfg["ldp"]["scales"], template,
                        cfg["percolation"]["replicates"], cfg["run"]["seed"], workers, N)
    out.text("rate.csv", write_csv(rate_csv_rows(est)))
    for r in est.rows:
        out.say(f"n={r.n} hits={r.hits}/{r.replicates} rate={_fmt(r.rate)}")
    if est.lower_bound is not None:
        out.say(f"no hits at any scale: rate >= {_fmt(est.lower_bound)}")


def _cmd_conditioned(cfg, params, out: _Outputs, workers):
    pts = _points(params.get("points"))
    n = int(params.get("n", cfg["ldp"]["scales"][0]))
    budget = int(params.get("budget", cfg["ldp"]["budgets"][0]))
    template = _lattice(cfg)
    clusters, rep = sample_conditioned(pts, n, template, budget, derive_seed(cfg["run"]["seed"], n),
                                       workers)
    sizes = [len(c) for c in clusters]
    out.json("conditioned.json", {
        "n": n, "points": [list(p) for p in pts], "attempts": rep.attempts,
        "acceptances": rep.acceptances, "box_radius": rep.box_radius,
        "boundary_touches": rep.boundary_touches, "draw_touches": rep.draw_touches,
        "cluster_sizes": sizes})
    out.say(f"accepted {rep.acceptances} of {rep.attempts}")


def _cmd_concentration(cfg, params, out: _Outputs, workers):
    pts = _points(params.get("points"))
    N = load_gauge(params.get("gauge"), cfg["lattice"]["d"])
    out.fingerprint = N.fingerprint
    ldp = cfg["ldp"]
    scales, budgets = ldp["scales"], ldp["budgets"]
    if len(budgets) != len(scales):
        raise ConfigError([("ldp", "budgets", "needs one budget per scale")])
    trees, reps = steiner_concentration(pts, ldp["eps"], scales, _lattice(cfg), list(budgets), N,
                                        cfg["run"]["seed"], workers)
    out.text("concentration.csv", write_csv(concentration_csv_rows(reps)))
    for r in reps:
        flag = " (inconclusive)" if r.acceptances < ldp["min_acceptances"] else ""
        frac = "n/a" if r.failure_fraction is None else _fmt(r.failure_fraction)
        out.say(f"n={r.n} accepted={r.acceptances} failure_fraction={frac}{flag}")
    gap = reps[0].gap if reps else None
    out.say(f"reference gap (upper bound) {_fmt(gap) if gap is not None else 'n/a'}")


def _cmd_selftest(cfg, params, out: _Outputs, workers):
    from .selftest import run_all

    ok, results = run_all()
    lines = [f"{'PASS' if r[2] else 'FAIL'} {r[0]}.{r[1]}{'  ' + r[3] if r[3] else ''}"
             for r in results]
    out.text("selftest.txt", "\n".join(lines) + "\n")
    for line in lines:
        out.say(line)
    if not ok:
        raise _CheckFailed("selftest failed")


class _CheckFailed(RuntimeError):
    pass


HANDLERS = {
    "sample": _cmd_sample, "oracle": _cmd_oracle, "estimate-norm": _cmd_estimate_norm,
    "build-norm": _cmd_build_norm, "steiner": _cmd_steiner, "ldp-rate": _cmd_ldp_rate,
    "conditioned": _cmd_conditioned, "concentration": _cmd_concentration,
    "selftest": _cmd_selftest,
}

# flags that override configuration values
OVERRIDES = {"p": ("lattice", "p"), "d": ("lattice", "d"), "box_radius": ("lattice", "box_radius"),
             "eps": ("ldp", "eps"), "scales": ("ldp", "scales"), "budgets": ("ldp", "budgets"),
             "replicates": ("percolation", "replicates")}


# --------------------------------------------------------------------------
# orchestration
# --------------------------------------------------------------------------

def _error(kind, exc, code, fields=None):
    payload = {"status": "error", "exit_code": code, "kind": kind, "message": str(exc)}
    if fields:
        payload["fields"] = [{"section": s, "key": k, "message": m} for s, k, m in fields]
    return RunResult(code, error=payload)


def manifest_key(manifest: dict) -> str:
    """Hash of the parts of a manifest that determine the outputs."""
    cfg = {s: dict(v) for s, v in manifest["config"].items()}
    cfg["run"] = {k: v for k, v in cfg["run"].items() if k != "workers"}
    body = {"command": manifest["command"], "params": manifest["params"], "config": cfg,
            "version": manifest["version"]}
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()[:16]


def _jsonable_params(params):
    out = {}
    for k, v in sorted(params.items()):
        if v is None or k in OVERRIDES:
            continue
        if isinstance(v, tuple):
            v = list(v)
        out[k] = v
    return out


def run(command: str, config=None, out: str | os.PathLike | None = None, seed: int | None = None,
        workers: int | None = None, **params) -> RunResult:
    """Run one experiment; never raises for user errors, returns a status instead."""
    if command == "replay":
        return replay(params.get("manifest"), out=out, workers=workers)
    if command not in HANDLERS:
        return _error("usage", f"unknown command {command!r}; choose from {list(COMMANDS)}",
                      EXIT_CONFIG)
    if config is not None and isinstance(config, (str, os.PathLike)) and not os.path.isfile(config):
        return _error("config", f"config file {config} does not exist", EXIT_CONFIG)
    overrides = {"run": {"seed": seed, "workers": workers}}
    for k, (sec, key) in OVERRIDES.items():
        if params.get(k) is not None:
            overrides.setdefault(sec, {})[key] = params[k]
    try:
        cfg, defaults = validate_config(config, overrides)
    except ConfigError as exc:
        return _error("config", exc, EXIT_CONFIG, exc.fields)
    except InfeasibleConfig as exc:
        return _error("infeasible", exc, EXIT_INFEASIBLE)
    if "run.workers" in defaults:
        cfg["run"]["workers"] = default_workers()
    nworkers = cfg["run"]["workers"]
    started = time.time()
    outputs = _Outputs()
    try:
        HANDLERS[command](cfg, params, outputs, nworkers)
    except ConfigError as exc:
        return _error("config", exc, EXIT_CONFIG, exc.fields)
    except (SubcriticalityError, InfeasibleConfig, ResolutionError, EnumerationCapError) as exc:
        return _error("infeasible", exc, EXIT_INFEASIBLE)
    except (ValueError, GeometryError, OSError, KeyError) as exc:
        return _error("input", exc, EXIT_CONFIG)
    except _CheckFailed as exc:
        res = _error("selftest", exc, EXIT_FAIL)
        res.stdout = "\n".join(outputs.lines) + "\n"
        return res
    except Exception as exc:
        return _error("runtime", f"{type(exc).__name__}: {exc}", EXIT_FAIL)
    manifest = {
        "version": MANIFEST_VERSION,
        "command": command,
        "params": _jsonable_params(params),
        "config": to_jsonable(cfg),
        "defaults_applied": defaults,
        "seed": cfg["run"]["seed"],
        "tool_version": tool_version(),
        "norm_fingerprint": outputs.fingerprint,
        "timestamps": {"started": started, "finished": time.time()},
        "outputs": sorted(outputs.files),
    }
    key = manifest_key(manifest)
    manifest["run_id"] = key
    out_dir = None
    files = {}
    if out is not None:
        out_dir = Path(out) / f"{command}-{key}"
        out_dir.mkdir(parents=True, exist_ok=True)
        for name, data in outputs.files.items():
            (out_dir / name).write_bytes(data)
            files[name] = out_dir / name
        (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        files["manifest.json"] = out_dir / "manifest.json"
    stdout = "\n".join(outputs.lines) + ("\n" if outputs.lines else "")
    return RunResult(EXIT_OK, out_dir, files, stdout, None, manifest)


def replay(manifest_path, out=None, workers=None) -> RunResult:
    """Re-run the experiment a manifest describes."""
    if manifest_path is None or not os.path.isfile(manifest_path):
        return _error("input", f"manifest {manifest_path} not found", EXIT_CONFIG)
    with open(manifest_path) as fh:
        m = json.load(fh)
    if m.get("version") != MANIFEST_VERSION:
        return _error("input", f"unsupported manifest version {m.get('version')!r}", EXIT_CONFIG)
    cfg = m["config"]
    if workers is not None:
        cfg["run"]["workers"] = workers
    return run(m["command"], config=cfg, out=out, **m["params"])


# --------------------------------------------------------------------------
# argv
# --------------------------------------------------------------------------

def _parser():
    ap = argparse.ArgumentParser(prog="python -m percolation_ldp",
                                 description="Subcritical percolation large-deviation experiments.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config")
    common.add_argument("--seed", type=int)
    common.add_argument("--workers", type=int)
    common.add_argument("--out")
    common.add_argument("--p", type=float)
    common.add_argument("--d", type=int)
    common.add_argument("--box-radius", dest="box_radius", type=int)
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("sample", parents=[common]).add_argument("--n", type=int, default=1)
    o = sub.add_parser("oracle", parents=[common])
    o.add_argument("--event", default="point-in-cluster",
                   choices=["point-in-cluster", "points-in-cluster", "hausdorff-ball",
                            "constrained-connection"])
    o.add_argument("--target", nargs="+")
    o.add_argument("--set")
    o.add_argument("--eps", type=float)
    o.add_argument("--n", type=int, default=1)
    o.add_argument("--unit-square", dest="unit_square", action="store_true")
    e = sub.add_parser("estimate-norm", parents=[common])
    e.add_argument("--replicates", type=int)
    sub.add_parser("build-norm", parents=[common]).add_argument("--fits")
    s = sub.add_parser("steiner", parents=[common])
    s.add_argument("--terminals", nargs="+", required=True)
    s.add_argument("--gauge")
    r = sub.add_parser("ldp-rate", parents=[common])
    r.add_argument("--set")
    r.add_argument("--eps", type=float)
    r.add_argument("--scales")
    r.add_argument("--replicates", type=int)
    r.add_argument("--gauge")
    c = sub.add_parser("conditioned", parents=[common])
    c.add_argument("--points", nargs="*")
    c.add_argument("--n", type=int)
    c.add_argument("--budget", type=int)
    k = sub.add_parser("concentration", parents=[common])
    k.add_argument("--points", nargs="+")
    k.add_argument("--eps", type=float)
    k.add_argument("--scales")
    k.add_argument("--budgets")
    k.add_argument("--gauge")
    sub.add_parser("selftest", parents=[common])
    sub.add_parser("replay", parents=[common]).add_argument("manifest")
    return ap


def main(argv=None) -> int:
    ap = _parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_CONFIG
    params = {k: v for k, v in vars(args).items() if v is not None and v is not False}
    command = params.pop("command")
    config = params.pop("config", None)
    out = params.pop("out", None)
    seed = params.pop("seed", None)
    workers = params.pop("workers", None)
    res = run(command, config=config, out=out, seed=seed, workers=workers, **params)
    if res.stdout:
        sys.stdout.write(res.stdout)
    if res.error:
        sys.stderr.write(json.dumps(res.error, sort_keys=True) + "\n")
    elif res.out_dir is not None:
        sys.stdout.write(f"outputs in {res.out_dir}\n")
    return res.status
