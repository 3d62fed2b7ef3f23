"""Command-line front end: ``sgdlab {generate,train,stability,speedup,verify,report}``.

Configuration comes from a flat JSON file (``--config``) overridden by flags.
Exit codes: 0 success, 1 a violated verdict, 2 bad configuration, 3 I/O failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import tempfile
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .bounds import TheoremId
from .errors import SgdLabError
from .experiments import (
    Verdict,
    batch_speedup_sweep,
    machine_speedup_sweep,
    risk_decomposition,
    stability_bound_checks,
)
from .optimizers import LocalConfig, MinibatchConfig, StepSchedule, compute_averages, run_trainer
from .problems import KINDS, GeneratorSpec, draw_examples, make_instance
from .sampling import StreamKey
from .suites import SUITES, run_suite

COMMANDS = ("generate", "train", "stability", "speedup", "verify", "report")
EXIT_OK, EXIT_VIOLATED, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3
SCHEDULES = {"const": "Constant", "poly": "PolyStrong", "localpoly": "LocalPolyStrong"}
OUTPUT_CHOICES = ("final", "uniform", "tail", "local_all", "local_weighted")
# keys that only steer where or how fast artifacts are produced, not what they contain
_UNHASHED = ("out", "threads")


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    command: Optional[str] = None
    problem: Optional[str] = None
    n: int = 256
    d: int = 20
    noise: float = 0.5
    x_cap: float = 1.0
    decay: float = 0.0
    reg: Optional[float] = None
    trainer: str = "minibatch"
    b: int = 4
    M: int = 2
    K: int = 4
    R: int = 100
    eta: Optional[float] = None
    schedule: str = "const"
    mu: Optional[float] = None
    a: Optional[float] = None
    output: str = "final"
    replicates: int = 64
    subsample: int = 32
    seed: int = 0
    threads: int = 1
    out: str = "sgdlab_out"
    suite: str = "exact"
    axis: str = "batch_b"
    values: Optional[list] = None
    regime: str = "high_noise"
    c: float = 4.0

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        d = {k: v for k, v in self.to_dict().items() if k not in _UNHASHED}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def generator_spec(self) -> GeneratorSpec:
        reg = self.reg
        if reg is None:
            reg = 0.1 if self.problem == "RidgeLeastSquares" else 0.0
        return GeneratorSpec(self.problem, self.d, self.n, noise_level=self.noise, x_cap=self.x_cap,
                             seed=self.seed, reg=reg, decay=self.decay)


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}
_INTS = {"n", "d", "b", "M", "K", "R", "replicates", "subsample", "seed", "threads"}
_FLOATS = {"noise", "x_cap", "decay", "reg", "eta", "mu", "a", "c"}
_CHOICES = {
    "command": COMMANDS,
    "problem": KINDS,
    "trainer": ("minibatch", "local"),
    "schedule": tuple(SCHEDULES),
    "output": OUTPUT_CHOICES,
    "suite": SUITES,
    "axis": ("batch_b", "machines_M"),
    "regime": ("high_noise", "low_noise"),
}


def _coerce(key, value):
    if value is None:
        return None
    try:
        if key in _INTS:
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError
            return int(value)
        if key in _FLOATS:
            if isinstance(value, bool):
                raise ValueError
            return float(value)
        if key == "values":
            if isinstance(value, str):
                value = [v for v in value.split(",") if v]
            return [int(v) for v in value]
    except (TypeError, ValueError):
        raise ConfigError(f"invalid value for '{key}': {value!r}")
    if key in _CHOICES and value not in _CHOICES[key]:
        raise ConfigError(f"invalid value for '{key}': {value!r} (choose from {', '.join(_CHOICES[key])})")
    if key in ("out",) and not isinstance(value, str):
        raise ConfigError(f"invalid value for '{key}': {value!r}")
    return value


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sgdlab", description="Minibatch and local SGD stability lab")
    ap.add_argument("command", nargs="?", choices=COMMANDS)
    ap.add_argument("--config", help="flat JSON config file; flags override it")
    ap.add_argument("--problem", choices=KINDS)
    for name in ("n", "d", "b", "M", "K", "R", "replicates", "subsample", "seed", "threads"):
        ap.add_argument(f"--{name}", type=int)
    ap.add_argument("--noise", type=float)
    ap.add_argument("--x-cap", dest="x_cap", type=float)
    for name in ("decay", "reg", "eta", "mu", "a", "c"):
        ap.add_argument(f"--{name}", type=float)
    ap.add_argument("--trainer", choices=_CHOICES["trainer"])
    ap.add_argument("--schedule", choices=_CHOICES["schedule"])
    ap.add_argument("--output", choices=OUTPUT_CHOICES)
    ap.add_argument("--suite", choices=SUITES)
    ap.add_argument("--axis", choices=_CHOICES["axis"])
    ap.add_argument("--values", help="comma-separated axis values for speedup")
    ap.add_argument("--regime", choices=_CHOICES["regime"])
    ap.add_argument("--out", help="output directory")
    return ap


def parse_config(args, config_file: Optional[str] = None, echo: bool = True) -> RunConfig:
    """Resolve file values, flags and ``SGDLAB_SEED`` into a validated config."""
    ns = build_parser().parse_args(args)
    merged: dict = {}
    path = ns.config or config_file
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}")
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
        for key, value in raw.items():
            if key not in _FIELD_TYPES:
                raise ConfigError(f"unknown config key '{key}'")
            merged[key] = _coerce(key, value)
    if "seed" not in merged and os.environ.get("SGDLAB_SEED") is not None:
        merged["seed"] = _coerce("seed", os.environ["SGDLAB_SEED"])
    for key, value in vars(ns).items():
        if key != "config" and value is not None:
            merged[key] = _coerce(key, value)
    cfg = RunConfig(**merged)
    if cfg.command is None:
        raise ConfigError("missing command")
    if cfg.problem is None and cfg.command not in ("verify", "report"):
        raise ConfigError("missing required key 'problem' (--problem)")
    if echo:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        write_atomic(out / "resolved.json", json.dumps(cfg.to_dict(), sort_keys=True, indent=2) + "\n")
    return cfg


# --------------------------------------------------------------------------
# artifacts


def write_atomic(path: Path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (Verdict, TheoremId)):
        return v.value
    return v


def meta(cfg: RunConfig) -> dict:
    return {"version": f"v{__version__}", "config_hash": cfg.config_hash(), "seed": cfg.seed}


def emit_json(cfg: RunConfig, name: str, payload: dict) -> None:
    body = {"meta": meta(cfg), **payload}
    write_atomic(Path(cfg.out) / name, json.dumps(_jsonable(body), sort_keys=True, indent=2) + "\n")


def emit_csv(cfg: RunConfig, name: str, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(x) if isinstance(x, float) else x for x in row])
    write_atomic(Path(cfg.out) / name, buf.getvalue())


def emit_verdicts(cfg: RunConfig, rows) -> int:
    """Write verdicts.csv; return 1 if any verdict is violated."""
    emit_csv(cfg, "verdicts.csv", ["check", "lhs", "lhs_se", "rhs", "verdict"], rows)
    return EXIT_VIOLATED if any(r[-1] == Verdict.VIOLATED.value for r in rows) else EXIT_OK


# --------------------------------------------------------------------------
# commands


def trainer_config(cfg: RunConfig, L: float, mu: Optional[float]):
    variant = SCHEDULES[cfg.schedule]
    mu = cfg.mu if cfg.mu is not None else mu
    if variant == "Constant":
        sched = StepSchedule.constant(cfg.eta if cfg.eta is not None else 1.0 / (2.0 * L))
    else:
        if not mu:
            raise ConfigError(f"schedule '{cfg.schedule}' needs mu > 0 (--mu)")
        if variant == "PolyStrong":
            sched = StepSchedule.poly_strong(cfg.a if cfg.a is not None else 4 * L / mu, mu)
        else:
            sched = StepSchedule.local_poly_strong(cfg.a if cfg.a is not None else 2 * L / mu, mu, cfg.K)
    if cfg.trainer == "minibatch":
        return MinibatchConfig(cfg.b, cfg.R, sched, cfg.seed).validate(L)
    return LocalConfig(cfg.M, cfg.K, cfg.R, sched, cfg.seed).validate(L)


def _instance(cfg: RunConfig):
    spec = cfg.generator_spec()
    S = draw_examples(spec, StreamKey(spec.seed, ("data",)))
    return spec, S, make_instance(spec, S)


def cmd_generate(cfg: RunConfig) -> int:
    spec, S, p = _instance(cfg)
    write_atomic(Path(cfg.out) / "dataset.csv", S.to_csv())
    emit_json(cfg, "spec.json", {"spec": json.loads(spec.to_json()), "instance": p.summary()})
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    spec, S, p = _instance(cfg)
    tc = trainer_config(cfg, p.L, p.mu)
    traj = run_trainer(p, S, tc)
    write_atomic(Path(cfg.out) / "trajectory.jsonl", traj.to_jsonl())
    w = compute_averages(traj, cfg.output) if cfg.output != "final" else traj.final_w
    payload = {"trainer": tc.to_dict(), "output": cfg.output, "final_train_risk": traj.risk_log[-1][1]}
    if p.kind != "QuadraticPL":
        rep = risk_decomposition(p, S, w, spec, "teacher", seed=cfg.seed)
        payload["risk"] = rep.to_dict()
    emit_json(cfg, "train.json", payload)
    return EXIT_OK


def _theorems_for(p, tc) -> list:
    if isinstance(tc, LocalConfig):
        return [TheoremId.LOCAL_L1, TheoremId.LOCAL_L2]
    if p.kind == "QuadraticPL":
        return [TheoremId.MB_NONCONVEX_L1]
    if p.mu > 0:
        return [TheoremId.MB_STRONG_L1, TheoremId.MB_STRONG_L2]
    return [TheoremId.MB_CONVEX_L1, TheoremId.MB_CONVEX_L2, TheoremId.MB_CONVEX_L2_SIMPLE,
            TheoremId.MB_CONVEX_L2_STRONGSB]


def cmd_stability(cfg: RunConfig) -> int:
    spec, S, p = _instance(cfg)
    tc = trainer_config(cfg, p.L, p.mu)
    est, checks = stability_bound_checks(p, spec, tc, _theorems_for(p, tc), n_replicates=cfg.replicates,
                                         index_subsample=cfg.subsample, threads=cfg.threads)
    d = est.to_dict()
    for k in ("per_replicate_l1", "per_replicate_l2_sq", "train_risk_out"):
        d.pop(k, None)
    for b in d["bounds"]:
        b["inputs"] = {k: v for k, v in b["inputs"].items() if not isinstance(v, list)}
    emit_json(cfg, "stability.json", {"estimate": d, "checks": [c.to_dict() for c in checks]})
    return emit_verdicts(cfg, [(c.name, c.lhs, c.lhs_se, c.rhs.value, c.verdict.value) for c in checks])


def cmd_speedup(cfg: RunConfig) -> int:
    spec = cfg.generator_spec()
    if cfg.axis == "batch_b":
        sweep = batch_speedup_sweep(spec, cfg.values or [2, 4, 8, 16], cfg.regime, c=cfg.c,
                                    n_replicates=cfg.replicates, seed=cfg.seed, threads=cfg.threads)
    else:
        sweep = machine_speedup_sweep(spec, cfg.values or [1, 2, 4], cfg.K, "strong" if cfg.schedule == "localpoly"
                                      else "convex", c=cfg.c, mu=cfg.mu, n_replicates=cfg.replicates,
                                      seed=cfg.seed, threads=cfg.threads)
    write_atomic(Path(cfg.out) / "sweep.csv", sweep.to_csv())
    emit_json(cfg, "sweep.json", {"sweep": sweep.to_dict()})
    return EXIT_OK


def cmd_verify(cfg: RunConfig) -> int:
    checks = run_suite(cfg.suite, cfg.seed)
    emit_json(cfg, "verify.json", {"suite": cfg.suite, "checks": [c.to_dict() for c in checks]})
    rows = [(f"{c.suite}/{c.name}", c.detail.get("lhs", ""), c.detail.get("lhs_se", ""),
             c.detail.get("rhs", ""), c.verdict.value) for c in checks]
    return emit_verdicts(cfg, rows)


def _md_table(header, rows) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(str(x) for x in r) + " |" for r in rows]
    return "\n".join(lines)


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.4g}"
    return "" if x is None else str(x)


def cmd_report(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    parts = ["# sgdlab report", ""]
    for path in sorted(out.glob("*.json")):
        if path.name == "resolved.json":
            continue
        doc = json.loads(path.read_text(encoding="utf-8"))
        m = doc.get("meta", {})
        parts.append(f"## {path.name}")
        parts.append(f"version {m.get('version')}, config {m.get('config_hash')}, seed {m.get('seed')}")
        parts.append("")
        if "sweep" in doc:
            sw = doc["sweep"]
            steps_key = "per machine steps K R" if sw["axis"] == "machines_M" else "rounds R"
            rows = [(pt["value"], _fmt(pt["point"].get("excess_risk")), _fmt(pt["point"].get("excess_se")),
                     pt["point"].get("steps")) for pt in sw["points"]]
            parts.append(_md_table([sw["axis"], "excess risk", "se", steps_key], rows))
            parts.append("")
            if sw["fitted_exponent"] is None:
                parts.append("fitted exponent: not fitted (fewer than 3 points)")
            else:
                parts.append(f"fitted exponent of excess risk: {_fmt(sw['fitted_exponent'])} +/- {_fmt(sw['ci'])}")
        elif "checks" in doc:
            rows = [(c["name"], _fmt(c.get("lhs", c.get("detail", {}).get("lhs"))),
                     _fmt(c.get("rhs", {}).get("value") if isinstance(c.get("rhs"), dict)
                          else c.get("detail", {}).get("rhs")), c["verdict"]) for c in doc["checks"]]
            parts.append(_md_table(["check", "measured", "bound", "verdict"], rows))
        elif "risk" in doc:
            r = doc["risk"]
            rows = [(k, _fmt(r[k])) for k in ("train_risk", "test_risk", "gen_gap", "opt_gap", "excess_risk")]
            parts.append(_md_table(["quantity", "value"], rows))
        else:
            parts.append("```json\n" + json.dumps(doc.get("spec", doc), sort_keys=True, indent=2) + "\n```")
        parts.append("")
    write_atomic(out / "report.md", "\n".join(parts))
    return EXIT_OK


DISPATCH = {
    "generate": cmd_generate,
    "train": cmd_train,
    "stability": cmd_stability,
    "speedup": cmd_speedup,
    "verify": cmd_verify,
    "report": cmd_report,
}


def dispatch(cfg: RunConfig) -> int:
    try:
        Path(cfg.out).mkdir(parents=True, exist_ok=True)
        return DISPATCH[cfg.command](cfg)
    except OSError as exc:
        print(f"sgdlab: I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, SgdLabError, ValueError, TypeError) as exc:
        print(f"sgdlab: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        cfg = parse_config(argv)
    except SystemExit as exc:       # argparse usage errors
        return int(exc.code) if exc.code is not None else EXIT_CONFIG
    except ConfigError as exc:
        print(f"sgdlab: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"sgdlab: I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO
    return dispatch(cfg)


if __name__ == "__main__":
    sys.exit(main())
