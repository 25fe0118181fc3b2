"""Command-line entry point: ``mbspec run | verify | print-defaults``.

Configs are TOML. Exit codes: 0 success, 2 config error, 3 runtime error;
errors are reported on stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
import tomli_w

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .analysis import DEFAULT_B_VALUES
from .fock import GOLDEN_B, HamiltonianSpec, SectorTooLarge
from .io import dumps
from .report import write_artifacts
from .spectroscopy import DetectionParams, TimeGrid
from .sweep import DEFAULT_OPTIONS, KINDS, RUNNERS, ExperimentPlan, PlanError, plan_points, point_hash, run_plan

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
TOP_KEYS = ("kind", "name", "output", "seed")
SECTIONS = ("hamiltonian", "sweep", "time", "detection", "options", "plots")
HAMILTONIAN_KEYS = ("sites", "hopping", "interaction", "hopping_sign", "delta")
SWEEP_KEYS = {
    "butterfly": ("b_points", "b_grid", "phases"),
    "localization": ("delta_grid", "b_values", "phases", "sector"),
    "missing-levels": ("delta_grid", "b_values", "phases"),
    "correlations": ("delta_grid", "b_values", "phases"),
    "spectroscopy": ("delta_grid", "b_values", "phases", "sector"),
}
TIME_KEYS = ("dt", "duration")
DETECTION_KEYS = tuple(DetectionParams().to_dict())
OPTION_KEYS = tuple(DEFAULT_OPTIONS)
PLOT_KEYS = ("enabled",)
SECTION_KEYS = {"hamiltonian": HAMILTONIAN_KEYS, "time": TIME_KEYS, "detection": DETECTION_KEYS,
                "options": OPTION_KEYS, "plots": PLOT_KEYS}


class ConfigError(ValueError):
    """Config is unreadable, malformed, or inconsistent."""


def _phases(count: int) -> list[float]:
    return (2 * np.pi * np.arange(count) / count).tolist()


def default_config(kind: str) -> dict:
    """Documented defaults for each experiment kind, as a TOML-ready mapping."""
    if kind not in KINDS:
        raise ConfigError(f"unknown kind {kind!r}; expected one of {', '.join(KINDS)}")
    ham = {"sites": 9, "hopping": 50.0, "interaction": 175.0, "hopping_sign": 1}
    sweep: dict = {"b_values": [GOLDEN_B], "phases": [0.0]}
    options: dict = {}
    if kind == "butterfly":
        ham.update(interaction=0.0, delta=50.0)
        sweep = {"b_points": 100, "phases": [0.0]}
    elif kind == "localization":
        sweep = {"delta_grid": np.linspace(0.0, 300.0, 21).tolist(), "b_values": list(DEFAULT_B_VALUES),
                 "phases": [0.0], "sector": 2}
        options = {"bins": 10, "edge_fraction": 0.2, "correlations": False}
    elif kind == "missing-levels":
        ham["sites"] = 18
        sweep.update(delta_grid=np.linspace(0.0, 300.0, 20).tolist(), phases=_phases(8))
        options = {"resolution": 1.0, "bins": 10}
    elif kind == "correlations":
        sweep["delta_grid"] = np.linspace(0.0, 300.0, 21).tolist()
        options = {"correlation_duration": 250.0}
    elif kind == "spectroscopy":
        sweep.update(delta_grid=[50.0], sector=1)
    det = {k: v for k, v in DetectionParams().to_dict().items() if v is not None}
    return {
        "kind": kind, "name": kind, "output": "results", "seed": 0,
        "hamiltonian": ham, "sweep": sweep, "time": {"dt": 0.5, "duration": 1000.0},
        "detection": det, "options": options, "plots": {"enabled": True},
    }


def _merge(base: dict, over: dict) -> dict:
    out = {k: (dict(v) if isinstance(v, dict) else v) for k, v in base.items()}
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k].update(v)
        else:
            out[k] = v
    return out


def validate(cfg: dict) -> dict:
    """Reject unknown keys and kind-irrelevant settings; return the full config."""
    if "kind" not in cfg:
        raise ConfigError("config must set 'kind'")
    kind = cfg["kind"]
    if kind not in KINDS:
        raise ConfigError(f"unknown kind {kind!r}; expected one of {', '.join(KINDS)}")
    unknown = set(cfg) - set(TOP_KEYS) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    allowed = dict(SECTION_KEYS, sweep=SWEEP_KEYS[kind])
    for sec in SECTIONS:
        if sec in cfg and not isinstance(cfg[sec], dict):
            raise ConfigError(f"[{sec}] must be a table")
        bad = set(cfg.get(sec, {})) - set(allowed[sec])
        if bad:
            raise ConfigError(f"unknown keys in [{sec}] for kind {kind}: {sorted(bad)}")
    if kind != "butterfly" and "delta" in cfg.get("hamiltonian", {}):
        raise ConfigError("[hamiltonian] delta applies to butterfly only; use [sweep] delta_grid")
    sweep = cfg.get("sweep", {})
    if "b_points" in sweep and "b_grid" in sweep:
        raise ConfigError("set either b_points or b_grid, not both")
    full = _merge(default_config(kind), cfg)
    if "b_grid" in sweep:
        full["sweep"].pop("b_points", None)
    return full


def to_plan(cfg: dict) -> ExperimentPlan:
    cfg = validate(cfg)
    kind, ham, sw = cfg["kind"], cfg["hamiltonian"], cfg["sweep"]
    try:
        J = float(ham["hopping"])
        base = HamiltonianSpec(int(ham["sites"]), J, float(ham["interaction"]),
                               delta=float(ham.get("delta", 0.0)), hopping_sign=int(ham["hopping_sign"]))
        if kind == "butterfly":
            grid = sw["b_grid"] if "b_grid" in sw else np.linspace(0.0, 1.0, int(sw["b_points"])).tolist()
            ensemble = tuple((0.0, float(p)) for p in sw["phases"])
            sector = 1
        else:
            if J == 0 and any(float(d) != 0 for d in sw["delta_grid"]):
                raise ConfigError("delta_grid needs non-zero hopping")
            grid = [float(d) / J if J else 0.0 for d in sw["delta_grid"]]
            ensemble = tuple((float(b), float(p)) for b in sw["b_values"] for p in sw["phases"])
            sector = int(sw.get("sector", 2))
        det = DetectionParams(**cfg["detection"])
        options = dict(cfg["options"])
        return ExperimentPlan(
            name=str(cfg["name"]), kind=kind, base=base, grid=tuple(float(x) for x in grid),
            sector=sector, time_grid=TimeGrid(float(cfg["time"]["dt"]), float(cfg["time"]["duration"])),
            detection=det, ensemble=ensemble, output=str(cfg["output"]), seed=int(cfg["seed"]),
            options=options,
        )
    except (TypeError, ValueError, KeyError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def to_toml(cfg: dict) -> str:
    return tomli_w.dumps(cfg)


def _parse_value(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_override(cfg: dict, assignment: str) -> dict:
    """Apply ``key=value``; bare keys resolve to the unique section holding them."""
    if "=" not in assignment:
        raise ConfigError(f"--set expects key=value, got {assignment!r}")
    key, text = (s.strip() for s in assignment.split("=", 1))
    value = _parse_value(text)
    cfg = _merge(cfg, {})
    if "." in key:
        sec, sub = key.split(".", 1)
        if sec not in SECTIONS:
            raise ConfigError(f"unknown section {sec!r} in --set {key}")
        cfg.setdefault(sec, {})[sub] = value
        return cfg
    if key in TOP_KEYS:
        cfg[key] = value
        return cfg
    kind = cfg.get("kind")
    allowed = dict(SECTION_KEYS, sweep=SWEEP_KEYS.get(kind, ()))
    homes = [s for s in SECTIONS if key in allowed[s]]
    if len(homes) != 1:
        raise ConfigError(f"cannot resolve --set key {key!r}; use section.key")
    cfg.setdefault(homes[0], {})[key] = value
    return cfg


def load_config(path, overrides=(), seed=None, output=None) -> dict:
    try:
        cfg = tomllib.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from exc
    for a in overrides:
        cfg = apply_override(cfg, a)
    if seed is not None:
        cfg["seed"] = seed
    if output is not None:
        cfg["output"] = str(output)
    return validate(cfg)


# -- actions -----------------------------------------------------------------------

def expanded_plan(plan: ExperimentPlan) -> dict:
    return {"plan": plan.to_dict(),
            "points": [{**p.key(), "hash": point_hash(plan, p)} for p in plan_points(plan)]}


def verify_report(plan: ExperimentPlan, threads: int = 1) -> dict:
    """Oracle-versus-recovery comparison for every point of a recovery plan."""
    if plan.kind not in ("butterfly", "localization", "spectroscopy"):
        raise ConfigError(f"verify supports butterfly, localization and spectroscopy, not {plan.kind}")
    record = run_plan(plan, threads, out=False)
    points, devs, warnings = [], [], 0
    for p in record.points:
        entry = {"point": p["point"], "status": p["status"]}
        if p["status"] == "ok":
            r = p["result"]
            dev = np.asarray(r["comparison"]["abs_deviation"], dtype=float)
            devs.append(dev)
            warnings += len(r["warnings"])
            entry.update(levels=r["expected_levels"], peaks=len(r["peaks"]["energies"]),
                         oracle=r["comparison"]["oracle"] if r["expected_levels"] <= 9 else None,
                         max_abs_deviation=float(dev.max()), mean_abs_deviation=float(dev.mean()),
                         warnings=r["warnings"])
        else:
            entry["error"] = p["error"]
        points.append(entry)
    alldev = np.concatenate(devs) if devs else np.array([np.nan])
    return {"kind": plan.kind, "name": plan.name, "points": points,
            "max_abs_deviation": float(np.max(alldev)), "mean_abs_deviation": float(np.mean(alldev)),
            "warning_count": warnings, "failures": len(record.failures)}


def _emit_error(kind: str, exc: Exception) -> None:
    sys.stderr.write(dumps({"error": kind, "type": type(exc).__name__, "message": str(exc)}, indent=None) + "\n")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mbspec", description="Many-body spectroscopy sweeps.")
    sub = parser.add_subparsers(dest="action", required=True)
    for name, helptext in (("run", "execute a config"), ("verify", "compare recovery with the oracle")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("config_path", nargs="?", help="TOML config")
        p.add_argument("--config", dest="config_flag", help="TOML config (alternative to the positional)")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
        p.add_argument("--out", help="output directory")
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--seed", type=int)
        p.add_argument("--dry-run", action="store_true", help="print the expanded plan and stop")
    p = sub.add_parser("print-defaults", help="print the default config for a kind")
    p.add_argument("kind", choices=KINDS)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.action == "print-defaults":
        sys.stdout.write(to_toml(default_config(args.kind)))
        return EXIT_OK
    path = args.config_flag or args.config_path
    try:
        if path is None:
            raise ConfigError("no config given")
        if args.config_flag and args.config_path:
            raise ConfigError("give the config once, positionally or with --config")
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        cfg = load_config(path, args.overrides, args.seed, args.out)
        plan = to_plan(cfg)
    except (ConfigError, PlanError) as exc:
        _emit_error("config", exc)
        return EXIT_CONFIG
    if args.dry_run:
        sys.stdout.write(dumps(expanded_plan(plan)) + "\n")
        return EXIT_OK
    try:
        if args.action == "verify":
            report = verify_report(plan, args.threads)
            text = dumps(report)
            if args.out:
                Path(args.out).mkdir(parents=True, exist_ok=True)
                (Path(args.out) / f"{plan.name}_verify.json").write_text(text + "\n")
            sys.stdout.write(text + "\n")
            return EXIT_OK if report["failures"] == 0 else EXIT_RUNTIME
        record = RUNNERS[plan.kind](plan, args.threads, plan.output)
        artifacts = write_artifacts(record, plots=bool(cfg["plots"]["enabled"]))
    except ConfigError as exc:
        _emit_error("config", exc)
        return EXIT_CONFIG
    except (SectorTooLarge, OSError, ValueError, RuntimeError, ArithmeticError) as exc:
        _emit_error("runtime", exc)
        return EXIT_RUNTIME
    status = {"status": "ok" if not record.failures else "partial", "directory": str(record.directory),
              "points": len(record.points), "computed": record.computed, "reused": record.reused,
              "failures": record.failures, "artifacts": [str(a) for a in artifacts]}
    sys.stdout.write(dumps(status) + "\n")
    return EXIT_OK if not record.failures else EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
