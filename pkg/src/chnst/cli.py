"""Command-line driver: ``chnst run|converge|check <config>``.

Config files hold one ``key = value`` pair per line; ``#`` starts a comment.
Unset keys fall back to the 2D convergence-experiment defaults.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .diagnostics import CSV_COLUMNS, DiagnosticsRecord
from .harness import PRESETS, HarnessError, preset_initial_state, run_convergence
from .mesh import build_periodic_mesh
from .model import ModelError, ModelParams
from .scheme import StepConfig, StepFailure, num_steps, run
from .vtk import write_snapshot

log = logging.getLogger(__name__)

EXIT_OK, EXIT_SOLVER, EXIT_CONFIG = 0, 1, 2
CONVERGENCE_COLUMNS = (
    "k", "h", "e_a", "eoc_a", "e_b", "eoc_b", "e_mu", "eoc_mu", "e_u", "eoc_u", "e_theta", "eoc_theta",
)


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


@dataclass(frozen=True)
class RunConfig:
    params: ModelParams = field(default_factory=ModelParams)
    step: StepConfig = field(default_factory=StepConfig)
    T: float = 0.1
    level: int = 4
    levels: tuple[int, ...] = (2, 3, 4, 5)
    preset: str = "convergence"
    output_dir: str = "output"
    stride: int = 10
    check_steps: int = 10

    @property
    def n(self) -> int:
        return 2**self.level


_PARAM_KEYS = {f.name: f.type for f in fields(ModelParams)}
_STEP_KEYS = {f.name: f.type for f in fields(StepConfig)}
_RUN_KEYS = {
    "T": "float", "level": "int", "levels": "levels", "preset": "str",
    "output_dir": "str", "stride": "int", "check_steps": "int",
}


def _convert(kind: str, raw: str):
    if kind == "float":
        return float(raw)
    if kind == "int":
        v = float(raw)
        if v != int(v):
            raise ValueError(f"{raw!r} is not an integer")
        return int(v)
    if kind == "levels":
        return tuple(int(x) for x in raw.replace(",", " ").split())
    return raw.strip().strip('"').strip("'")


def parse_config(text: str) -> RunConfig:
    values: dict[str, tuple[object, int]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        key, val = (s.strip() for s in line.split("=", 1))
        kind = _PARAM_KEYS.get(key) or _STEP_KEYS.get(key) or _RUN_KEYS.get(key)
        if kind is None:
            raise ConfigError(f"unknown key {key!r}", lineno)
        try:
            values[key] = (_convert(kind, val), lineno)
        except ValueError as exc:
            raise ConfigError(f"cannot parse value for {key!r}: {exc}", lineno) from exc

    def line_of(keys) -> int | None:
        lines = [values[k][1] for k in keys if k in values]
        return max(lines) if lines else None

    def pick(keys):
        return {k: values[k][0] for k in keys if k in values}

    try:
        params = ModelParams(**pick(_PARAM_KEYS))
    except ModelError as exc:
        raise ConfigError(str(exc), line_of(exc.keys)) from exc
    try:
        step = StepConfig(**pick(_STEP_KEYS))
    except ValueError as exc:
        raise ConfigError(str(exc), line_of(_STEP_KEYS)) from exc
    cfg = RunConfig(params=params, step=step, **pick(_RUN_KEYS))

    if cfg.preset not in PRESETS:
        raise ConfigError(f"unknown preset {cfg.preset!r}; choose from {PRESETS}", line_of(["preset"]))
    if cfg.level < 1:
        raise ConfigError("level must be >= 1 (n = 2^level >= 2)", line_of(["level"]))
    if cfg.stride < 0 or cfg.check_steps < 1:
        raise ConfigError("stride must be >= 0 and check_steps >= 1", line_of(["stride", "check_steps"]))
    try:
        num_steps(cfg.T, step.tau)
    except ValueError as exc:
        raise ConfigError(str(exc), line_of(["T", "tau"])) from exc
    return cfg


def load_config(path: str | Path) -> RunConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def _num(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _record_row(rec: DiagnosticsRecord) -> list[str]:
    d = rec.as_dict()
    return [_num(d[c]) for c in CSV_COLUMNS]


def _prepare_output(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_run(cfg: RunConfig) -> int:
    out = _prepare_output(cfg)
    mesh = build_periodic_mesh(cfg.n, level=cfg.level)
    U0 = preset_initial_state(cfg.preset, mesh, cfg.params)
    with open(out / "diagnostics.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)

        def observer(rec, state):
            writer.writerow(_record_row(rec))
            fh.flush()
            if cfg.stride and rec.step % cfg.stride == 0:
                write_snapshot(
                    out / f"snapshot_{rec.step:05d}.vtk", mesh,
                    {"phi": state.phi.dofs, "mu": state.mu.dofs, "theta": state.theta.dofs, "pi": state.pi.dofs},
                    {"u": state.u.dofs},
                    title=f"chnst step {rec.step} t={state.t!r}",
                )

        try:
            run(U0, cfg.params, cfg.step, cfg.T, observers=[observer])
        except StepFailure as exc:
            print(f"solver failure: {exc}", file=sys.stderr)
            return EXIT_SOLVER
    return EXIT_OK


def write_convergence_csv(path: Path, table) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CONVERGENCE_COLUMNS)
        for row in table.rows:
            e = row.errors
            writer.writerow([
                str(row.k), _num(row.h),
                _num(e.e_a), _num(row.eoc.get("e_a")),
                _num(e.e_b), _num(row.eoc.get("e_b")),
                _num(e.e_mu), _num(row.eoc.get("e_mu")),
                _num(e.e_u), _num(row.eoc.get("e_u")),
                _num(e.e_theta), _num(row.eoc.get("e_theta")),
            ])


def read_convergence_csv(path: Path) -> list[dict[str, float | None]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [
            {k: (float(v) if v != "" else None) for k, v in row.items()}
            for row in csv.DictReader(fh)
        ]


def cmd_converge(cfg: RunConfig) -> int:
    if len(cfg.levels) < 2:
        print("converge needs at least two levels (key 'levels')", file=sys.stderr)
        return EXIT_CONFIG
    out = _prepare_output(cfg)
    try:
        table = run_convergence(list(cfg.levels), T=cfg.T, params=cfg.params, preset=cfg.preset, cfg=cfg.step)
    except HarnessError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    write_convergence_csv(out / "convergence.csv", table)
    for row in table.rows:
        print(f"k={row.k} " + " ".join(f"{c}={getattr(row.errors, c):.3e}" for c in row.errors._fields))
    return EXIT_OK


def structure_checks(records: list[DiagnosticsRecord]) -> dict[str, tuple[bool, float]]:
    """Mass, energy, entropy and numerical-dissipation checks over a trajectory."""
    mass = np.array([r.mass for r in records])
    energy = np.array([r.total_energy for r in records])
    entropy = np.array([r.entropy for r in records])
    dnum = np.array([r.Dnum_residual for r in records[1:]])
    mass_drift = float(np.max(np.abs(np.diff(mass)))) if len(mass) > 1 else 0.0
    energy_drift = float(np.max(np.abs(energy - energy[0])))
    ds = float(np.min(np.diff(entropy))) if len(entropy) > 1 else 0.0
    dn = float(dnum.min()) if dnum.size else 0.0
    return {
        "mass drift per step <= 1e-10": (mass_drift <= 1e-10, mass_drift),
        "total energy drift <= 1e-8": (energy_drift <= 1e-8, energy_drift),
        "entropy increments >= -1e-12": (ds >= -1e-12, ds),
        "D_num residual >= -1e-12": (dn >= -1e-12, dn),
    }


def cmd_check(cfg: RunConfig) -> int:
    mesh = build_periodic_mesh(cfg.n, level=cfg.level)
    U0 = preset_initial_state(cfg.preset, mesh, cfg.params)
    steps = min(cfg.check_steps, num_steps(cfg.T, cfg.step.tau))
    try:
        res = run(U0, cfg.params, cfg.step, steps * cfg.step.tau)
    except StepFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    ok = True
    for name, (passed, value) in structure_checks(res.records).items():
        print(f"{'PASS' if passed else 'FAIL'}  {name}  (observed {value:.3e})")
        ok &= passed
    return EXIT_OK if ok else EXIT_SOLVER


COMMANDS = {"run": cmd_run, "converge": cmd_converge, "check": cmd_check}


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="chnst", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("config", help="key = value configuration file")
    ap.add_argument("-v", "--verbose", action="store_true")
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        cfg = load_config(args.config)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return COMMANDS[args.command](cfg)


if __name__ == "__main__":
    sys.exit(main())
