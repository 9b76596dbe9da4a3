"""TOML run configuration: problem declaration, mesh, solver, sweep and seed.

A config either inlines the problem tables or points at a problem file with
``problem = "path"`` (relative paths resolve against the config's directory).
Unknown keys anywhere are errors.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import tomli
import tomli_w

from .grid import MeshQ, read_field
from .kkt import NcpConfig
from .model import ProblemSpec, SpatialDomain

SCHEMA_VERSION = 1

PROBLEM_KEYS = {
    "domain": {"kind", "bounds"},
    "time": {"T"},
    "coeffs": {"a"},
    "functions": {"L", "f", "g"},
    "init": {"y0"},
    "parameter": {"w"},
}
RUN_KEYS = {
    "mesh": {"nx", "nt"},
    "solver": {"ncp_kind", "c", "kkt_tol", "max_outer_iters", "ls_factor", "ls_min_step",
               "ls_sigma"},
    "sweep": {"radii", "directions", "warm_start", "workers", "seed"},
    "run": {"seed", "name"},
}
REQUIRED = {"domain": {"kind", "bounds"}, "time": {"T"}, "functions": {"L", "f", "g"},
            "init": {"y0"}}
BUILTIN_DIRECTIONS = ("constant", "sine", "random_sign")


class ConfigError(ValueError):
    pass


def _check_keys(table: dict, allowed: dict, top_extra: set, where: str):
    for key, val in table.items():
        if key in top_extra:
            continue
        if key not in allowed:
            raise ConfigError(f"{where}: unknown key {key!r}")
        if not isinstance(val, dict):
            raise ConfigError(f"{where}: [{key}] must be a table")
        extra = set(val) - allowed[key]
        if extra:
            raise ConfigError(f"{where}: unknown key(s) {sorted(extra)} in [{key}]")


def _load_toml(path: str) -> dict:
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "rb") as fh:
            return tomli.load(fh)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _domain(table: dict) -> SpatialDomain:
    kind, bounds = table["kind"], table["bounds"]
    try:
        if kind == "interval":
            return SpatialDomain.interval(*map(float, bounds))
        if kind == "rectangle":
            return SpatialDomain.rectangle(*(tuple(map(float, b)) for b in bounds))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad domain bounds {bounds!r}: {exc}") from None
    raise ConfigError(f"unknown domain kind {kind!r}")


@dataclass
class ProblemConfig:
    """The problem tables plus the directory used to resolve parameter files."""

    tables: dict
    base_dir: str = "."

    def build(self, mesh: MeshQ | None = None) -> ProblemSpec:
        t = self.tables
        for sec, keys in REQUIRED.items():
            missing = keys - set(t.get(sec, {}))
            if missing:
                raise ConfigError(f"missing key(s) {sorted(missing)} in [{sec}]")
        domain = _domain(t["domain"])
        w = t.get("parameter", {}).get("w", 0.0)
        grid_w = None
        if isinstance(w, dict):
            if set(w) != {"file"}:
                raise ConfigError("parameter.w table must have exactly the key 'file'")
            path = os.path.join(self.base_dir, w["file"])
            if not os.path.isfile(path):
                raise ConfigError(f"parameter file not found: {path}")
            if mesh is None:
                raise ConfigError("a grid-file parameter needs a mesh")
            try:
                grid_w = read_field(path, mesh)
            except ValueError as exc:
                raise ConfigError(f"{path}: {exc}") from None
            w = 0.0
        elif not isinstance(w, (int, float, str)) or isinstance(w, bool):
            raise ConfigError(f"parameter.w must be a number, an expression or a file table")
        fn = t["functions"]
        try:
            spec = ProblemSpec.from_strings(
                domain, float(t["time"]["T"]), t.get("coeffs", {}).get("a", 1.0),
                y0=str(t["init"]["y0"]), L=str(fn["L"]), f=str(fn["f"]), g=str(fn["g"]),
                w_ref=w, name=str(t.get("name", "problem")))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if grid_w is not None:
            spec = ProblemSpec(spec.domain, spec.T, spec.coeffs, spec.y0, spec.L, spec.f,
                               spec.g, grid_w, spec.name)
        return spec


@dataclass
class RunConfig:
    problem: ProblemConfig
    nx: int = 16
    nt: int = 16
    solver: NcpConfig = field(default_factory=NcpConfig)
    sweep: dict = field(default_factory=dict)
    seed: int = 0
    name: str = "run"
    source: str = ""
    echo: dict = field(default_factory=dict)

    def mesh(self) -> MeshQ:
        spec_tables = self.problem.tables
        return MeshQ(_domain(spec_tables["domain"]), float(spec_tables["time"]["T"]),
                     self.nx, self.nt)


def load_config(path: str, seed: int | None = None, mesh: tuple | None = None) -> RunConfig:
    raw = _load_toml(path)
    base_dir = os.path.dirname(os.path.abspath(path))
    if raw.get("schema") != SCHEMA_VERSION:
        raise ConfigError(f"{path}: expected schema = {SCHEMA_VERSION}, got {raw.get('schema')!r}")
    allowed = dict(RUN_KEYS)
    if "problem" in raw:
        if not isinstance(raw["problem"], str):
            raise ConfigError(f"{path}: 'problem' must be a file path")
        ppath = os.path.join(base_dir, raw["problem"])
        ptables = _load_toml(ppath)
        if ptables.get("schema", SCHEMA_VERSION) != SCHEMA_VERSION:
            raise ConfigError(f"{ppath}: unsupported schema {ptables.get('schema')!r}")
        _check_keys(ptables, PROBLEM_KEYS, {"schema", "name"}, ppath)
        problem = ProblemConfig({k: v for k, v in ptables.items() if k != "schema"},
                                os.path.dirname(os.path.abspath(ppath)))
        _check_keys(raw, allowed, {"schema", "problem"}, path)
    else:
        allowed.update(PROBLEM_KEYS)
        _check_keys(raw, allowed, {"schema", "name"}, path)
        tables = {k: v for k, v in raw.items() if k in PROBLEM_KEYS or k == "name"}
        problem = ProblemConfig(tables, base_dir)

    m = raw.get("mesh", {})
    nx, nt = (int(m.get("nx", 16)), int(m.get("nt", 16))) if mesh is None else mesh
    try:
        solver = NcpConfig(**raw.get("solver", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[solver]: {exc}") from None
    run = raw.get("run", {})
    sweep = dict(raw.get("sweep", {}))
    for name in sweep.get("directions", []):
        if isinstance(name, str) and name not in BUILTIN_DIRECTIONS:
            raise ConfigError(f"unknown sweep direction {name!r}")
        if isinstance(name, dict) and set(name) != {"name", "file"}:
            raise ConfigError("sweep direction tables need exactly 'name' and 'file'")
    cfg = RunConfig(problem, nx, nt, solver, sweep,
                    int(run.get("seed", 0) if seed is None else seed),
                    str(run.get("name", raw.get("name", "run"))), os.path.abspath(path))
    if cfg.nx < 1 or cfg.nt < 1:
        raise ConfigError("mesh sizes must be positive")
    cfg.echo = {"config": raw, "seed": cfg.seed, "mesh": {"nx": cfg.nx, "nt": cfg.nt}}
    return cfg


def problem_toml(spec: ProblemSpec, w_file: str | None = None) -> str:
    """Serialise a problem declared by expressions (w constant or a grid file)."""
    d = spec.domain
    if d.kind == "interval":
        bounds = list(d.bounds[0])
    else:
        bounds = [list(b) for b in d.bounds]
    a = [[e.text for e in row] for row in spec.coeffs.a]
    if w_file is not None:
        w = {"file": w_file}
    elif isinstance(spec.w_ref, float):
        w = spec.w_ref
    elif hasattr(spec.w_ref, "text"):
        w = spec.w_ref.text
    else:
        raise ValueError("a sampled parameter needs a file name")
    doc = {
        "schema": SCHEMA_VERSION,
        "name": spec.name,
        "domain": {"kind": d.kind, "bounds": bounds},
        "time": {"T": spec.T},
        "coeffs": {"a": a},
        "functions": {"L": spec.L.text, "f": spec.f.text, "g": spec.g.text},
        "init": {"y0": spec.y0.text},
        "parameter": {"w": w},
    }
    return tomli_w.dumps(doc)
