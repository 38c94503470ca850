"""Configuration parsing, CSV/VTK writers and checkpoint serialization.

Configuration files are TOML. Every key is optional; omitted keys take the
documented defaults, unknown keys are rejected. Layout::

    [model]              # scalar ModelParams fields, Kf/Ks as scalar or 3x3
    [model.kernel]       # gamma, power
    [model.production]   # g0, y_star, s, axial_amp, temperature_coupling
    [model.radius_map]   # c_star, w, constant
    [model.stress]       # P_in, P_out
    [discretization]     # dt, n_axial, n_radial, n_angular, n_outer, core_fraction, n_chem
    [solver]             # stokes_tol, transport_tol, n_subiter, picard_tol, picard_max_iter, backend
    [run]                # mode, seed, deterministic, output_dir, write_vtk, vtk_every, checkpoint_every
"""
from __future__ import annotations

import hashlib
import io as _io
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
try:
    import tomllib as tomli
except ImportError:  # Python < 3.11
    import tomli

from .geometry import Resolution
from .params import (InvalidParameters, KernelSpec, ModelParams, ProductionSpec, RadiusMapSpec, StressSpec,
                     check_params)


class ConfigError(ValueError):
    """Malformed, incomplete or inadmissible configuration."""


CSV_COLUMNS = ("t", "T1", "T", "R_min", "R_mean", "R_max", "Q_in", "Q_out", "interface_flux", "energy")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SolverOptions:
    stokes_tol: float = 1e-10
    transport_tol: float = 1e-10
    n_subiter: int = 2
    picard_tol: float = 1e-6
    picard_max_iter: int = 20
    backend: str = "auto"


@dataclass(frozen=True)
class OutputOptions:
    output_dir: str = "out"
    write_vtk: bool = False
    vtk_every: int = 1
    checkpoint_every: int = 0


@dataclass(frozen=True)
class RunConfig:
    params: ModelParams = field(default_factory=ModelParams)
    resolution: Resolution = field(default_factory=Resolution)
    dt: float = 0.05
    n_chem: int = 33
    solver: SolverOptions = field(default_factory=SolverOptions)
    output: OutputOptions = field(default_factory=OutputOptions)
    mode: str = "staggered"
    seed: int = 0
    deterministic: bool = True

    @property
    def n_steps(self) -> int:
        return int(round(self.params.T_final / self.dt))

    def replace(self, **changes) -> "RunConfig":
        return replace(self, **changes)

    def validate(self) -> "RunConfig":
        """Raise :class:`ConfigError` unless the configuration is admissible."""
        try:
            check_params(self.params)
        except InvalidParameters as exc:
            raise ConfigError(str(exc)) from exc
        self.resolution.check()
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        if abs(self.n_steps * self.dt - self.params.T_final) > 1e-9 * self.params.T_final:
            raise ConfigError(f"T_final={self.params.T_final} is not a multiple of dt={self.dt}")
        if self.params.gamma < 2 * self.dt:
            raise ConfigError(f"kernel width gamma={self.params.gamma} must be at least 2*dt={2 * self.dt}")
        if self.mode not in ("staggered", "picard"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.n_chem < 3:
            raise ConfigError("n_chem must be at least 3")
        if self.solver.n_subiter < 1:
            raise ConfigError("n_subiter must be at least 1")
        return self


_SUBSPECS = {"kernel": ("kernel_spec", KernelSpec), "production": ("G_spec", ProductionSpec),
             "radius_map": ("H_spec", RadiusMapSpec), "stress": ("fb_spec", StressSpec)}
_MATRIX_KEYS = ("Kf", "Ks")


def _coerce(section: str, key: str, value, typ):
    where = f"[{section}] {key}"
    if typ in ("float", float, "float | None") or typ is float:
        if value is None and "None" in str(typ):
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {type(value).__name__}")
        return float(value)
    if typ in ("int", int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {type(value).__name__}")
        return int(value)
    if typ in ("bool", bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {type(value).__name__}")
        return value
    if typ in ("str", str):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {type(value).__name__}")
        return value
    raise ConfigError(f"{where}: unsupported field type {typ}")


def _fill(cls, section: str, table: dict, skip=()):
    known = {f.name: f.type for f in fields(cls) if f.name not in skip}
    unknown = sorted(set(table) - set(known))
    if unknown:
        raise ConfigError(f"[{section}] unknown key(s): {', '.join(unknown)}")
    return {k: _coerce(section, k, v, known[k]) for k, v in table.items()}


def _matrix(key, value):
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value) * np.eye(3)
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[model] {key}: expected a number or a 3x3 array") from exc
    if arr.shape != (3, 3):
        raise ConfigError(f"[model] {key}: expected a number or a 3x3 array, got shape {arr.shape}")
    return arr


def config_from_dict(data: dict, validate: bool = True) -> RunConfig:
    """Build a :class:`RunConfig` from parsed TOML tables, validated unless ``validate`` is false."""
    top = set(data) - {"model", "discretization", "solver", "run"}
    if top:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(top))}")
    model = dict(data.get("model", {}))
    sub = {}
    for name, (attr, cls) in _SUBSPECS.items():
        tbl = model.pop(name, {})
        if not isinstance(tbl, dict):
            raise ConfigError(f"[model.{name}] must be a table")
        sub[attr] = cls(**_fill(cls, f"model.{name}", tbl))
    mats = {k: _matrix(k, model.pop(k)) for k in _MATRIX_KEYS if k in model}
    scalars = _fill(ModelParams, "model", model, skip=tuple(a for a, _ in _SUBSPECS.values()) + _MATRIX_KEYS)
    params = ModelParams(**scalars, **mats, **sub)

    disc = dict(data.get("discretization", {}))
    top_disc = {k: disc.pop(k) for k in ("dt", "n_chem") if k in disc}
    res = Resolution(**_fill(Resolution, "discretization", disc))
    solver = SolverOptions(**_fill(SolverOptions, "solver", data.get("solver", {})))
    run = dict(data.get("run", {}))
    run_top = {k: run.pop(k) for k in ("mode", "seed", "deterministic") if k in run}
    output = OutputOptions(**_fill(OutputOptions, "run", run))
    kw = {}
    if "dt" in top_disc:
        kw["dt"] = _coerce("discretization", "dt", top_disc["dt"], float)
    if "n_chem" in top_disc:
        kw["n_chem"] = _coerce("discretization", "n_chem", top_disc["n_chem"], int)
    for k, typ in (("mode", str), ("seed", int), ("deterministic", bool)):
        if k in run_top:
            kw[k] = _coerce("run", k, run_top[k], typ)
    cfg = RunConfig(params=params, resolution=res, solver=solver, output=output, **kw)
    return cfg.validate() if validate else cfg


def parse_config_text(text: str, validate: bool = True) -> RunConfig:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        # tomli messages carry "(at line L, column C)", duplicates included
        raise ConfigError(f"config parse error: {exc}") from exc
    return config_from_dict(data, validate)


def parse_config(path, validate: bool = True) -> RunConfig:
    """Read, default-fill and (by default) validate a TOML run configuration."""
    return parse_config_text(Path(path).read_text(), validate)


def config_to_dict(cfg: RunConfig) -> dict:
    """Plain-data view of a configuration (used in run reports)."""
    p = cfg.params
    model = {f.name: getattr(p, f.name) for f in fields(ModelParams)
             if f.name not in _MATRIX_KEYS and f.name not in {a for a, _ in _SUBSPECS.values()}}
    for k in _MATRIX_KEYS:
        model[k] = np.asarray(getattr(p, k)).tolist()
    for name, (attr, cls) in _SUBSPECS.items():
        spec = getattr(p, attr)
        model[name] = {f.name: getattr(spec, f.name) for f in fields(cls)}
    res = cfg.resolution
    return {
        "model": model,
        "discretization": {"dt": cfg.dt, "n_chem": cfg.n_chem, **{f.name: getattr(res, f.name) for f in fields(Resolution)}},
        "solver": {f.name: getattr(cfg.solver, f.name) for f in fields(SolverOptions)},
        "run": {"mode": cfg.mode, "seed": cfg.seed, "deterministic": cfg.deterministic,
                **{f.name: getattr(cfg.output, f.name) for f in fields(OutputOptions)}},
    }


# ---------------------------------------------------------------------------
# atomic writers
# ---------------------------------------------------------------------------

def atomic_write(path, data: bytes | str) -> None:
    """Write via a temporary file in the same directory and rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def format_csv_row(values) -> str:
    return ",".join("%.17g" % float(v) for v in values) + "\n"


def append_csv(path, row: dict) -> None:
    """Append one diagnostics row; the header is written with the first row."""
    path = Path(path)
    old = path.read_text() if path.exists() else ",".join(CSV_COLUMNS) + "\n"
    atomic_write(path, old + format_csv_row(row[c] for c in CSV_COLUMNS))


def write_csv(path, rows) -> None:
    text = ",".join(CSV_COLUMNS) + "\n" + "".join(format_csv_row(r[c] for c in CSV_COLUMNS) for r in rows)
    atomic_write(path, text)


def read_csv(path) -> dict:
    arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return {c: arr[:, i] for i, c in enumerate(CSV_COLUMNS)}


# ---------------------------------------------------------------------------
# legacy VTK
# ---------------------------------------------------------------------------

def write_vtk(path, points: np.ndarray, cells: np.ndarray, point_data: dict | None = None,
              cell_data: dict | None = None, title: str = "skintherm") -> None:
    """Legacy 4.2 ASCII unstructured grid of linear tetrahedra.

    Scalars and 3-vectors are supported; values use 17 significant digits so a
    re-read reproduces them exactly.
    """
    points = np.asarray(points, dtype=float)
    cells = np.asarray(cells, dtype=np.int64)
    out = _io.StringIO()
    out.write(f"# vtk DataFile Version 4.2\n{title}\nASCII\nDATASET UNSTRUCTURED_GRID\n")
    out.write(f"POINTS {len(points)} double\n")
    np.savetxt(out, points, fmt="%.17g")
    out.write(f"CELLS {len(cells)} {5 * len(cells)}\n")
    np.savetxt(out, np.column_stack([np.full(len(cells), 4), cells]), fmt="%d")
    out.write(f"CELL_TYPES {len(cells)}\n")
    np.savetxt(out, np.full(len(cells), 10), fmt="%d")
    for kind, data, n in (("POINT_DATA", point_data, len(points)), ("CELL_DATA", cell_data, len(cells))):
        if not data:
            continue
        out.write(f"{kind} {n}\n")
        for name, val in data.items():
            val = np.asarray(val, dtype=float)
            if val.shape == (n,):
                out.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                np.savetxt(out, val, fmt="%.17g")
            elif val.shape == (n, 3):
                out.write(f"VECTORS {name} double\n")
                np.savetxt(out, val, fmt="%.17g")
            else:
                raise ValueError(f"{kind} {name!r} has shape {val.shape}, expected ({n},) or ({n}, 3)")
    atomic_write(path, out.getvalue())


def read_vtk(path) -> dict:
    """Read a file written by :func:`write_vtk`; returns points, cells and the data arrays."""
    tokens = Path(path).read_text().split("\n")
    i = 4
    out = {"point_data": {}, "cell_data": {}}

    def block(start, nrows):
        return np.loadtxt(tokens[start:start + nrows], ndmin=2)

    n = int(tokens[i].split()[1])
    out["points"] = block(i + 1, n)
    i += n + 1
    nc = int(tokens[i].split()[1])
    out["cells"] = block(i + 1, nc)[:, 1:].astype(np.int64)
    i += nc + 1
    i += nc + 1  # cell types
    target = None
    count = 0
    while i < len(tokens) and tokens[i].strip():
        head = tokens[i].split()
        if head[0] in ("POINT_DATA", "CELL_DATA"):
            target = out["point_data" if head[0] == "POINT_DATA" else "cell_data"]
            count = int(head[1])
            i += 1
        elif head[0] == "SCALARS":
            target[head[1]] = block(i + 2, count)[:, 0]
            i += count + 2
        elif head[0] == "VECTORS":
            target[head[1]] = block(i + 1, count)
            i += count + 1
        else:
            raise ValueError(f"unexpected VTK line {tokens[i]!r}")
    return out


def write_snapshot(state, mesh, space, deformation, params, directory, index: int) -> list[Path]:
    """Fluid and solid VTK files at the state time with deformed point coordinates."""
    from .stokes import StokesSolution, reconstruct_physical

    directory = Path(directory)
    t = state.t
    fl, so = mesh.fluid, mesh.solid
    nv = fl.n_vertices
    sol = StokesSolution(w=state.w, q=state.q, residual=0.0, space=space, t=t)
    X, v, p = reconstruct_physical(sol, deformation, params)
    f_path = directory / f"fluid_{index:05d}.vtk"
    s_path = directory / f"solid_{index:05d}.vtk"
    write_vtk(f_path, X[:nv], fl.cells, {"theta": state.theta_f, "v": v[:nv], "w": state.w[:nv], "p": p},
              title=f"fluid t={t!r}")
    write_vtk(s_path, deformation.eval_S(t, so.vertices), so.cells, {"theta": state.theta_s},
              title=f"solid t={t!r}")
    return [f_path, s_path]


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"SKTHCKPT"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<8sI32sQ")


class CheckpointError(RuntimeError):
    pass


def pack_arrays(arrays: dict, meta: dict, version: int = CHECKPOINT_VERSION) -> bytes:
    """Serialize named arrays plus JSON metadata with a versioned, checksummed header."""
    buf = _io.BytesIO()
    payload = dict(arrays)
    payload["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    np.savez(buf, **payload)
    body = buf.getvalue()
    return _HEADER.pack(CHECKPOINT_MAGIC, version, hashlib.sha256(body).digest(), len(body)) + body


def unpack_arrays(blob: bytes) -> tuple[dict, dict]:
    if len(blob) < _HEADER.size:
        raise CheckpointError("checkpoint truncated")
    magic, version, digest, size = _HEADER.unpack_from(blob)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError("not a checkpoint file")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint version {version} unsupported (expected {CHECKPOINT_VERSION})")
    body = blob[_HEADER.size:]
    if len(body) != size or hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checkpoint corrupted (checksum mismatch)")
    with np.load(_io.BytesIO(body)) as z:
        arrays = {k: z[k] for k in z.files}
    meta = json.loads(arrays.pop("__meta__").tobytes().decode())
    return arrays, meta


def save_checkpoint(path, blob: bytes) -> None:
    atomic_write(path, blob)


def load_checkpoint(path) -> bytes:
    return Path(path).read_bytes()
