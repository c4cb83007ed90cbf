"""Batch command-line front end: ``qperc {sweep,scan,ptmap,curve}``.

Data goes to the output file (or stdout); progress and summaries go to
stderr. Every output file gets a ``<output>.meta.json`` sidecar holding the
resolved configuration, so a run can be repeated from its sidecar alone.

Exit codes: 0 success, 2 configuration error, 3 computation error.
"""
from __future__ import annotations

import argparse
import io
import json
import os
import sys
import tempfile
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .ensemble import (
    MODES,
    ComputationError,
    EnsembleConfig,
    aspect_ratio_scan,
    default_threads,
    participation_map,
    sweep,
)
from .lattice import LatticeError, LatticeSpec, build_connectivity, clusters, from_bond_list, sample_realization
from .spectral import SpectralError, decompose_biorthogonal, decompose_symmetric, trapped_operators
from .transport import (
    ltb_classical,
    ltb_classical_oracle,
    ltb_quantum,
    ltb_quantum_time_domain,
    propagate_direct,
    survival_classical,
    survival_quantum,
)

SCHEMA_VERSION = 1
COMMANDS = ("sweep", "scan", "ptmap", "curve")
FORMATS = ("csv", "json")
DEFAULT_SCAN = "24x2,12x4,7x7,4x12,2x24"

SCHEMAS = {
    "sweep": ["B", "p", "mean_P_inf", "stderr_P", "mean_Pi_inf", "stderr_Pi", "defective"],
    "scan": ["nx", "ny", "ar", "p05_rw", "B05_rw", "p05_qw", "B05_qw"],
    "ptmap": ["j", "n", "xi"],
    "curve": ["t", "P", "Pi"],
}


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"invalid {field_name}: {message}")


@dataclass
class RunConfig:
    command: str = "sweep"
    nx: int | None = None
    ny: int | None = None
    R: int = 1000
    seed: int = 0
    gamma: float = 1.0
    B: str = "all"
    mode: str = "nested"
    t: str = "0:100:0.5"
    r: int = 0
    bonds: str | None = None
    lattices: str = DEFAULT_SCAN
    output: str | None = None
    format: str = "csv"
    threads: int | None = None
    extras: dict = field(default_factory=dict, repr=False)

    def resolved(self) -> dict:
        d = asdict(self)
        d.pop("extras")
        return d


def parse_b_selection(text, b_max: int) -> list[int]:
    """``"all"``, ``"a:b"`` (inclusive), ``"a:b:step"`` or a comma list."""
    if isinstance(text, int):
        values = [text]
    elif isinstance(text, (list, tuple)):
        values = [int(x) for x in text]
    else:
        text = str(text).strip()
        if text == "all":
            return list(range(b_max + 1))
        try:
            if ":" in text:
                parts = [int(x) for x in text.split(":")]
                if len(parts) not in (2, 3):
                    raise ValueError
                step = parts[2] if len(parts) == 3 else 1
                if step <= 0:
                    raise ValueError
                values = list(range(parts[0], parts[1] + 1, step))
            else:
                values = [int(x) for x in text.split(",") if x.strip()]
        except ValueError:
            raise ConfigError("B", f"cannot parse {text!r}") from None
    bad = [b for b in values if not 0 <= b <= b_max]
    if bad or not values:
        raise ConfigError("B", f"values {bad or values} outside [0, B_max={b_max}]")
    return values


def parse_time_grid(text: str) -> np.ndarray:
    try:
        start, stop, step = (float(x) for x in str(text).split(":"))
    except ValueError:
        raise ConfigError("t", f"expected start:stop:step, got {text!r}") from None
    if start < 0 or step <= 0 or stop < start:
        raise ConfigError("t", f"need 0 <= start <= stop and step > 0, got {text!r}")
    n = int(np.floor((stop - start) / step + 1e-9)) + 1
    return start + step * np.arange(n)


def parse_bonds(text: str) -> list[list[int]]:
    """``"jx,jy-kx,ky;..."`` into ``[[jx, jy, kx, ky], ...]``."""
    out = []
    for item in str(text).replace(" ", "").split(";"):
        if not item:
            continue
        try:
            left, right = item.split("-")
            out.append([*map(int, left.split(",")), *map(int, right.split(","))])
        except ValueError:
            raise ConfigError("bonds", f"cannot parse bond {item!r}") from None
        if len(out[-1]) != 4:
            raise ConfigError("bonds", f"bond {item!r} needs two coordinate pairs")
    return out


def parse_lattices(text: str) -> list[LatticeSpec]:
    specs = []
    for item in str(text).split(","):
        try:
            nx, ny = (int(x) for x in item.lower().split("x"))
            specs.append(LatticeSpec(nx, ny))
        except (ValueError, LatticeError) as exc:
            raise ConfigError("lattices", f"{item!r}: {exc}") from None
    return specs


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def render_csv(kind: str, rows) -> str:
    buf = io.StringIO()
    buf.write(f"# qperc {kind} schema={SCHEMA_VERSION}\n")
    buf.write(",".join(SCHEMAS[kind]) + "\n")
    for row in rows:
        buf.write(",".join(fmt(v) for v in row) + "\n")
    return buf.getvalue()


def render_json(kind: str, rows, extra=None) -> str:
    cols = SCHEMAS[kind]
    doc = {"schema": f"qperc/{kind}/{SCHEMA_VERSION}", "columns": cols}
    doc["rows"] = [dict(zip(cols, (_jsonable(v) for v in row))) for row in rows]
    if extra:
        doc.update(extra)
    return json.dumps(doc, indent=1, sort_keys=False) + "\n"


def _jsonable(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    return v


def atomic_write(path: Path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qperc", description="Quantum vs classical transport on random 2D bond lattices.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON file with RunConfig fields; flags override it")
        p.add_argument("--R", type=int, default=argparse.SUPPRESS, help="realizations (default 1000)")
        p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed (default 0)")
        p.add_argument("--gamma", type=float, default=argparse.SUPPRESS, help="trap strength (default 1.0)")
        p.add_argument("--mode", choices=MODES, default=argparse.SUPPRESS, help="bond sampling across B")
        p.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="worker processes (env QPERC_THREADS)")
        p.add_argument("-o", "--output", default=argparse.SUPPRESS, help="output file (stdout if omitted)")
        p.add_argument("--format", choices=FORMATS, default=argparse.SUPPRESS)

    def dims(p):
        p.add_argument("--nx", type=int, default=argparse.SUPPRESS)
        p.add_argument("--ny", type=int, default=argparse.SUPPRESS)

    p = sub.add_parser("sweep", help="ensemble LTB for every B and the 0.5 crossings")
    dims(p)
    p.add_argument("--B", default=argparse.SUPPRESS, help="'all', 'a:b[:step]' or comma list")
    common(p)

    p = sub.add_parser("scan", help="crossings for several aspect ratios")
    p.add_argument("--lattices", default=argparse.SUPPRESS, help=f"comma list of NXxNY (default {DEFAULT_SCAN})")
    common(p)

    p = sub.add_parser("ptmap", help="ensemble participation map of trap-free eigenstates")
    dims(p)
    p.add_argument("--B", default=argparse.SUPPRESS, help="bond count")
    common(p)

    p = sub.add_parser("curve", help="survival curves P(t), Pi(t) for one realization")
    dims(p)
    p.add_argument("--B", default=argparse.SUPPRESS, help="bond count")
    p.add_argument("--r", type=int, default=argparse.SUPPRESS, help="realization index (default 0)")
    p.add_argument("--t", default=argparse.SUPPRESS, help="time grid start:stop:step")
    p.add_argument("--bonds", default=argparse.SUPPRESS, help="explicit bonds 'jx,jy-kx,ky;...' (bypasses sampling)")
    common(p)
    return parser


def resolve_config(argv=None) -> RunConfig:
    args = vars(build_parser().parse_args(argv))
    merged: dict = {}
    config_path = args.pop("config", None)
    if config_path:
        try:
            merged.update(json.loads(Path(config_path).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError("config", str(exc)) from None
    command = args.pop("command")
    if merged.get("command", command) != command:
        raise ConfigError("command", f"config file says {merged['command']!r}, command line says {command!r}")
    merged.update(args)
    merged["command"] = command
    known = {f.name for f in fields(RunConfig)} - {"extras"}
    unknown = set(merged) - known
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown field")
    cfg = RunConfig(**merged)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig):
    if cfg.command not in COMMANDS:
        raise ConfigError("command", f"must be one of {COMMANDS}")
    for name in ("R", "seed", "r"):
        val = getattr(cfg, name)
        if not isinstance(val, int) or isinstance(val, bool):
            raise ConfigError(name, f"expected integer, got {val!r}")
    if cfg.R < 1:
        raise ConfigError("R", "must be >= 1")
    if cfg.r < 0:
        raise ConfigError("r", "must be >= 0")
    try:
        cfg.gamma = float(cfg.gamma)
    except (TypeError, ValueError):
        raise ConfigError("gamma", f"expected number, got {cfg.gamma!r}") from None
    if not np.isfinite(cfg.gamma) or cfg.gamma < 0:
        raise ConfigError("gamma", "must be finite and >= 0")
    if cfg.mode not in MODES:
        raise ConfigError("mode", f"must be one of {MODES}")
    if cfg.format not in FORMATS:
        raise ConfigError("format", f"must be one of {FORMATS}")
    if cfg.threads is None:
        try:
            cfg.threads = default_threads()
        except ValueError:
            raise ConfigError("threads", "QPERC_THREADS is not an integer") from None
    if not isinstance(cfg.threads, int) or cfg.threads < 1:
        raise ConfigError("threads", "must be a positive integer")
    if cfg.command == "scan":
        cfg.extras["specs"] = parse_lattices(cfg.lattices)
        return
    if cfg.nx is None or cfg.ny is None:
        raise ConfigError("nx" if cfg.nx is None else "ny", "lattice dimensions are required")
    try:
        spec = LatticeSpec(int(cfg.nx), int(cfg.ny))
    except (LatticeError, TypeError, ValueError) as exc:
        raise ConfigError("nx" if "nx" in str(exc) else "ny", str(exc)) from None
    cfg.extras["spec"] = spec
    if cfg.command == "sweep":
        cfg.extras["B_values"] = parse_b_selection(cfg.B, spec.b_max)
    elif cfg.command == "ptmap":
        bs = parse_b_selection(cfg.B, spec.b_max) if cfg.B != "all" else None
        if not bs or len(bs) != 1:
            raise ConfigError("B", "ptmap needs a single bond count")
        cfg.extras["B_value"] = bs[0]
    elif cfg.command == "curve":
        cfg.extras["times"] = parse_time_grid(cfg.t)
        if cfg.bonds is not None:
            try:
                real = from_bond_list(spec, parse_bonds(cfg.bonds))
            except LatticeError as exc:
                raise ConfigError("bonds", str(exc)) from None
            if cfg.B != "all" and int(cfg.B) != real.n_bonds:
                raise ConfigError("B", f"--B {cfg.B} disagrees with {real.n_bonds} explicit bonds")
            cfg.extras["realization"] = real
        else:
            bs = parse_b_selection(cfg.B, spec.b_max) if cfg.B != "all" else None
            if not bs or len(bs) != 1:
                raise ConfigError("B", "curve needs a single bond count or --bonds")
            cfg.extras["realization"] = sample_realization(spec, bs[0], cfg.seed, cfg.r)


def _progress(label: str):
    last = [0.0]

    def report(done, total):
        now = time.monotonic()
        if done == total or now - last[0] > 2.0:
            last[0] = now
            print(f"[qperc] {label}: {done}/{total} realizations", file=sys.stderr, flush=True)

    return report


def _ensemble_cfg(cfg: RunConfig, B_values=None) -> EnsembleConfig:
    return EnsembleConfig(
        cfg.extras["spec"], R=cfg.R, seed=cfg.seed, gamma=cfg.gamma, B_values=B_values, mode=cfg.mode, threads=cfg.threads
    )


def cmd_sweep(cfg: RunConfig):
    spec = cfg.extras["spec"]
    res = sweep(_ensemble_cfg(cfg, cfg.extras["B_values"]), _progress(f"sweep {spec.nx}x{spec.ny}"))
    rows = [[r[c] for c in SCHEMAS["sweep"]] for r in res.rows()]
    missing = [k for k, v in res.crossings.items() if v is None]
    meta = {"crossings": res.crossings, "no_crossing": missing, "defective_total": int(res.defective.sum())}
    for kind in ("rw", "qw"):
        c = res.crossings[kind]
        msg = f"B05={c['B05']} p05={c['p05']:.4f} (interp {c['p05_interp']:.4f})" if c else "no crossing in swept range"
        print(f"[qperc] {kind}: {msg}", file=sys.stderr)
    return rows, meta


def cmd_scan(cfg: RunConfig):
    table = aspect_ratio_scan(
        cfg.extras["specs"], cfg.R, cfg.seed, cfg.gamma, cfg.mode, cfg.threads, _progress("scan")
    )
    rows = [[t.nx, t.ny, t.ar, t.p05_rw, t.B05_rw, t.p05_qw, t.B05_qw] for t in table]
    for t in table:
        print(f"[qperc] {t.nx}x{t.ny} AR={t.ar:.3f} p05_rw={t.p05_rw} p05_qw={t.p05_qw}", file=sys.stderr)
    return rows, {}


def cmd_ptmap(cfg: RunConfig):
    pm = participation_map(_ensemble_cfg(cfg), cfg.extras["B_value"], _progress("ptmap"))
    return [list(row) for row in pm.rows()], {"B": pm.B}


def cmd_curve(cfg: RunConfig):
    real = cfg.extras["realization"]
    spec = real.spec
    times = cfg.extras["times"]
    op = trapped_operators(build_connectivity(real), spec, cfg.gamma)
    cspec = decompose_symmetric(op.classical)
    qspec = decompose_biorthogonal(op.quantum)
    P = [survival_classical(cspec, spec, t) for t in times]
    if qspec.defective:
        psi0 = np.zeros((spec.n_nodes, spec.ny), dtype=complex)
        psi0[spec.source_nodes, np.arange(spec.ny)] = 1.0
        Pi = [float(np.sum(np.abs(propagate_direct(op, psi0, t)) ** 2) / spec.ny) for t in times]
        pi_inf = ltb_quantum_time_domain(op, spec, qspec)
    else:
        Pi = [survival_quantum(qspec, spec, t) for t in times]
        pi_inf = ltb_quantum(qspec, spec)
    meta = {
        "realization": real.to_json(),
        "P_inf": ltb_classical(cspec, spec),
        "P_inf_oracle": ltb_classical_oracle(clusters(real), spec),
        "Pi_inf": pi_inf,
        "defective": bool(qspec.defective),
    }
    print(f"[qperc] P_inf={meta['P_inf']:.6f} Pi_inf={pi_inf:.6f}", file=sys.stderr)
    return [[t, p, q] for t, p, q in zip(times, P, Pi)], meta


HANDLERS = {"sweep": cmd_sweep, "scan": cmd_scan, "ptmap": cmd_ptmap, "curve": cmd_curve}


def run(cfg: RunConfig) -> int:
    started = time.time()
    rows, meta = HANDLERS[cfg.command](cfg)
    kind = cfg.command
    text = render_csv(kind, rows) if cfg.format == "csv" else render_json(kind, rows, meta)
    if cfg.output is None:
        sys.stdout.write(text)
        return 0
    out = Path(cfg.output)
    sidecar = {
        "tool": "qperc",
        "version": __version__,
        "schema": f"qperc/{kind}/{SCHEMA_VERSION}",
        "config": cfg.resolved(),
        "rows": len(rows),
        "wall_time_s": time.time() - started,
        **meta,
    }
    atomic_write(out, text)
    atomic_write(out.with_name(out.name + ".meta.json"), json.dumps(sidecar, indent=1, default=_jsonable) + "\n")
    print(f"[qperc] wrote {out} ({len(rows)} rows)", file=sys.stderr)
    return 0


def main(argv=None) -> int:
    try:
        cfg = resolve_config(argv)
    except ConfigError as exc:
        print(f"qperc: {exc}", file=sys.stderr)
        return 2
    try:
        return run(cfg)
    except ComputationError as exc:
        print(f"qperc: {exc}", file=sys.stderr)
        return 3
    except (SpectralError, ArithmeticError, np.linalg.LinAlgError) as exc:
        seed, r = cfg.seed, cfg.r
        B = cfg.extras.get("realization").n_bonds if "realization" in cfg.extras else None
        print(f"qperc: computation failed at (seed={seed}, r={r}, B={B}): {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
