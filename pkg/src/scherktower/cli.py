"""Command-line front end: ``solve``, ``periods``, ``mesh`` and ``verify``.

Configuration comes from built-in defaults, then an optional ``key = value``
file (``--config``), then command-line flags.  Outputs are written
atomically into ``--out``; JSON is written with sorted keys and carries the
resolved configuration.

Exit status: 0 success, 1 I/O failure, 2 usage error or no root found,
3 weld mismatch, 4 audit failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .errors import NoBracket, TowerError, WeldMismatch
from .meshgen import (
    FundamentalMesh,
    atomic_write,
    export_mesh,
    normalized_piece,
    read_ply,
    replicate,
    symmetry_group,
)
from .periods import (
    corner_report,
    curve_csv,
    default_y_grid,
    residual,
    solve_period_curve,
)
from .verify import CHECKS, run_audit
from .weier import TowerParams

log = logging.getLogger("scherktower")

EXIT_OK, EXIT_IO, EXIT_USAGE, EXIT_WELD, EXIT_AUDIT = 0, 1, 2, 3, 4
EXIT_NO_ROOT = 2

DEFAULT_TOLERANCES = {"quad": 1e-10, "solver": 1e-8, "weld": 1e-6}


@dataclass
class RunConfig:
    """Resolved configuration of one command."""

    k: int = 3
    y: float | None = None
    x: float | None = None
    resolution: int = 64
    end_cutoff: float = 1e-2
    copies: int = 1
    tolerances: dict = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    output_dir: str = "."
    seed: int = 0
    x_window: tuple = (-0.99, -1e-4)
    y_grid: tuple | None = None

    def validate(self) -> "RunConfig":
        if isinstance(self.k, bool) or int(self.k) != self.k or self.k < 3:
            raise ValueError(f"k must be an integer >= 3, got {self.k!r}")
        for name, tol in self.tolerances.items():
            if not tol > 0:
                raise ValueError(f"tolerance {name} must be positive")
        if (self.y is None) != (self.x is None):
            raise ValueError("give both y and x, or neither")
        if self.resolution < 8 or self.copies < 1:
            raise ValueError("resolution must be >= 8 and copies >= 1")
        lo, hi = self.x_window
        if not -1.0 < lo < hi < 0.0:
            raise ValueError(f"x window must lie inside (-1, 0), got {self.x_window!r}")
        return self

    def params(self) -> TowerParams | None:
        if self.y is None:
            return None
        return TowerParams(self.k, self.y, self.x)

    def grid(self) -> np.ndarray:
        return default_y_grid() if self.y_grid is None else np.asarray(self.y_grid)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["x_window"] = list(self.x_window)
        d["y_grid"] = None if self.y_grid is None else list(self.y_grid)
        return d

    # ``key = value`` file format -------------------------------------------

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "tolerances":
                lines += [f"tol_{n} = {t!r}" for n, t in sorted(v.items())]
            elif v is None:
                continue
            elif f.name in ("x_window",):
                lines.append(f"x_window = {v[0]!r}:{v[1]!r}")
            elif f.name == "y_grid":
                lines.append("y_grid = " + ",".join(repr(float(t)) for t in v))
            else:
                lines.append(f"{f.name} = {v!r}" if not isinstance(v, str) else
                             f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, base: "RunConfig | None" = None) -> "RunConfig":
        cfg = base if base is not None else cls()
        for number, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {number}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            cfg.set(key, value)
        return cfg

    def set(self, key: str, value: str) -> None:
        key = key.replace("-", "_")
        if key.startswith("tol_"):
            self.tolerances[key[4:]] = float(value)
        elif key in ("k", "resolution", "copies", "seed"):
            setattr(self, key, int(value))
        elif key in ("y", "x", "end_cutoff"):
            setattr(self, key, float(value))
        elif key in ("output_dir", "out"):
            self.output_dir = value
        elif key == "x_window":
            self.x_window = parse_window(value)
        elif key == "y_grid":
            self.y_grid = tuple(float(v) for v in value.split(",") if v.strip())
        else:
            raise ValueError(f"unknown configuration key {key!r}")


def parse_window(text: str) -> tuple:
    lo, hi = (float(v) for v in text.split(":"))
    return (lo, hi)


def parse_corner(text: str) -> tuple:
    y, x = (int(float(v)) for v in text.split(","))
    return (y, x)


# ---------------------------------------------------------------------------
# argument parsing


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key = value configuration file")
    parser.add_argument("--k", type=int, help="number of end pairs (>= 3)")
    parser.add_argument("--y", type=float, help="zero of g on (0, 1)")
    parser.add_argument("--x", type=float, help="pole of g on (-1, 0)")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--seed", type=int, help="seed for sample placement")
    parser.add_argument("--tol-quad", type=float, help="quadrature tolerance")
    parser.add_argument("--tol-solver", type=float, help="solver tolerance on |D|")
    parser.add_argument("--tol-weld", type=float, help="weld tolerance")
    parser.add_argument("--x-window", help="scanned x interval as lo:hi")
    parser.add_argument("--y-grid", help="comma-separated y values for the solver")
    parser.add_argument("--resolution", type=int, help="radial grid cells (>= 8)")
    parser.add_argument("--end-cutoff", type=float, help="distance kept from the end")
    parser.add_argument("--copies", type=int, help="periods on each side, >= 1")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scherktower", description="Construct and audit Scherk saddle towers.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (("solve", "trace the period curve"),
                       ("periods", "evaluate the period integrals"),
                       ("mesh", "build and export a tower mesh"),
                       ("verify", "run the audit")):
        p = sub.add_parser(name, help=text)
        _common(p)
        if name == "periods":
            p.add_argument("--corner", help="corner limit y,x: 0,-1 or 0,0")
        if name == "mesh":
            p.add_argument("--formats", default="obj,ply",
                           help="comma-separated subset of obj,ply")
        if name == "verify":
            p.add_argument("--only", help=f"comma-separated subset of {','.join(CHECKS)}")
            p.add_argument("--mesh", help="PLY file written by the mesh command")
    return parser


def _join_window(argv: list) -> list:
    """Attach values that start with '-' to ``--x-window`` and ``--corner``."""
    out = []
    it = iter(argv)
    for a in it:
        if a in ("--x-window", "--corner"):
            nxt = next(it, None)
            out.append(a if nxt is None else f"{a}={nxt}")
        else:
            out.append(a)
    return out


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            cfg = RunConfig.from_text(fh.read(), cfg)
    for key in ("k", "y", "x", "seed", "resolution", "end_cutoff", "copies"):
        v = getattr(args, key, None)
        if v is not None:
            setattr(cfg, key, v)
    if args.out is not None:
        cfg.output_dir = args.out
    for name in ("quad", "solver", "weld"):
        v = getattr(args, f"tol_{name}", None)
        if v is not None:
            cfg.tolerances[name] = v
    if args.x_window:
        cfg.x_window = parse_window(args.x_window)
    if args.y_grid:
        cfg.set("y_grid", args.y_grid)
    return cfg.validate()


# ---------------------------------------------------------------------------
# commands


def _write_json(path: str, data: dict) -> None:
    text = json.dumps(data, indent=2, sort_keys=True, default=_jsonable)
    atomic_write(path, (text + "\n").encode("utf-8"))


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    return str(v)


def _out(cfg: RunConfig, name: str) -> str:
    os.makedirs(cfg.output_dir, exist_ok=True)
    return os.path.join(cfg.output_dir, name)


def _solve(cfg: RunConfig) -> tuple:
    diags = []
    points = solve_period_curve(cfg.k, cfg.grid(), cfg.x_window,
                                tol=cfg.tolerances["solver"],
                                quad_tol=min(cfg.tolerances["quad"],
                                             cfg.tolerances["solver"] / 100.0),
                                diagnostics=diags)
    return points, diags


def _params_or_solve(cfg: RunConfig) -> TowerParams:
    p = cfg.params()
    if p is not None:
        return p
    points, _ = _solve(cfg)
    if not points:
        raise NoBracket(f"no root of D for k={cfg.k} in the configured window")
    return TowerParams(cfg.k, points[0].y, points[0].x)


def cmd_solve(cfg: RunConfig) -> int:
    points, diags = _solve(cfg)
    atomic_write(_out(cfg, f"period_curve_k{cfg.k}.csv"),
                 curve_csv(cfg.k, points).encode("ascii"))
    summary = {
        "config": cfg.as_dict(), "roots": len(points),
        "first_root": None if not points else {
            "y": points[0].y, "x": points[0].x, "residual": points[0].residual},
        "diagnostics": [str(d) for d in diags],
    }
    _write_json(_out(cfg, f"solve_k{cfg.k}.json"), summary)
    if not points:
        print(f"no root found for k={cfg.k}", file=sys.stderr)
        return EXIT_NO_ROOT
    r = points[0]
    print(f"k={cfg.k} y={r.y:.17g} x={r.x:.17g} D={r.residual:.3e} "
          f"({len(points)} roots)")
    return EXIT_OK


def cmd_periods(cfg: RunConfig, corner: str | None) -> int:
    tol = cfg.tolerances["quad"]
    if corner:
        report = corner_report(cfg.k, parse_corner(corner), tol)
    else:
        p = cfg.params()
        if p is None:
            raise ValueError("periods needs --y and --x, or --corner")
        report = residual(p, tol).as_dict()
    report["config"] = cfg.as_dict()
    text = json.dumps(report, indent=2, sort_keys=True, default=_jsonable)
    print(text)
    if cfg.output_dir != ".":
        atomic_write(_out(cfg, f"periods_k{cfg.k}.json"), (text + "\n").encode("utf-8"))
    return EXIT_OK


def build_tower(cfg: RunConfig, p: TowerParams) -> tuple:
    """Normalized piece, group and welded tower for a configuration."""
    piece = normalized_piece(p, cfg.resolution, cfg.end_cutoff, cfg.tolerances["quad"])
    group = symmetry_group(p, cfg.copies, piece.period)
    tower = replicate(piece, group, cfg.tolerances["weld"])
    return piece, group, tower


def cmd_mesh(cfg: RunConfig, formats: str) -> int:
    p = _params_or_solve(cfg)
    d = residual(p, cfg.tolerances["quad"]).D
    piece, group, tower = build_tower(cfg, p)
    conf = cfg.as_dict()
    conf.update({"y": p.y, "x": p.x})
    tower.metadata["config"] = conf
    piece.metadata["config"] = conf
    fmts = tuple(f.strip() for f in formats.split(",") if f.strip())
    written = export_mesh(tower, _out(cfg, f"tower_k{p.k}"), fmts, residual=d)
    written += export_mesh(piece, _out(cfg, f"piece_k{p.k}"), fmts, residual=d)
    print(f"k={p.k} y={p.y:.17g} x={p.x:.17g} D={d:.3e} period={tower.period:g} "
          f"vertices={tower.n_vertices} faces={tower.faces.shape[0]}")
    for w in written:
        print(w)
    return EXIT_OK


def load_mesh(path: str) -> FundamentalMesh:
    """Mesh and parameters from a PLY file and its JSON sidecar."""
    stem = os.path.splitext(path)[0]
    with open(stem + ".json", encoding="utf-8") as fh:
        meta = json.load(fh)
    v, n, f = read_ply(path)
    p = TowerParams(meta["k"], meta["y"], meta["x"])
    inner = meta.get("metadata", {})
    return FundamentalMesh(vertices=v, faces=f, gauss=n, boundary_tags={},
                           params=p, period=float(meta["period"]),
                           metadata={"resolution": inner.get("resolution", 64)})


def cmd_verify(cfg: RunConfig, only: str | None, mesh_path: str | None) -> int:
    names = None if not only else [s.strip() for s in only.split(",") if s.strip()]
    if mesh_path:
        tower = load_mesh(mesh_path)
        p, piece, group = tower.params, None, None
    else:
        p = _params_or_solve(cfg)
        tower = piece = group = None
        if names is None or "mesh" in names:
            piece, group, tower = build_tower(cfg, p)
    report = run_audit(p, mesh=tower, piece=piece, group=group, only=names,
                       config=cfg.as_dict(), seed=cfg.seed,
                       tolerances=cfg.tolerances)
    data = report.as_dict()
    data["config"] = cfg.as_dict()
    _write_json(_out(cfg, f"audit_k{p.k}.json"), data)
    print(report.table())
    return EXIT_OK if report.ok else EXIT_AUDIT


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(_join_window(argv))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
    except (ValueError, OSError) as exc:
        parser.error(str(exc))
    try:
        if args.command == "solve":
            return cmd_solve(cfg)
        if args.command == "periods":
            return cmd_periods(cfg, args.corner)
        if args.command == "mesh":
            return cmd_mesh(cfg, args.formats)
        return cmd_verify(cfg, args.only, args.mesh)
    except NoBracket as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_ROOT
    except WeldMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_WELD
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, TowerError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
