"""Command-line entry point: ``curvflow {flow,validate,inequalities,make-mesh}``.

Configuration is a flat ``key = value`` file with section headers::

    [mesh]
    generator = icosphere
    radius = 1
    subdivisions = 3

    [flow]
    kind = biharmonic
    t_end = 0.01

Values are resolved as built-in defaults < config file < ``--set
section.key=value`` flags. Unknown sections or keys are rejected.

Exit codes
----------
0  success (flow reached t_end, extinction or max_steps; checks passed)
1  configuration or I/O error
2  numerical failure during a flow
3  curvature concentration exceeded the configured threshold
4  verification criteria not met (validate, inequalities)
"""

from __future__ import annotations

import argparse
import configparser
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2
EXIT_CONCENTRATION = 3
EXIT_CRITERIA = 4

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# schema


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _float_list(s: str):
    s = s.strip()
    if s.count(":") == 2:
        # start:stop:count
        a, b, n = s.split(":")
        n = int(n)
        if n < 1:
            raise ValueError("count must be >= 1")
        a, b = float(a), float(b)
        return [a + (b - a) * k / max(n - 1, 1) for k in range(n)]
    return [float(x) for x in s.replace(";", ",").split(",") if x.strip()]


def _int_list(s: str):
    return [int(x) for x in s.replace(";", ",").split(",") if x.strip()]


def _str_list(s: str):
    return [x.strip() for x in s.replace(";", ",").split(",") if x.strip()]


def _surfaces(s: str):
    # "torus:2,1; ellipsoid:1.5,1,0.8" -> [("torus", (2, 1)), ...]
    out = []
    for item in s.split(";"):
        item = item.strip()
        if not item:
            continue
        name, _, args = item.partition(":")
        params = tuple(float(x) for x in args.split(",") if x.strip())
        out.append((name.strip(), params))
    if not out:
        raise ValueError("empty surface list")
    return out


def _families(s: str):
    # "GN1:4, GN2:5, GNe:3" -> [("GN1", 4), ...]
    out = []
    for item in _str_list(s):
        iid, sep, n = item.partition(":")
        if not sep:
            raise ValueError(f"family {item!r} must look like ID:n")
        out.append((iid.strip(), int(n)))
    if not out:
        raise ValueError("empty family list")
    return out


def _centers(s: str):
    s = s.strip()
    if s == "all-vertices":
        return s
    name, _, k = s.partition(":")
    if name != "subsample" or not k.strip().isdigit():
        raise ValueError("expected 'all-vertices' or 'subsample:<k>'")
    return ("vertex-subsample", int(k))


_MESH = {
    "generator": (str, "icosphere"),
    "path": (str, ""),
    "radius": (float, 1.0),
    "subdivisions": (int, 3),
    "major_radius": (float, math.sqrt(2.0)),
    "minor_radius": (float, 1.0),
    "res_major": (int, 64),
    "res_minor": (int, 32),
    "perturb": (float, 0.0),
    "seed": (int, 0),
}

SCHEMA = {
    "mesh": _MESH,
    "flow": {
        "kind": (str, "biharmonic"),
        "include_tangential": (_bool, False),
        "stepper": (str, "explicit-euler"),
        "c_dt": (float, 0.02),
        "t_end": (float, 1.0),
        "max_steps": (int, 1_000_000),
        "concentration_radius": (float, 1.0),
        "concentration_threshold": (float, math.inf),
        "concentration_centers": (_centers, "all-vertices"),
        "snapshot_every": (int, 100),
        "extinction_fraction": (float, 1e-3),
    },
    "output": {
        "csv": (str, "diagnostics.csv"),
        "snapshots": (_bool, False),
        "snapshot_stem": (str, "snapshot"),
        "report": (str, "inequalities.csv"),
        "mesh_file": (str, "mesh.off"),
        "dump_grids": (_bool, False),
    },
    "validate": {
        "surfaces": (_surfaces, "torus:2,1; ellipsoid:1.5,1,0.8"),
        "resolutions": (_int_list, "64,128,256"),
        "residuals": (_str_list, "codazzi,simons"),
        "order": (int, 0),
        "threshold": (float, 3.0),
        "floor": (float, 1e-8),
    },
    "inequalities": {
        "families": (_families, "MS-p1:4, GN1:4, GN2:5, GNe:3, GNe:4, GNe:5"),
        "thetas": (_float_list, "0.1:1.0:10"),
        "resolution": (int, 4096),
        "radius": (float, 1.0),
        "p": (float, 2.0),
        "eps": (float, math.nan),
        "include_full_sphere": (_bool, True),
        "poly": (_float_list, "1.0"),
        "stability_tol": (float, 0.05),
        "homogeneity_tol": (float, 1e-12),
    },
}

SECTIONS = {
    "flow": ("mesh", "flow", "output"),
    "validate": ("validate", "output"),
    "inequalities": ("inequalities", "output"),
    "make-mesh": ("mesh", "output"),
}


@dataclass
class RunConfig:
    command: str
    values: dict  # section -> key -> parsed value
    base_dir: Path
    out: Path
    quiet: bool

    def __getitem__(self, section):
        return self.values[section]


def load_config(command: str, path=None, overrides=(), out=None, quiet=False) -> RunConfig:
    """Parse and validate the configuration of one subcommand."""
    raw = {sec: {} for sec in SECTIONS[command]}
    base = Path.cwd()
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {path}")
        cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
        cp.optionxform = str
        try:
            cp.read_string(p.read_text(), source=str(p))
        except (configparser.Error, UnicodeDecodeError) as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        base = p.resolve().parent
        for sec in cp.sections():
            if sec not in raw:
                raise ConfigError(f"unknown section [{sec}] for '{command}' (allowed: {', '.join(raw)})")
            for k, v in cp.items(sec):
                raw[sec][k] = v
    for item in overrides:
        key, sep, v = item.partition("=")
        sec, dot, k = key.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        if sec not in raw:
            raise ConfigError(f"unknown section [{sec}] for '{command}'")
        raw[sec][k] = v
    values = {}
    for sec, given in raw.items():
        schema = SCHEMA[sec]
        unknown = sorted(set(given) - set(schema))
        if unknown:
            raise ConfigError(f"unknown key(s) in [{sec}]: {', '.join(unknown)}")
        vals = {}
        for k, (conv, default) in schema.items():
            text = given.get(k)
            if text is None:
                vals[k] = conv(default) if isinstance(default, str) and conv is not str else default
                continue
            try:
                vals[k] = conv(text.strip())
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"[{sec}] {k}: invalid value {text.strip()!r} ({exc})") from exc
        values[sec] = vals
    if "mesh" in values and values["mesh"]["generator"] == "file":
        mp = Path(values["mesh"]["path"])
        if not mp.is_absolute():
            mp = base / mp
        if not mp.is_file():
            raise ConfigError(f"[mesh] path: file not found: {mp}")
        values["mesh"]["path"] = str(mp)
    return RunConfig(command, values, base, Path(out or "curvflow-out"), quiet)


# ---------------------------------------------------------------------------
# commands


def _say(cfg: RunConfig, *args):
    if not cfg.quiet:
        print(*args)


def _build_mesh(m: dict):
    import numpy as np

    from .mesh import load_mesh, make_icosphere, make_torus

    gen = m["generator"]
    if gen == "icosphere":
        if not m["radius"] > 0:
            raise ConfigError(f"[mesh] radius: must be positive, got {m['radius']}")
        if not 0 <= m["subdivisions"] <= 8:
            raise ConfigError(f"[mesh] subdivisions: must lie in [0, 8], got {m['subdivisions']}")
        mesh = make_icosphere(m["radius"], m["subdivisions"])
    elif gen == "torus":
        R, a = m["major_radius"], m["minor_radius"]
        if not (R > 0 and a > 0):
            raise ConfigError("[mesh] major_radius/minor_radius: must be positive")
        if not R > a:
            raise ConfigError("[mesh] major_radius: must exceed minor_radius")
        if m["res_major"] < 3 or m["res_minor"] < 3:
            raise ConfigError("[mesh] res_major/res_minor: must be >= 3")
        mesh = make_torus(R, a, m["res_major"], m["res_minor"])
    elif gen == "file":
        mesh = load_mesh(m["path"])
    else:
        raise ConfigError(f"[mesh] generator: expected icosphere, torus or file, got {gen!r}")
    if m["perturb"] != 0.0:
        from .diffgeo import vertex_normals

        rng = np.random.default_rng(m["seed"])
        h = mesh.edge_lengths().min()
        d = m["perturb"] * h * rng.standard_normal(mesh.n_vertices)
        mesh = mesh.with_vertices(mesh.vertices + d[:, None] * vertex_normals(mesh))
    return mesh


def cmd_flow(cfg: RunConfig) -> int:
    from .flow import FlowConfig, run

    f = cfg["flow"]
    try:
        fc = FlowConfig(**f)
    except ValueError as exc:
        raise ConfigError(f"[flow] {exc}") from exc
    mesh = _build_mesh(cfg["mesh"])
    o = cfg["output"]
    cfg.out.mkdir(parents=True, exist_ok=True)
    csv_path = cfg.out / o["csv"]
    with open(csv_path, "w", newline="") as sink:
        snap = cfg.out / "snapshots" if o["snapshots"] else None
        state, records = run(mesh, fc, sink=sink, snapshot_dir=snap, stem=o["snapshot_stem"])
    w = records[-1].willmore_energy if records else float("nan")
    print(f"status={state.status} t={state.t:.17g} W={w:.17g}")
    if state.message:
        _say(cfg, state.message)
    if state.status == "numerical_failure":
        return EXIT_NUMERICAL
    if state.status == "concentration_exceeded":
        return EXIT_CONCENTRATION
    return EXIT_OK


def cmd_validate(cfg: RunConfig) -> int:
    from . import parametric as par

    v = cfg["validate"]
    fns = {"codazzi": par.codazzi_residual, "simons": par.simons_residual}
    for name in v["residuals"]:
        if name not in fns:
            raise ConfigError(f"[validate] residuals: unknown residual {name!r}")
    res = sorted(v["resolutions"])
    if len(res) < 2 or len(set(res)) != len(res):
        raise ConfigError("[validate] resolutions: need at least two distinct grids")
    makers = {"sphere": par.sphere, "torus": par.torus, "ellipsoid": par.ellipsoid}
    surfaces = []
    for name, params in v["surfaces"]:
        if name not in makers:
            raise ConfigError(f"[validate] surfaces: unknown surface {name!r}")
        try:
            kw = {"order": v["order"]} if v["order"] else {}
            surfaces.append((f"{name}({','.join(f'{x:g}' for x in params)})", makers[name](*params, **kw)))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[validate] surfaces: {name}: {exc}") from exc

    ok = True
    lines = [f"{'surface':<22} {'residual':<8} {'grid':>5} {'value':>12} {'order':>7}  verdict"]
    grids = {}
    for label, surf in surfaces:
        for rname in v["residuals"]:
            try:
                vals = [fns[rname](surf.with_resolution(n)) for n in res]
            except par.GridTooCoarse as exc:
                raise ConfigError(f"[validate] {label}: {exc}") from exc
            if cfg["output"]["dump_grids"]:
                grids[(label, rname)] = fns[rname](surf.with_resolution(res[-1]), return_grid=True)[1]
            prev = None
            for n, val in zip(res, vals):
                order = math.nan if prev is None else math.log2(prev / val) if val > 0 and prev > 0 else math.inf
                verdict = ""
                if prev is not None:
                    if max(prev, val) < v["floor"]:
                        verdict = f"ok (below floor {v['floor']:g})"
                    elif order >= v["threshold"]:
                        verdict = "ok"
                    else:
                        verdict = f"FAIL: order {order:.2f} < {v['threshold']:g}"
                        ok = False
                lines.append(f"{label:<22} {rname:<8} {n:>5} {val:>12.4e} {order:>7.2f}  {verdict}")
                prev = val
    print("\n".join(lines))
    if grids:
        cfg.out.mkdir(parents=True, exist_ok=True)
        for (label, rname), gl in grids.items():
            safe = label.replace("(", "_").replace(")", "").replace(",", "_")
            par.dump_residual_csv(cfg.out / f"{safe}_{rname}.csv", gl)
    return EXIT_OK if ok else EXIT_CRITERIA


def cmd_inequalities(cfg: RunConfig) -> int:
    from . import inequalities as iq

    q = cfg["inequalities"]
    if q["resolution"] < iq.MIN_RESOLUTION or q["resolution"] % 2:
        raise ConfigError(f"[inequalities] resolution: must be even and >= {iq.MIN_RESOLUTION}")
    if not q["thetas"] or not all(0 < t < math.pi for t in q["thetas"]):
        raise ConfigError("[inequalities] thetas: cap angles must lie in (0, pi)")
    for iid, n in q["families"]:
        if iid not in iq.INEQUALITY_IDS:
            raise ConfigError(f"[inequalities] families: unknown inequality {iid!r}")
        if n < 2 or (iid == "GN1" and n != 4) or (iid == "GN2" and n != 5) or (iid == "GNe" and n not in (3, 4, 5)):
            raise ConfigError(f"[inequalities] families: {iid} is not defined for n={n}")
        if iid == "MS-p" and not 1 < q["p"] < n:
            raise ConfigError(f"[inequalities] p: need 1 < p < n for MS-p with n={n}")
    eps = None if math.isnan(q["eps"]) else q["eps"]
    reports, ok, notes = [], True, []
    for iid, n in q["families"]:
        rep = iq.run_family(iid, n, q["thetas"], r=q["radius"], p=q["p"], poly=tuple(q["poly"]),
                            resolution=q["resolution"], eps=eps,
                            include_full_sphere=q["include_full_sphere"])
        reports.append(rep)
        if not rep.refinement_delta < q["stability_tol"]:
            ok = False
            notes.append(f"{iid} n={n}: refinement delta {rep.refinement_delta:.3e} >= {q['stability_tol']:g}")
        # homogeneity u -> 2u on every family member
        rep2 = iq.run_family(iid, n, q["thetas"], r=q["radius"], p=q["p"], poly=tuple(q["poly"]),
                             amplitude=2.0, resolution=q["resolution"], eps=eps, refine=False)
        for a, b in zip(rep.rows, rep2.rows):
            if a.hypothesis_ok and abs(b.ratio / a.ratio - 1) > q["homogeneity_tol"]:
                ok = False
                notes.append(f"{iid} n={n} theta0={a.family_param:g}: ratio not amplitude invariant")
    cfg.out.mkdir(parents=True, exist_ok=True)
    iq.write_report_csv(reports, cfg.out / cfg["output"]["report"])
    _say(cfg, iq.format_report(reports))
    for rep in reports:
        print(f"{rep.inequality_id} n={rep.n} sup_ratio={rep.sup_ratio:.17g}")
    for line in notes:
        print("FAIL:", line)
    return EXIT_OK if ok else EXIT_CRITERIA


def cmd_make_mesh(cfg: RunConfig) -> int:
    from .mesh import save_mesh, validate

    mesh = _build_mesh(cfg["mesh"])
    cfg.out.mkdir(parents=True, exist_ok=True)
    path = cfg.out / cfg["output"]["mesh_file"]
    save_mesh(mesh, path)
    rep = validate(mesh)
    _say(cfg, f"wrote {path}: V={mesh.n_vertices} F={mesh.n_faces} genus={rep.genus}")
    return EXIT_OK


COMMANDS = {
    "flow": cmd_flow,
    "validate": cmd_validate,
    "inequalities": cmd_inequalities,
    "make-mesh": cmd_make_mesh,
}


def _apply_threads():
    raw = os.environ.get("CURVFLOW_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"CURVFLOW_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise ConfigError("CURVFLOW_THREADS must be >= 0")
    if n > 0:
        for var in _THREAD_VARS:
            os.environ[var] = str(n)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="curvflow", description="Biharmonic/Willmore flow simulator "
                                 "and verification harness.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file with [section] headers")
    common.add_argument("--out", help="output directory (default: ./curvflow-out)")
    common.add_argument("--quiet", action="store_true", help="only print the final status lines")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override a config value (repeatable; wins over the file)")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("flow", parents=[common], help="run a biharmonic or Willmore flow")
    sub.add_parser("validate", parents=[common], help="Codazzi/Simons residual convergence study")
    sub.add_parser("inequalities", parents=[common], help="Sobolev / Gagliardo-Nirenberg family sweeps")
    sub.add_parser("make-mesh", parents=[common], help="write a generator mesh to OFF/OBJ")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _apply_threads()
        cfg = load_config(args.command, args.config, args.set, args.out, args.quiet)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        # mesh parse/validation errors and similar input problems
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
