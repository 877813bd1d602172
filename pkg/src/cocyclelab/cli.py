"""Command-line interface: deterministic artifact output for each pipeline.

Configuration comes from flags plus an optional JSON config file
(``--config``); explicit flags override file values.  CSV artifacts carry
header rows and floats printed with 17 significant digits so they round-trip
exactly.  Parallel sweeps map over independent grid cells with no cross-cell
communication; the worker count comes from the environment variable
``COCYCLELAB_THREADS`` (default: logical core count), and results are merged
in grid order so the output is identical for any worker count.

Exit codes: 0 ok, 2 usage or malformed config, 3 numerical refusal
(a precondition gate declined to compute), 4 certification failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction

import numpy as np

from . import __version__
from .base_dynamics import GOLDEN_MEAN, Rotation, ScalarField
from .cocycles import (
    ConstantCocycle,
    ProductCocycle,
    RotationFieldCocycle,
    SchrodingerCocycle,
    cocycle_from_config,
    lyapunov_exponent,
    uh_test,
)
from .gap_opening import (
    ProjectionRefusal,
    make_localized_perturbation,
    open_gap_demo,
    open_gap_demo_periodic,
    project_to_schrodinger,
    rho_constancy_audit,
    write_gap_track_csv,
)
from .rotation import classify_locking, rho
from .sections import (
    CertificateError,
    NumericalRefusal,
    conjugate_to_rotations,
    solve_cohomological,
)
from .spectrum import (
    butterfly_sweep,
    chambers_reconstruct,
    detect_and_label_gaps,
    ids_by_eigencount,
    ids_by_rotation,
    periodic_spectrum_exact,
    spectrum_by_uh_scan,
    write_butterfly_csv,
    write_gaps_csv,
    write_manifest,
)
from .towers import CertificationError, build_rotation_tower

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_REFUSAL = 3
EXIT_CERT = 4

THREADS_ENV = "COCYCLELAB_THREADS"


# ---------------------------------------------------------------------------
# Argument parsing helpers
# ---------------------------------------------------------------------------

class UsageError(ValueError):
    """Malformed flag value or config entry."""


def _fmt(x):
    if isinstance(x, float):
        return format(x, ".17g")
    return x


def _parse_alpha(text):
    """'golden', 'p/q', or a decimal; returns (value, fraction-or-None)."""
    text = str(text).strip()
    if text == "golden":
        return GOLDEN_MEAN, None
    if "/" in text:
        frac = Fraction(text)
        if not 0 < frac < 1:
            raise UsageError(f"alpha must lie in (0, 1), got {text}")
        return float(frac), frac
    try:
        val = float(text)
    except ValueError:
        raise UsageError(f"cannot parse alpha {text!r}") from None
    if not 0.0 < val < 1.0:
        raise UsageError(f"alpha must lie in (0, 1), got {text}")
    return val, None


def _parse_system(text):
    """rotation:golden | rotation:0.37 | rotation:p/q (periodic)."""
    text = str(text).strip()
    if ":" not in text:
        raise UsageError(
            f"system spec {text!r} must look like rotation:golden or rotation:2/5"
        )
    kind, _, value = text.partition(":")
    if kind != "rotation":
        raise UsageError(f"unknown system kind {kind!r} (only 'rotation')")
    alpha, frac = _parse_alpha(value)
    if frac is not None:
        return Rotation(alpha, periodic=True)
    return Rotation(alpha)


def _parse_field(text):
    """zero | const:c | amo:lam | square:c | trig:mean=..;cos=a,b;sin=c | {...json}."""
    text = str(text).strip()
    if text.startswith("{"):
        return ScalarField(json.loads(text))
    kind, _, value = text.partition(":")
    if kind == "zero":
        return ScalarField({"type": "zero"})
    if kind == "const" or kind == "constant":
        return ScalarField({"type": "constant", "c": float(value)})
    if kind == "amo":
        return ScalarField({"type": "amo", "coupling": float(value)})
    if kind == "square":
        return ScalarField({"type": "square", "c": float(value)})
    if kind == "trig":
        cfg = {"type": "trig", "mean": 0.0, "cos": [], "sin": []}
        for part in value.split(";"):
            if not part:
                continue
            key, _, nums = part.partition("=")
            if key == "mean":
                cfg["mean"] = float(nums)
            elif key in ("cos", "sin"):
                cfg[key] = [float(t) for t in nums.split(",") if t]
            else:
                raise UsageError(f"unknown trig component {key!r}")
        return ScalarField(cfg)
    raise UsageError(f"unknown potential spec {text!r}")


def _json_print(obj):
    print(json.dumps(obj, sort_keys=True, default=_json_default))


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _thread_count():
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    return max(1, n)


def _parallel_map(fn, items):
    """Order-preserving map over independent cells; worker count from the
    environment.  Results are merged in input order, so the output does not
    depend on the worker count."""
    items = list(items)
    workers = min(_thread_count(), max(1, len(items)))
    if workers == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def _write_csv(path, fieldnames, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fieldnames)
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(v) for k, v in row.items()})


def _manifest(args, operation, params, outputs, started):
    """Run manifest next to the primary output: config hash, tool version,
    command, grid parameters, wall time, output list."""
    if not outputs:
        return
    blob = json.dumps(params, sort_keys=True, default=_json_default)
    doc = {
        "config_hash": hashlib.sha256(blob.encode()).hexdigest(),
        "version": __version__,
        "command": " ".join(sys.argv) if sys.argv else operation,
        "threads": _thread_count(),
        "wall_time_s": round(time.time() - started, 3),
        "grids": params,
    }
    write_manifest(outputs[0] + ".manifest.json", operation, doc, outputs)


def _merge_config(args, parser_defaults):
    """Flags override JSON config file values, which override defaults."""
    cfg_path = getattr(args, "config", None)
    if not cfg_path:
        return args
    with open(cfg_path) as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise UsageError(f"malformed config file {cfg_path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise UsageError(f"config file {cfg_path} must hold a JSON object")
    for key, value in cfg.items():
        dest = key.replace("-", "_")
        if not hasattr(args, dest):
            raise UsageError(f"config key {key!r} is not a flag of this command")
        if getattr(args, dest) is None:
            setattr(args, dest, value)
    return args


def _resolve(args, **defaults):
    """Fill remaining None values with the command's defaults."""
    for key, value in defaults.items():
        if getattr(args, key, None) is None:
            setattr(args, key, value)
    return args


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _cmd_ids(args):
    started = time.time()
    _resolve(args, system="rotation:golden", v="zero", e_lo=-3.0, e_hi=3.0,
             e_steps=101, method="both", L=2000, n=100_000, x0=0.0,
             out="ids.csv")
    base = _parse_system(args.system)
    v = _parse_field(args.v)
    energies = np.linspace(float(args.e_lo), float(args.e_hi), int(args.e_steps))

    routes = []
    if args.method in ("eigencount", "both"):
        routes.append(("eigencount",
                       lambda: ids_by_eigencount(base, v, energies, x0=float(args.x0),
                                                 length=int(args.L))))
    if args.method in ("rotation", "both"):
        routes.append(("rotation",
                       lambda: ids_by_rotation(base, v, energies, x0=float(args.x0),
                                               n=int(args.n))))
    if not routes:
        raise UsageError(f"unknown ids method {args.method!r}")
    results = dict(zip([name for name, _ in routes],
                       _parallel_map(lambda pair: pair[1](), routes)))

    fields = ["E"]
    for name in results:
        fields += [f"N_{name}", f"err_{name}"]
    rows = []
    for i, e in enumerate(energies):
        row = {"E": float(e)}
        for name, (vals, errs) in results.items():
            row[f"N_{name}"] = float(vals[i])
            row[f"err_{name}"] = float(errs[i])
        rows.append(row)
    _write_csv(args.out, fields, rows)

    summary = {"out": args.out, "energies": len(energies)}
    if len(results) == 2:
        gap = float(np.max(np.abs(results["eigencount"][0] - results["rotation"][0])))
        summary["route_disagreement_sup"] = gap
    _json_print(summary)
    _manifest(args, "ids", {
        "system": args.system, "v": args.v, "e_lo": float(args.e_lo),
        "e_hi": float(args.e_hi), "e_steps": int(args.e_steps),
        "method": args.method, "L": int(args.L), "n": int(args.n),
        "x0": float(args.x0),
    }, [args.out], started)
    return EXIT_OK


def _cmd_spectrum(args):
    started = time.time()
    _resolve(args, method="floquet", alpha="1/2", v=None, lam=None,
             e_lo=-3.0, e_hi=3.0, coarse=65, out="spectrum.csv")
    alpha, frac = _parse_alpha(args.alpha)
    if args.lam is not None:
        v = ScalarField({"type": "amo", "coupling": float(args.lam)})
    elif args.v is not None:
        v = _parse_field(args.v)
    else:
        v = ScalarField({"type": "zero"})

    if args.method == "floquet":
        if frac is None:
            raise UsageError("floquet needs a rational --alpha like 1/2")
        spec = periodic_spectrum_exact(frac.numerator, frac.denominator, v)
        rows = [{"band": i + 1, "E_lo": lo, "E_hi": hi}
                for i, (lo, hi) in enumerate(spec.bands)]
        _write_csv(args.out, ["band", "E_lo", "E_hi"], rows)
        _json_print({"out": args.out, "bands": len(rows),
                     "edge_tol": spec.edge_tol})
    elif args.method == "uh":
        base = Rotation(alpha, periodic=frac is not None)

        def make(E):
            return SchrodingerCocycle(base, v, E)

        scan = spectrum_by_uh_scan(make, float(args.e_lo), float(args.e_hi),
                                   coarse=int(args.coarse))
        segs = scan.segments()
        rows = [{"band": i + 1, "E_lo": lo, "E_hi": hi}
                for i, (lo, hi) in enumerate(segs)]
        _write_csv(args.out, ["band", "E_lo", "E_hi"], rows)
        _json_print({"out": args.out, "bands": len(rows),
                     "refined_edges": [[a, b] for a, b in scan.edges],
                     "edge_tol": scan.edge_tol})
    else:
        raise UsageError(f"unknown spectrum method {args.method!r}")
    _manifest(args, "spectrum", {
        "method": args.method, "alpha": args.alpha,
        "v": args.v, "lambda": args.lam,
        "e_lo": float(args.e_lo), "e_hi": float(args.e_hi),
    }, [args.out], started)
    return EXIT_OK


def _cmd_gaps(args):
    started = time.time()
    _resolve(args, ids="ids.csv", alpha="golden", out="gaps.csv")
    alpha, _ = _parse_alpha(args.alpha)
    with open(args.ids, newline="") as fh:
        reader = csv.DictReader(fh)
        table = list(reader)
    if not table:
        raise UsageError(f"{args.ids} holds no rows")
    cols = table[0].keys()
    n_col = next((c for c in ("N_rotation", "N_eigencount", "N") if c in cols), None)
    if n_col is None:
        raise UsageError(f"{args.ids} has no N column (fields: {sorted(cols)})")
    err_col = n_col.replace("N", "err", 1) if n_col != "N" else "err"
    energies = np.array([float(r["E"]) for r in table])
    values = np.array([float(r[n_col]) for r in table])
    errs = (np.array([float(r[err_col]) for r in table])
            if err_col in cols else np.zeros_like(values))
    # IDS and fibered rotation number determine each other: N = 1 - 2 rho.
    rho_vals = (1.0 - values) / 2.0
    rho_errs = errs / 2.0
    gaps = detect_and_label_gaps(alpha, energies, rho_vals, rho_errs)
    write_gaps_csv(args.out, gaps)
    _json_print({"out": args.out, "gaps": len(gaps), "column": n_col})
    _manifest(args, "gaps", {"ids": args.ids, "alpha": args.alpha},
              [args.out], started)
    return EXIT_OK


def _cmd_butterfly(args):
    started = time.time()
    _resolve(args, lam=1.0, alpha_den_max=None, alpha_list=None,
             e_steps=481, out="butterfly.csv")
    lam = float(args.lam)
    if args.alpha_list:
        fractions = []
        for part in str(args.alpha_list).split(","):
            frac = Fraction(part.strip())
            if not 0 <= frac <= 1:
                raise UsageError(f"alpha {part} outside [0, 1]")
            fractions.append((frac.numerator, frac.denominator))
        fractions = sorted(set(fractions), key=lambda t: t[0] / t[1])
        width = 2.0 + 2.0 * max(lam, 1.0)
        energies = np.linspace(-width, width, int(args.e_steps))

        def cell(pq):
            p, q = pq
            P, _, _ = chambers_reconstruct(lam, p, q, energies)
            bound = 2.0 + 2.0 * lam ** q
            flags = np.abs(P) <= bound
            return [
                {"alpha_num": p, "alpha_den": q, "alpha": p / q,
                 "E": float(E), "inout": int(f)}
                for E, f in zip(energies, flags)
            ]

        rows = [row for chunk in _parallel_map(cell, fractions) for row in chunk]
    else:
        qmax = int(args.alpha_den_max) if args.alpha_den_max else 10
        rows = butterfly_sweep(lam=lam, qmax=qmax)
    write_butterfly_csv(args.out, rows)
    _json_print({"out": args.out, "rows": len(rows)})
    _manifest(args, "butterfly", {
        "lambda": lam, "alpha_den_max": args.alpha_den_max,
        "alpha_list": args.alpha_list, "e_steps": int(args.e_steps),
    }, [args.out], started)
    return EXIT_OK


def _point_cocycle(args):
    base = _parse_system(args.system)
    v = _parse_field(args.v)
    return SchrodingerCocycle(base, v, float(args.E))


def _cmd_lyapunov(args):
    _resolve(args, system="rotation:golden", v="zero", E=0.0, n=1 << 20, x0=0.0)
    est = lyapunov_exponent(_point_cocycle(args), x0=float(args.x0), n=int(args.n))
    _json_print({"lyapunov": est.value, "stderr": est.stderr, "n": est.n})
    return EXIT_OK


def _cmd_rho(args):
    _resolve(args, system="rotation:golden", v="zero", E=0.0, n=100_000, x0=0.0)
    est = rho(_point_cocycle(args), x0=float(args.x0), n=int(args.n))
    _json_print({"rho": est.value, "err": est.err, "n": est.n})
    return EXIT_OK


def _cmd_uh(args):
    _resolve(args, system="rotation:golden", v="zero", E=0.0,
             horizon=1 << 10, grid=512)
    res = uh_test(_point_cocycle(args), horizon=int(args.horizon),
                  grid=int(args.grid))
    out = {"outcome": type(res).__name__}
    out.update({k: v for k, v in res.to_row().items()
                if isinstance(v, (int, float, str, bool))})
    _json_print(out)
    return EXIT_OK


def _cmd_classify_lock(args):
    _resolve(args, system="rotation:golden", v="zero", E=0.0, n=200_000)
    verdict = classify_locking(_point_cocycle(args), n=int(args.n))
    _json_print(verdict.to_row())
    return EXIT_OK


def _cmd_tower(args):
    started = time.time()
    _resolve(args, alpha="golden", n=13, out="tower.json")
    alpha, frac = _parse_alpha(args.alpha)
    if frac is not None:
        raise UsageError("towers need an irrational rotation number")
    tower = build_rotation_tower(Rotation(alpha), int(args.n))
    doc = tower.to_config()
    doc["certified"] = tower.certified
    rep = tower.report
    if dataclasses.is_dataclass(rep):
        rep = dataclasses.asdict(rep)
    doc["report"] = rep
    with open(args.out, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    _json_print({"out": args.out, "n": tower.n, "N": tower.N, "d": tower.d,
                 "certified": tower.certified})
    _manifest(args, "tower", {"alpha": args.alpha, "n": int(args.n)},
              [args.out], started)
    return EXIT_OK


def _cmd_cobound(args):
    started = time.time()
    _resolve(args, phi="trig:cos=1.0", alpha="golden", eps=1e-3,
             n_target=None, mesh=10_000, out="section.csv")
    alpha, frac = _parse_alpha(args.alpha)
    if frac is not None:
        raise UsageError("the tower solver needs an irrational rotation number")
    system = Rotation(alpha)
    phi = _parse_field(args.phi)
    sol = solve_cohomological(
        phi, system, eps=float(args.eps),
        n_target=int(args.n_target) if args.n_target else None,
        mesh_size=int(args.mesh),
    )
    xs = np.linspace(0.0, 1.0, int(args.mesh), endpoint=False)
    psi = sol.psi_hat(xs)
    resid = sol.coboundary_residual(xs)
    _write_csv(args.out, ["x", "psi", "residual"],
               [{"x": float(x), "psi": float(p), "residual": float(r)}
                for x, p, r in zip(xs, psi, resid)])
    _json_print({"out": args.out, **{k: v for k, v in sol.report.items()
                                     if isinstance(v, (int, float, str, bool))}})
    _manifest(args, "cobound", {
        "phi": args.phi, "alpha": args.alpha, "eps": float(args.eps),
        "n_target": args.n_target, "mesh": int(args.mesh),
    }, [args.out], started)
    return EXIT_OK


def _cmd_conj_rot(args):
    started = time.time()
    _resolve(args, cocycle=None, delta=1e-3, eps=1e-2, mesh=4096,
             out="conjugacy.csv")
    if args.cocycle:
        coc = cocycle_from_config(json.loads(args.cocycle))
    else:
        # Default example: a rotation-valued cocycle sheared by delta.
        base = Rotation(GOLDEN_MEAN)
        theta = ScalarField({"type": "trig", "mean": 0.7, "cos": [0.3]})
        shear = np.array([[1.0, float(args.delta)], [0.0, 1.0]])
        coc = ProductCocycle([
            ConstantCocycle(base, shear),
            RotationFieldCocycle(base, theta),
        ])
    result = conjugate_to_rotations(coc, float(args.eps), mesh_size=int(args.mesh))
    xs = np.linspace(0.0, 1.0, int(args.mesh), endpoint=False)
    bmats = result.b_field(xs)
    rows = [
        {"x": float(x), "b00": float(m[0, 0]), "b01": float(m[0, 1]),
         "b10": float(m[1, 0]), "b11": float(m[1, 1])}
        for x, m in zip(xs, bmats)
    ]
    _write_csv(args.out, ["x", "b00", "b01", "b10", "b11"], rows)
    _json_print({"out": args.out, "sup_distance": result.sup_distance,
                 "orthogonality_residual": result.orth_residual,
                 "gamma": result.gamma, "tower_n": result.tower.n})
    _manifest(args, "conj-rot", {
        "cocycle": args.cocycle, "delta": float(args.delta),
        "eps": float(args.eps), "mesh": int(args.mesh),
    }, [args.out], started)
    return EXIT_OK


def _cmd_open_gap(args):
    started = time.time()
    _resolve(args, alpha="golden", ts="0,0.1,0.2,0.3", grid_points=161,
             n=100_000, out="gap_report.csv")
    ts = tuple(float(t) for t in str(args.ts).split(","))
    alpha, frac = _parse_alpha(args.alpha)
    if frac is not None:
        if frac != Fraction(1, 2):
            raise UsageError("the exact periodic demo runs at alpha = 1/2")
        report = open_gap_demo_periodic(ts=ts)
    else:
        report = open_gap_demo(alpha=alpha, ts=ts,
                               grid_points=int(args.grid_points),
                               n=int(args.n))
    write_gap_track_csv(args.out, report)
    audit = rho_constancy_audit(report)
    _json_print({
        "out": args.out,
        "rows": len(report.rows),
        "found": [r.t for r in report.found_rows()],
        "rho_target": audit.rho_target,
        "rho_max_dev": audit.max_dev,
        "rho_ok": audit.ok,
        "refinement": report.refinement,
    })
    _manifest(args, "open-gap", {
        "alpha": args.alpha, "ts": args.ts,
        "grid_points": int(args.grid_points), "n": int(args.n),
    }, [args.out], started)
    return EXIT_OK


def _cmd_project(args):
    started = time.time()
    _resolve(args, scenario=None, alpha="golden", size=1e-4, direction="sym",
             mesh=4096)
    scenario = {}
    if args.scenario:
        with open(args.scenario) as fh:
            scenario = json.load(fh)
        if not isinstance(scenario, dict):
            raise UsageError("scenario file must hold a JSON object")
    alpha, frac = _parse_alpha(scenario.get("alpha", args.alpha))
    if frac is not None:
        raise UsageError("the projection needs an irrational rotation number")
    size = float(scenario.get("size", args.size))
    direction = scenario.get("direction", args.direction)
    if isinstance(direction, list):
        direction = np.asarray(direction, dtype=float)
    mesh = int(scenario.get("mesh", args.mesh))
    pert = make_localized_perturbation(alpha, size=size, direction=direction)
    proj = project_to_schrodinger(pert, mesh_size=mesh)
    _json_print(proj.report)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_common(sp):
    sp.add_argument("--config", help="JSON config file; flags override it")
    sp.add_argument("--out", help="output file path")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cocyclelab",
        description="Transfer-cocycle laboratory: spectra, rotation numbers, "
                    "towers, cohomological equations, and gap opening.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command")

    sp = sub.add_parser("ids", help="integrated density of states over an energy grid")
    sp.add_argument("--system")
    sp.add_argument("--v")
    sp.add_argument("--E-lo", dest="e_lo", type=float)
    sp.add_argument("--E-hi", dest="e_hi", type=float)
    sp.add_argument("--E-steps", dest="e_steps", type=int)
    sp.add_argument("--method", choices=["eigencount", "rotation", "both"])
    sp.add_argument("--L", type=int, help="eigencount box length")
    sp.add_argument("--n", type=int, help="rotation-number orbit length")
    sp.add_argument("--x0", type=float)
    _add_common(sp)
    sp.set_defaults(func=_cmd_ids)

    sp = sub.add_parser("spectrum", help="spectrum via UH scan or exact Floquet bands")
    sp.add_argument("--method", choices=["uh", "floquet"])
    sp.add_argument("--alpha")
    sp.add_argument("--lambda", dest="lam", type=float,
                    help="cosine-potential coupling")
    sp.add_argument("--v")
    sp.add_argument("--E-lo", dest="e_lo", type=float)
    sp.add_argument("--E-hi", dest="e_hi", type=float)
    sp.add_argument("--coarse", type=int)
    _add_common(sp)
    sp.set_defaults(func=_cmd_spectrum)

    sp = sub.add_parser("gaps", help="detect and label gaps from an ids.csv")
    sp.add_argument("--ids", help="input ids.csv")
    sp.add_argument("--alpha")
    _add_common(sp)
    sp.set_defaults(func=_cmd_gaps)

    sp = sub.add_parser("butterfly", help="union-over-phase spectra for rational sweeps")
    sp.add_argument("--lambda", dest="lam", type=float)
    sp.add_argument("--alpha-den-max", dest="alpha_den_max", type=int)
    sp.add_argument("--alpha-list", dest="alpha_list")
    sp.add_argument("--E-steps", dest="e_steps", type=int)
    _add_common(sp)
    sp.set_defaults(func=_cmd_butterfly)

    for name, fn, extras in (
        ("lyapunov", _cmd_lyapunov, {"n": "orbit length"}),
        ("rho", _cmd_rho, {"n": "orbit length"}),
        ("uh", _cmd_uh, {"horizon": "growth horizon", "grid": "base grid"}),
        ("classify-lock", _cmd_classify_lock, {"n": "orbit length"}),
    ):
        sp = sub.add_parser(name, help=f"point evaluation: {name} -> stdout JSON")
        sp.add_argument("--system")
        sp.add_argument("--v")
        sp.add_argument("--E", type=float)
        sp.add_argument("--x0", type=float)
        for flag, help_text in extras.items():
            sp.add_argument(f"--{flag}", type=int, help=help_text)
        sp.add_argument("--config", help="JSON config file; flags override it")
        sp.set_defaults(func=fn)

    sp = sub.add_parser("tower", help="build and certify a rotation tower -> tower.json")
    sp.add_argument("--alpha")
    sp.add_argument("--n", type=int, help="minimum floor count")
    _add_common(sp)
    sp.set_defaults(func=_cmd_tower)

    sp = sub.add_parser("cobound", help="solve the cohomological equation -> section.csv")
    sp.add_argument("--phi", help="potential spec for the right-hand side")
    sp.add_argument("--alpha")
    sp.add_argument("--eps", type=float)
    sp.add_argument("--n-target", dest="n_target", type=int)
    sp.add_argument("--mesh", type=int)
    _add_common(sp)
    sp.set_defaults(func=_cmd_cobound)

    sp = sub.add_parser("conj-rot", help="conjugate a near-rotation cocycle to rotations")
    sp.add_argument("--cocycle", help="cocycle config as JSON")
    sp.add_argument("--delta", type=float, help="shear size for the default example")
    sp.add_argument("--eps", type=float)
    sp.add_argument("--mesh", type=int)
    _add_common(sp)
    sp.set_defaults(func=_cmd_conj_rot)

    sp = sub.add_parser("open-gap", help="gap-opening family demo -> report CSV")
    sp.add_argument("--alpha")
    sp.add_argument("--ts", help="comma-separated family parameters")
    sp.add_argument("--grid-points", dest="grid_points", type=int)
    sp.add_argument("--n", type=int)
    _add_common(sp)
    sp.set_defaults(func=_cmd_open_gap)

    sp = sub.add_parser("project", help="absorb a localized perturbation -> report JSON")
    sp.add_argument("--scenario", help="JSON scenario file")
    sp.add_argument("--alpha")
    sp.add_argument("--size", type=float)
    sp.add_argument("--direction")
    sp.add_argument("--mesh", type=int)
    sp.add_argument("--config", help="JSON config file; flags override it")
    sp.set_defaults(func=_cmd_project)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "func", None):
        parser.print_help()
        return EXIT_USAGE
    try:
        _merge_config(args, parser)
        return int(args.func(args) or 0)
    except (CertificateError, CertificationError) as exc:
        print(json.dumps({"error": "certification failure", "detail": str(exc)}),
              file=sys.stderr)
        return EXIT_CERT
    except NumericalRefusal as exc:
        print(json.dumps({"error": "numerical refusal", "detail": str(exc)}),
              file=sys.stderr)
        return EXIT_REFUSAL
    except UsageError as exc:
        print(json.dumps({"error": "usage", "detail": str(exc)}), file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(json.dumps({"error": "usage", "detail": str(exc)}), file=sys.stderr)
        return EXIT_USAGE
    except RuntimeError as exc:
        print(json.dumps({"error": "numerical refusal", "detail": str(exc)}),
              file=sys.stderr)
        return EXIT_REFUSAL


if __name__ == "__main__":
    sys.exit(main())
