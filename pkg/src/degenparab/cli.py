"""Batch experiment runner.

A single JSON config drives every subcommand; every optional field has a
default, and `--set a.b=value` overrides individual entries for sweeps.
Each run validates the config fully before touching the filesystem, then
writes a JSON summary plus CSV artifacts (and PNG figures when requested)
into the output directory.

Exit codes: 0 success, 1 usage, 2 validation error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
from pathlib import Path

import numpy as np

from . import figures
from .carleman import (
    WeightError,
    caccioppoli,
    evaluate,
    make_weight,
    manufactured_solution,
    s_scan,
)
from .coefficients import (
    CoefficientError,
    CoefficientPair,
    PowerPrototype,
    audit,
    load_tabulated_csv,
)
from .control import (
    ControlSetupError,
    HUMProblem,
    hum_control,
    observability_constant,
    observability_sweep,
)
from .evolution import (
    ControlPattern,
    InadmissibleLambdaError,
    InstabilityError,
    TimeGrid,
    energy,
    solve_adjoint,
    solve_forward,
    trajectory_to_csv,
)
from .fem import (
    AssemblyError,
    MeshError,
    NotSPDError,
    assemble,
    build_mesh,
    default_grading,
)
from .hardy import EigenConvergenceError, best_constant_for, coercivity

class ConfigError(ValueError):
    pass


_VALIDATION_ERRORS = (
    ConfigError,
    CoefficientError,
    MeshError,
    WeightError,
    ControlSetupError,
)
_NUMERICAL_ERRORS = (
    AssemblyError,
    NotSPDError,
    EigenConvergenceError,
    InstabilityError,
    InadmissibleLambdaError,
    FloatingPointError,
)

DEFAULTS = {
    "coefficients": {
        "x0": 0.5,
        "k1": 0.5,
        "k2": 0.5,
        "a_csv": None,
        "b_csv": None,
        "lambda": -1.0,
        "lambda_fraction": None,
    },
    "mesh": {"n_cells": 256, "grading": None},
    "time": {"T": 1.0, "n_steps": 256, "scheme": "implicit-euler"},
    "carleman": {
        "c1": 1.0,
        "c2_margin": 0.1,
        "s_list": None,
        "n_s": 8,
        "omega": [0.6, 0.95],
        "omega_prime": [0.65, 0.9],
    },
    "control": {
        "omega": [0.3, 0.7],
        "epsilon": 1e-8,
        "cg_tol": 1e-10,
        "cg_max": 2000,
        "u0": "sin",
    },
    "observability": {
        "omega": [0.6, 0.9],
        "max_iters": 60,
        "sweep": False,
        "base_n": 64,
        "doublings": 3,
        "growth_threshold": 0.2,
    },
    "output": {"directory": "out", "formats": ["json", "csv", "png"]},
}

_SCHEMES = {"implicit-euler": 1.0, "crank-nicolson": 0.5}


class _F(float):
    """float with fixed 17-significant-digit text, for round-trip JSON/CSV."""

    def __repr__(self):
        return f"{float(self):.17g}"


def _fmt(obj):
    if isinstance(obj, bool):
        return obj
    if isinstance(obj, float):
        return _F(obj)
    if isinstance(obj, (np.floating,)):
        return _F(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return [_fmt(v) for v in obj.tolist()]
    if isinstance(obj, dict):
        return {k: _fmt(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_fmt(v) for v in obj]
    return obj


def write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(_fmt(payload), indent=2) + "\n")


def _merge(base: dict, override: dict, where="config") -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if key not in out:
            raise ConfigError(f"unknown {where} key {key!r}")
        if isinstance(out[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"{where}.{key} must be an object")
            out[key] = _merge(out[key], val, f"{where}.{key}")
        else:
            out[key] = val
    return out


def _apply_set(cfg: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(f"--set needs key.path=value, got {assignment!r}")
    key, _, raw = assignment.partition("=")
    parts = key.strip().split(".")
    node = cfg
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            raise ConfigError(f"unknown config section {p!r} in --set {key}")
        node = node[p]
    leaf = parts[-1]
    if leaf not in node:
        raise ConfigError(f"unknown config key {key!r}")
    try:
        node[leaf] = json.loads(raw)
    except json.JSONDecodeError:
        node[leaf] = raw


def load_config(path: str | None, sets: list[str]) -> dict:
    if path is None:
        user = {}
    else:
        try:
            user = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config root must be a JSON object")
    cfg = _merge(DEFAULTS, user)
    for assignment in sets:
        _apply_set(cfg, assignment)
    _validate(cfg)
    return cfg


def _validate(cfg: dict) -> None:
    co = cfg["coefficients"]
    if not (0.0 < co["x0"] < 1.0):
        raise ConfigError("coefficients.x0 must lie in (0, 1)")
    if co["lambda_fraction"] is not None and co["lambda_fraction"] >= 1.0:
        raise ConfigError("coefficients.lambda_fraction must be < 1")
    if cfg["mesh"]["n_cells"] < 16 or cfg["mesh"]["n_cells"] % 2:
        raise ConfigError("mesh.n_cells must be even and >= 16")
    if cfg["time"]["scheme"] not in _SCHEMES:
        raise ConfigError(f"time.scheme must be one of {sorted(_SCHEMES)}")
    if cfg["time"]["T"] <= 0 or cfg["time"]["n_steps"] < 8:
        raise ConfigError("time.T must be positive and n_steps >= 8")
    for section, key in (("carleman", "omega"), ("carleman", "omega_prime"),
                         ("control", "omega"), ("observability", "omega")):
        pair = cfg[section][key]
        if (not isinstance(pair, (list, tuple)) or len(pair) != 2
                or not all(isinstance(v, (int, float)) for v in pair)
                or not 0.0 <= pair[0] < pair[1] <= 1.0):
            raise ConfigError(f"{section}.{key} must be [alpha, beta] in [0, 1]")
    if cfg["control"]["u0"] not in ("sin", "hat"):
        raise ConfigError("control.u0 must be 'sin' or 'hat'")
    unknown = set(cfg["output"]["formats"]) - {"json", "csv", "png", "bin"}
    if unknown:
        raise ConfigError(f"unknown output formats {sorted(unknown)}")


def _build_pair(cfg: dict, lam: float | None = None) -> CoefficientPair:
    co = cfg["coefficients"]
    a = (load_tabulated_csv(co["a_csv"]) if co["a_csv"]
         else PowerPrototype(float(co["k1"])))
    b = (load_tabulated_csv(co["b_csv"]) if co["b_csv"]
         else PowerPrototype(float(co["k2"])))
    return CoefficientPair(
        x0=float(co["x0"]), a=a, b=b,
        lam=float(co["lambda"] if lam is None else lam),
        T=float(cfg["time"]["T"]),
    )


def _build_problem(cfg: dict):
    """pair, mesh, operator -- resolving lambda_fraction through C*_h."""
    pair = _build_pair(cfg)
    me = cfg["mesh"]
    grading = me["grading"]
    if grading is None:
        k1 = pair.k1 if pair.k1 is not None else 1.0
        grading = default_grading(k1, pair.k2_estimate())
    mesh = build_mesh(int(me["n_cells"]), pair.x0, grading=float(grading))
    frac = cfg["coefficients"]["lambda_fraction"]
    if frac is not None:
        op0 = assemble(pair, mesh)
        cstar = best_constant_for(pair, op0).cstar_h
        pair = _build_pair(cfg, lam=float(frac) / cstar)
    op = assemble(pair, mesh)
    return pair, mesh, op


def _outdir(cfg: dict) -> Path:
    out = Path(cfg["output"]["directory"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _u0_vector(name: str, op) -> np.ndarray:
    if name == "sin":
        return np.sin(np.pi * op.dof_x)
    x = op.dof_x
    return np.maximum(1.0 - 4.0 * np.abs(x - 0.5), 0.0)


def _cmd_audit(cfg: dict) -> int:
    pair = _build_pair(cfg)
    report = audit(pair)
    out = _outdir(cfg)
    write_json(out / "audit.json", {
        "class": report.degeneracy.name,
        "min_k1": report.min_k1,
        "min_k2": report.min_k2,
        "sum_ok": report.sum_ok,
        "theta": report.theta,
        "sigma": report.sigma,
        "b_monotone_ok": report.b_monotone_ok,
        "lambda_admissible": report.lambda_admissible,
        "violations": list(report.violations),
    })
    return 0


def _cmd_hardy(cfg: dict) -> int:
    pair, mesh, op = _build_problem(cfg)
    hr = best_constant_for(pair, op)
    cr = coercivity(op, hr.cstar_h)
    out = _outdir(cfg)
    formats = cfg["output"]["formats"]
    if "json" in formats:
        write_json(out / "hardy.json", {
            "cstar_h": hr.cstar_h,
            "mu_min": hr.mu_min,
            "analytic_bound": hr.analytic_bound,
            "mesh_n": hr.mesh_n,
            "iterations": hr.iterations,
            "lambda": cr.lam,
            "Lambda_h": cr.Lambda_h,
            "min_eig_shifted": cr.min_eig_shifted,
            "admissible": cr.admissible,
        })
    if "csv" in formats:
        hr.eigvec_to_csv(out / "hardy_eigvec.csv")
    if "png" in formats:
        figures.hardy_figure(op, hr, out / "hardy_eigvec.png")
    return 0


def _cmd_solve(cfg: dict) -> int:
    pair, mesh, op = _build_problem(cfg)
    tg = TimeGrid(T=pair.T, n_steps=int(cfg["time"]["n_steps"]))
    theta = _SCHEMES[cfg["time"]["scheme"]]
    u0 = _u0_vector(cfg["control"]["u0"], op)
    fwd = solve_forward(op, tg, u0, theta=theta)
    adj = solve_adjoint(op, tg, u0, theta=theta)
    e_fwd = energy(op, fwd)
    e_adj = energy(op, adj)
    out = _outdir(cfg)
    formats = cfg["output"]["formats"]
    if "json" in formats:
        write_json(out / "solve.json", {
            "scheme": cfg["time"]["scheme"],
            "terminal_norm_forward": op.m_norm(fwd.values[-1]),
            "initial_norm_adjoint": op.m_norm(adj.values[0]),
            "energy_forward_final": float(e_fwd[-1]),
            "energy_adjoint_initial": float(e_adj[0]),
        })
    if "csv" in formats:
        trajectory_to_csv(out / "forward.csv", op, tg, fwd)
        trajectory_to_csv(out / "adjoint.csv", op, tg, adj)
        rows = ["t,energy_forward,energy_adjoint"]
        rows += [f"{t:.17g},{a:.17g},{b:.17g}"
                 for t, a, b in zip(tg.times, e_fwd, e_adj)]
        (out / "energy.csv").write_text("\n".join(rows) + "\n")
    if "bin" in formats:
        from .evolution import trajectory_to_binary
        trajectory_to_binary(out / "forward.bin", fwd)
        trajectory_to_binary(out / "adjoint.bin", adj)
    if "png" in formats:
        figures.energy_figure(tg.times, e_fwd, out / "energy_forward.png")
    return 0


def _cmd_carleman(cfg: dict) -> int:
    pair, mesh, op = _build_problem(cfg)
    tg = TimeGrid(T=pair.T, n_steps=int(cfg["time"]["n_steps"]))
    ca = cfg["carleman"]
    w = make_weight(pair, mesh, c1=float(ca["c1"]), c2_margin=float(ca["c2_margin"]))
    s0 = w.default_s0()
    s_list = ca["s_list"]
    if s_list is None:
        s_list = list(np.linspace(s0, 8.0 * s0, int(ca["n_s"])))
    v_fn = lambda t, x: t * (pair.T - t) * x * (1.0 - x) * np.abs(x - pair.x0)
    traj, h = manufactured_solution(op, tg, v_fn)
    reports = s_scan(op, w, traj, h, s_list, pair, tg)
    omega = ControlPattern(*ca["omega"], x0=pair.x0)
    omega_p = ControlPattern(*ca["omega_prime"], x0=pair.x0)
    cacc = [caccioppoli(op, w.with_s(r.s), traj, omega, omega_p, tg) for r in reports]
    out = _outdir(cfg)
    formats = cfg["output"]["formats"]
    if "json" in formats:
        ratios = [r.ratio for r in reports]
        write_json(out / "carleman.json", {
            "s0": s0, "c1": w.c1, "c2": w.c2,
            "max_ratio": max(ratios), "min_ratio": min(ratios),
            "caccioppoli_max": max((n / d if d > 0 else float("inf"))
                                   for n, d in cacc),
        })
    if "csv" in formats:
        rows = ["s,lhs,rhs_source,rhs_boundary,ratio,cacc_num,cacc_den"]
        for r, (n_, d_) in zip(reports, cacc):
            rows.append(r.csv_row() + f",{n_:.17g},{d_:.17g}")
        (out / "carleman_scan.csv").write_text("\n".join(rows) + "\n")
    if "png" in formats:
        figures.carleman_figure(reports, out / "carleman_scan.png")
    return 0


def _cmd_observability(cfg: dict) -> int:
    ob = cfg["observability"]
    out = _outdir(cfg)
    formats = cfg["output"]["formats"]
    if ob["sweep"]:
        pair = _build_pair(cfg)
        omega = ControlPattern(*ob["omega"], x0=pair.x0)
        rep = observability_sweep(
            pair, omega, base_n=int(ob["base_n"]),
            doublings=int(ob["doublings"]),
            n_steps=int(cfg["time"]["n_steps"]),
            grading=cfg["mesh"]["grading"],
            growth_threshold=float(ob["growth_threshold"]),
        )
        if "json" in formats:
            (out / "observability_sweep.json").write_text(rep.to_json() + "\n")
        if "csv" in formats:
            rows = ["n_cells,cstar_h,c_T"]
            rows += [f"{L.n_cells},{L.cstar_h:.17g},{L.c_T:.17g}" for L in rep.levels]
            (out / "observability_sweep.csv").write_text("\n".join(rows) + "\n")
        if "png" in formats:
            figures.sweep_figure(rep, out / "observability_sweep.png")
        return 0
    pair, mesh, op = _build_problem(cfg)
    tg = TimeGrid(T=pair.T, n_steps=int(cfg["time"]["n_steps"]))
    omega = ControlPattern(*ob["omega"], x0=pair.x0)
    rep = observability_constant(op, tg, omega, max_iters=int(ob["max_iters"]))
    if "json" in formats:
        write_json(out / "observability.json", {
            "c_T": rep.c_T,
            "iterations": rep.iterations,
            "converged": rep.converged,
            "history": list(rep.history),
        })
    if "csv" in formats:
        rows = ["x,extremal_vT"]
        rows += [f"{x:.17g},{v:.17g}" for x, v in zip(op.dof_x, rep.extremal_vT)]
        (out / "observability_extremal.csv").write_text("\n".join(rows) + "\n")
    return 0


def _cmd_control(cfg: dict) -> int:
    pair, mesh, op = _build_problem(cfg)
    tg = TimeGrid(T=pair.T, n_steps=int(cfg["time"]["n_steps"]))
    cc = cfg["control"]
    omega = ControlPattern(*cc["omega"], x0=pair.x0)
    u0 = _u0_vector(cc["u0"], op)
    problem = HUMProblem(
        u0=u0, omega=omega, epsilon=float(cc["epsilon"]),
        cg_tol=float(cc["cg_tol"]), cg_max=int(cc["cg_max"]),
    )
    res = hum_control(op, tg, problem)
    out = _outdir(cfg)
    formats = cfg["output"]["formats"]
    if "json" in formats:
        write_json(out / "control.json", {
            "terminal_norm": res.terminal_norm,
            "cost": res.cost,
            "cost_ratio": res.cost_ratio,
            "cg_iters": res.cg_iters,
            "epsilon": res.epsilon,
            "converged": res.converged,
            "terminal_ratio": res.terminal_norm / op.m_norm(u0),
        })
    if "csv" in formats:
        trajectory_to_csv(out / "control.csv", op, tg, res.h)
    if "bin" in formats:
        from .evolution import trajectory_to_binary
        trajectory_to_binary(out / "control.bin", res.h)
    if "png" in formats:
        figures.control_figure(op, tg, res, out / "control.png")
    return 0


_COMMANDS = {
    "audit": _cmd_audit,
    "hardy": _cmd_hardy,
    "solve": _cmd_solve,
    "carleman": _cmd_carleman,
    "observability": _cmd_observability,
    "control": _cmd_control,
}


def _usage(prog: str) -> str:
    return (
        f"usage: {prog} {{{','.join(_COMMANDS)}}} [--config FILE] "
        "[--set key.path=value ...]\n"
    )


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    prog = "degenparab"
    if not argv or argv[0] in ("-h", "--help"):
        sys.stdout.write(_usage(prog))
        return 0
    sub, rest = argv[0], argv[1:]
    if sub not in _COMMANDS:
        sys.stderr.write(f"unknown subcommand {sub!r}\n" + _usage(prog))
        return 1
    parser = argparse.ArgumentParser(prog=f"{prog} {sub}", add_help=True)
    parser.add_argument("--config", default=None, help="JSON experiment config")
    parser.add_argument("--set", dest="sets", action="append", default=[],
                        metavar="KEY=VALUE", help="override a config entry")
    try:
        args = parser.parse_args(rest)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    try:
        cfg = load_config(args.config, args.sets)
        return _COMMANDS[sub](cfg)
    except _VALIDATION_ERRORS as exc:
        sys.stderr.write(f"validation error: {exc}\n")
        return 2
    except _NUMERICAL_ERRORS as exc:
        sys.stderr.write(f"numerical failure: {exc.__class__.__name__}: {exc}\n")
        return 3


if __name__ == "__main__":
    sys.exit(main())
