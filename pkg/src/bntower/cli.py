"""Command-line driver: constants, expansions, error norms, auxiliary and full solves, sweeps."""

from __future__ import annotations

import argparse
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bubbles import BallDomain, TowerConfig, scale_exponents
from .constants import compute_constants
from .radial_core import ArtifactError, InvalidParameterError, RadialField
from .reduced_energy import (
    LEMMAS,
    critical_d1,
    critical_d2,
    energy_diff_d2,
    error_norm_r1,
    error_norm_r2,
    expansion_terms,
    g2,
    inequality_ratio_max,
    r2_surrogate,
)
from .reduction_solver import (
    assembled_field,
    bubble_init,
    default_grid,
    minimize_reduced,
    nodal_analysis,
    solve_bvp,
    solve_stage1,
    solve_stage2,
)

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2

SWEEP_TASKS = ("expansion", "errnorm-r1", "errnorm-r2", "r2-surrogate", "energy-diff-d2",
               "aux", "minimize", "solve")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


@dataclass
class RunConfig:
    command: str
    dim: int = 7
    radius: float = 1.0
    eps: tuple[float, ...] = ()
    d1: float | None = None
    d2: float | None = None
    delta1: float | None = None
    delta2: float | None = None
    d2_alt: float | None = None
    nodes_per_decade: int = 32
    tol: float = 1e-10
    out: str | None = None
    fmt: str = "csv"
    robin_factor: float = 1.0
    task: str | None = None
    which: str = "r1"
    init: str = "tower"
    samples: int = 100_000
    seed: int = 0
    jobs: int = 1
    profile_out: str | None = None
    extra: dict = field(default_factory=dict)

    @property
    def direct_delta(self) -> bool:
        return self.delta1 is not None or self.delta2 is not None


def parse_geometric(text: str) -> tuple[float, ...]:
    try:
        start, stop, count = text.split(":")
        a, b, n = float(start), float(stop), int(count)
    except ValueError as exc:
        raise UsageError(f"--eps-geom expects start:stop:count, got {text!r}") from exc
    if n < 2 or not 0.0 < a < b:
        raise UsageError("--eps-geom needs count >= 2 and 0 < start < stop")
    return tuple(float(v) for v in np.geomspace(a, b, n))


def parse_eps_list(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise UsageError(f"bad --eps value {text!r}") from exc
    if not vals or any(not v > 0.0 for v in vals):
        raise UsageError("eps values must be positive")
    return tuple(sorted(vals))


def read_config_file(path: str) -> list[str]:
    """Turn `key = value` lines into flag tokens; blank lines and # comments are skipped."""
    tokens: list[str] = []
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path!r}") from exc
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        tokens += ["--" + key.replace("_", "-"), value]
    return tokens


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--dim", type=int, default=7, help="space dimension N >= 7 (default 7)")
    p.add_argument("--radius", type=float, default=1.0, help="ball radius (default 1)")
    p.add_argument("--format", dest="fmt", choices=("csv", "json"), default="csv")
    p.add_argument("--out", help="output file (default stdout)")
    p.add_argument("--config", help="file of `key = value` lines; flags override it")


def _add_eps(p):
    p.add_argument("--eps", help="single eps or comma-separated list")
    p.add_argument("--eps-geom", help="geometric eps sequence start:stop:count")


def _add_params(p):
    p.add_argument("--d1", type=float)
    p.add_argument("--d2", type=float)
    p.add_argument("--delta1", type=float, help="direct-delta mode, instead of --d1")
    p.add_argument("--delta2", type=float, help="direct-delta mode, instead of --d2")
    p.add_argument("--robin-factor", type=float, default=1.0,
                   help="multiplier on the Robin value in the inner reduced coefficient (default 1)")


def _add_grid(p):
    p.add_argument("--nodes-per-decade", type=int, default=32, help="grid density (default 32)")
    p.add_argument("--tol", type=float, default=1e-10, help="Newton tolerance (default 1e-10)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bntower", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("constants", help="dimensional constants and exponents")
    _add_common(p)

    p = sub.add_parser("expansion", help="tower energy against its reduced expansion")
    _add_common(p); _add_eps(p); _add_params(p)

    p = sub.add_parser("errnorm", help="H^1 norms of the projected error terms")
    _add_common(p); _add_eps(p); _add_params(p); _add_grid(p)
    p.add_argument("--which", choices=("r1", "r2", "r2-surrogate"), default="r1")

    p = sub.add_parser("aux", help="stage-one (and stage-two if d2 is given) remainder solves")
    _add_common(p); _add_eps(p); _add_params(p); _add_grid(p)

    p = sub.add_parser("solve", help="full radial Newton solve with nodal diagnostics")
    _add_common(p); _add_eps(p); _add_params(p); _add_grid(p)
    p.add_argument("--init", choices=("tower", "positive", "zero"), default="tower")
    p.add_argument("--profile-out", help="write the radius/value profile here")

    p = sub.add_parser("sweep", help="run one computation over several eps values")
    _add_common(p); _add_eps(p); _add_params(p); _add_grid(p)
    p.add_argument("--task", choices=SWEEP_TASKS, required=True)
    p.add_argument("--d2-alt", type=float, help="second d2 for energy-diff-d2")
    p.add_argument("--init", choices=("tower", "positive", "zero"), default="tower")
    p.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")

    p = sub.add_parser("check-inequalities", help="randomized elementary inequality suites")
    _add_common(p)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    return parser


def parse_args(argv) -> RunConfig:
    argv = list(argv)
    if "--config" in argv:
        i = argv.index("--config")
        if i + 1 >= len(argv):
            raise UsageError("--config needs a path")
        path = argv[i + 1]
        del argv[i:i + 2]
        if not argv:
            raise UsageError("a subcommand is required")
        argv = argv[:1] + read_config_file(path) + argv[1:]
    ns = build_parser().parse_args(argv)
    vals = vars(ns)
    eps: tuple[float, ...] = ()
    if vals.get("eps_geom") and vals.get("eps"):
        raise UsageError("give --eps or --eps-geom, not both")
    if vals.get("eps_geom"):
        eps = parse_geometric(vals["eps_geom"])
    elif vals.get("eps"):
        eps = parse_eps_list(vals["eps"])
    has_d = vals.get("d1") is not None or vals.get("d2") is not None
    has_delta = vals.get("delta1") is not None or vals.get("delta2") is not None
    if has_d and has_delta:
        raise UsageError("mixed parameterization: give the d-pair or the delta-pair, not both")
    if ns.dim < 7:
        raise UsageError("--dim must be at least 7")
    if not ns.radius > 0.0:
        raise UsageError("--radius must be positive")
    known = {f for f in RunConfig.__dataclass_fields__}
    cfg = RunConfig(command=ns.command, eps=eps,
                    **{k: v for k, v in vals.items() if k in known and k not in ("command", "eps")
                       and v is not None})
    if cfg.command in ("expansion", "errnorm", "aux", "solve", "sweep") and not cfg.eps:
        raise UsageError(f"{cfg.command} needs --eps or --eps-geom")
    if cfg.command != "sweep" and len(cfg.eps) > 1:
        raise UsageError("use the sweep command for several eps values")
    if cfg.jobs < 1:
        raise UsageError("--jobs must be at least 1")
    return cfg


# --------------------------------------------------------------------------
# output
# --------------------------------------------------------------------------


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def _json_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g") if math.isfinite(v) else "null"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return json.dumps(v)


def render(rows: list[dict], fmt: str, as_array: bool) -> str:
    if fmt == "json":
        objs = ["{" + ", ".join(f"{json.dumps(k)}: {_json_value(v)}" for k, v in r.items()) + "}"
                for r in rows]
        return ("[" + ",\n ".join(objs) + "]" if as_array else objs[0]) + "\n"
    keys = list(rows[0])
    lines = [",".join(keys)] + [",".join(format_value(r.get(k, "")) for k in keys) for r in rows]
    return "\n".join(lines) + "\n"


def write_output(text: str, path: str | None):
    if path:
        with open(path, "w", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def write_profile(u: RadialField, path: str):
    rows = [{"radius": float(r), "value": float(v)} for r, v in zip(u.grid.nodes, u.values)]
    write_output(render(rows, "csv", True), path)


# --------------------------------------------------------------------------
# computations
# --------------------------------------------------------------------------


def _critical_pair(cfg: RunConfig) -> tuple[float, float]:
    consts = compute_constants(cfg.dim, with_quadrature=False)
    dom = BallDomain(cfg.radius, cfg.dim)
    c1 = critical_d1(consts, dom)
    return c1, critical_d2(consts, dom, c1, cfg.robin_factor)


def _d_pair(cfg: RunConfig, eps: float) -> tuple[float, float | None]:
    """(d1, d2) in the eps-driven parameterization, converting deltas if given."""
    a1, a2 = scale_exponents(cfg.dim)
    if cfg.direct_delta:
        d1 = cfg.delta1 / eps ** float(a1) if cfg.delta1 is not None else None
        d2 = cfg.delta2 / eps ** float(a2) if cfg.delta2 is not None else None
    else:
        d1, d2 = cfg.d1, cfg.d2
    if d1 is None:
        raise UsageError("this command needs --d1 or --delta1")
    return d1, d2


def _require_d2(d2):
    if d2 is None:
        raise UsageError("this command needs --d2 or --delta2")
    return d2


def run_constants(cfg: RunConfig, eps=None) -> tuple[dict, bool]:
    return compute_constants(cfg.dim).as_record(), True


def run_expansion(cfg: RunConfig, eps: float) -> tuple[dict, bool]:
    d1, d2 = _d_pair(cfg, eps)
    tc = TowerConfig(cfg.dim, cfg.radius, eps, d1, _require_d2(d2))
    tc.require_separated()
    rep = expansion_terms(tc, robin_factor=cfg.robin_factor)
    rec = {"eps": eps, "d1": d1, "d2": d2, **rep.as_record()}
    t1 = eps ** float(compute_constants(cfg.dim, with_quadrature=False).theta1)
    rec["scaled_after_leading"] = rep.residual_after_leading / t1
    rec["scaled_after_g1"] = rep.residual_after_g1 / t1
    return rec, True


def run_energy_diff(cfg: RunConfig, eps: float) -> tuple[dict, bool]:
    d1, d2 = _d_pair(cfg, eps)
    if cfg.d2_alt is None:
        raise UsageError("energy-diff-d2 needs --d2-alt")
    tc = TowerConfig(cfg.dim, cfg.radius, eps, d1, _require_d2(d2))
    tc.require_separated()
    consts = compute_constants(cfg.dim, with_quadrature=False)
    diff = energy_diff_d2(tc, cfg.d2_alt)
    pred = eps ** consts.theta2 * (g2(d1, cfg.d2_alt, consts, tc.domain, cfg.robin_factor)
                                   - g2(d1, d2, consts, tc.domain, cfg.robin_factor))
    return {"eps": eps, "d1": d1, "d2": d2, "d2_alt": cfg.d2_alt, "energy_diff": diff,
            "predicted": pred, "ratio": diff / pred}, True


def run_errnorm(cfg: RunConfig, eps: float, which: str | None = None) -> tuple[dict, bool]:
    which = which or cfg.which
    d1, d2 = _d_pair(cfg, eps)
    consts = compute_constants(cfg.dim, with_quadrature=False)
    dom = BallDomain(cfg.radius, cfg.dim)
    if which == "r2-surrogate":
        return {"eps": eps, "d1": d1, "d2": _require_d2(d2),
                "surrogate": r2_surrogate(eps, d1, d2, consts, dom)}, True
    if which == "r1":
        delta = d1 * eps ** consts.alpha1
        grid = default_grid(cfg.dim, cfg.radius, delta / 100.0, cfg.nodes_per_decade)
        rep = error_norm_r1(eps, d1, consts, dom, grid)
    else:
        delta = _require_d2(d2) * eps ** consts.alpha2
        grid = default_grid(cfg.dim, cfg.radius, delta / 100.0, cfg.nodes_per_decade)
        rep = error_norm_r2(eps, d1, d2, consts, dom, grid)
    rec = rep.as_record()
    rec.pop("which")
    return {"eps": eps, "d1": d1, "d2": d2 if which == "r2" else math.nan, **rec}, True


def run_aux(cfg: RunConfig, eps: float) -> tuple[dict, bool]:
    d1, d2 = _d_pair(cfg, eps)
    a1, a2 = scale_exponents(cfg.dim)
    inner = (d2 if d2 is not None else d1) * eps ** float(a2 if d2 is not None else a1)
    grid = default_grid(cfg.dim, cfg.radius, inner / 100.0, cfg.nodes_per_decade)
    s1 = solve_stage1(eps, d1, grid, tol=cfg.tol)
    rec = {"eps": eps, "d1": d1, "norm_phi1": s1.norm_phi1, "multiplier1": s1.multipliers[0],
           "stage1_iterations": s1.iterations, "stage1_converged": s1.converged}
    ok = s1.converged
    if d2 is not None:
        s2 = solve_stage2(eps, d1, d2, s1, grid, tol=cfg.tol)
        rec.update({"d2": d2, "norm_phi2": s2.norm_phi2, "ratio": s2.ratio,
                    "multiplier2_outer": s2.multipliers[0], "multiplier2_inner": s2.multipliers[1],
                    "stage2_iterations": s2.iterations, "stage2_converged": s2.converged})
        ok = ok and s2.converged
    return rec, ok


def run_minimize(cfg: RunConfig, eps: float) -> tuple[dict, bool]:
    m = minimize_reduced(eps, N=cfg.dim, R=cfg.radius, nodes_per_decade=cfg.nodes_per_decade)
    return {"eps": eps, **m.as_record()}, m.solution.converged


def run_solve(cfg: RunConfig, eps: float, profile_out: str | None = None) -> tuple[dict, bool]:
    n, R = cfg.dim, cfg.radius
    a1, a2 = scale_exponents(n)
    rec: dict = {"eps": eps, "init": cfg.init}
    fine = max(cfg.nodes_per_decade, 128)
    if cfg.init == "tower":
        if cfg.d1 is None and not cfg.direct_delta:
            m = minimize_reduced(eps, N=n, R=R)
            d1, d2 = m.d1_min, m.d2_min
        else:
            d1, d2 = _d_pair(cfg, eps)
            _require_d2(d2)
        rec.update({"d1": d1, "d2": d2})
        grid = default_grid(n, R, d2 * eps ** float(a2) / 100.0, fine)
        s2 = solve_stage2(eps, d1, d2, solve_stage1(eps, d1, grid), grid)
        init = assembled_field(s2)
    else:
        c1, _ = _critical_pair(cfg)
        d1 = cfg.d1 if cfg.d1 is not None else c1
        delta = cfg.delta1 if cfg.delta1 is not None else d1 * eps ** float(a1)
        grid = default_grid(n, R, delta / 100.0, fine)
        init = bubble_init(grid, delta) if cfg.init == "positive" else RadialField.zeros(grid)
    sol = solve_bvp(eps, init, grid, tol=min(cfg.tol * 100.0, 1e-8))
    rec.update({"converged": sol.converged, "newton_iterations": sol.newton_iterations,
                "residual_h1": sol.residual_h1, "energy": sol.energy,
                "nehari_residual": sol.nehari_residual, "nodal_radius": sol.nodal_radius,
                "fitted_delta1": sol.fitted_delta1, "fitted_delta2": sol.fitted_delta2})
    if sol.u.sup_norm() > 0.0 and eps ** float(a1) < R:
        rec.update(nodal_analysis(sol, eps).as_record())
    if profile_out:
        write_profile(sol.u, profile_out)
    return rec, sol.converged


def run_inequalities(cfg: RunConfig) -> tuple[list[dict], bool]:
    rows = []
    for lemma in LEMMAS:
        first = inequality_ratio_max(lemma, cfg.dim, cfg.samples, cfg.seed)
        second = inequality_ratio_max(lemma, cfg.dim, cfg.samples, cfg.seed + 1)
        rows.append({"lemma": "lemma_" + lemma.replace(".", "_"), "max_ratio": first,
                     "second_run_max_ratio": second,
                     "stable": abs(second / first - 1.0) <= 0.05 if first > 0 else True})
    return rows, True


_TASKS = {
    "expansion": run_expansion,
    "energy-diff-d2": run_energy_diff,
    "errnorm-r1": lambda c, e: run_errnorm(c, e, "r1"),
    "errnorm-r2": lambda c, e: run_errnorm(c, e, "r2"),
    "r2-surrogate": lambda c, e: run_errnorm(c, e, "r2-surrogate"),
    "aux": run_aux,
    "minimize": run_minimize,
    "solve": run_solve,
}


def _sweep_point(cfg: RunConfig, eps: float) -> tuple[dict, bool]:
    try:
        return _TASKS[cfg.task](cfg, eps)
    except ArtifactError as exc:
        if isinstance(exc, InvalidParameterError):
            raise
        return {"eps": eps, "error": type(exc).__name__}, False


def run(cfg: RunConfig) -> int:
    if cfg.command == "constants":
        rows, ok, many = [run_constants(cfg)[0]], True, False
    elif cfg.command == "check-inequalities":
        (rows, ok), many = run_inequalities(cfg), True
    elif cfg.command == "sweep":
        if cfg.jobs > 1:
            with ProcessPoolExecutor(cfg.jobs) as pool:
                results = list(pool.map(_sweep_point, [cfg] * len(cfg.eps), cfg.eps))
        else:
            results = [_sweep_point(cfg, e) for e in cfg.eps]
        rows = [r for r, _ in results]
        ok = all(flag for _, flag in results)
        # rows with an error column still share the header of the first row
        keys = list(dict.fromkeys(k for r in rows for k in r))
        rows = [{k: r.get(k, math.nan) for k in keys} for r in rows]
        many = True
    else:
        eps = cfg.eps[0]
        if cfg.command == "expansion":
            row, ok = run_expansion(cfg, eps)
        elif cfg.command == "errnorm":
            row, ok = run_errnorm(cfg, eps)
        elif cfg.command == "aux":
            row, ok = run_aux(cfg, eps)
        else:
            row, ok = run_solve(cfg, eps, cfg.profile_out)
        rows, many = [row], False
    if not ok:
        for r in rows:
            r.setdefault("converged", False)
    write_output(render(rows, cfg.fmt, many), cfg.out)
    return EXIT_OK if ok else EXIT_NUMERICAL


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        cfg = parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    try:
        return run(cfg)
    except (UsageError, InvalidParameterError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ArtifactError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
