"""Command-line front end.

Every command prints a JSON summary (sorted keys) on stdout and, with
``--out DIR``, also writes ``<command>.json`` and ``<command>.csv`` there.
Checked quantities are emitted as ``{"value", "tolerance", "passed"}``.

Exit codes: 0 success, 1 failed invariant check, 2 usage error, 3 numeric
error.  Errors are reported as a JSON object on stderr.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import domain2d as d2
from . import radial as rad
from . import spectrum as spec_mod
from .potentials import Potential, PotentialError, double_well
from .profile1d import AssumptionViolated, InsufficientData, ProfileError, compute_Dprime, compute_profile, fit_profile_decay

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str
    potential: Potential | None = None
    params: dict = field(default_factory=dict)
    out: Path | None = None
    threads: int | None = None
    seed: int = 0


@dataclass
class Outcome:
    summary: dict
    csv: dict = field(default_factory=dict)  # file stem -> text
    checks: list = field(default_factory=list)

    def check(self, name, value, tolerance, passed):
        self.checks.append(
            {"name": name, "value": _clean(value), "tolerance": tolerance, "passed": bool(passed)}
        )

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks)


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items() if "wall_time" not in str(k)}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


# -- argument parsing ----------------------------------------------------------


def _load_json(text: str, what: str):
    src = text
    if not text.lstrip().startswith("{"):
        try:
            src = Path(text).read_text()
        except OSError as exc:
            raise UsageError(f"cannot read {what} file {text!r}: {exc}") from None
    try:
        return json.loads(src)
    except json.JSONDecodeError as exc:
        raise UsageError(f"malformed {what} JSON: {exc}") from None


def _potential(text: str | None) -> Potential:
    if text is None:
        return double_well()
    data = _load_json(text, "potential")
    try:
        return Potential.from_dict(data)
    except (PotentialError, TypeError, ValueError) as exc:
        raise UsageError(f"invalid potential: {exc}") from None


def _domain(text: str) -> d2.DomainSpec:
    data = _load_json(text, "domain")
    try:
        return d2.DomainSpec.from_dict(data)
    except (d2.DomainError, TypeError, ValueError) as exc:
        raise UsageError(f"invalid domain: {exc}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="eland", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--potential", help="potential JSON (file path or inline object); default double_well")
    common.add_argument("--out", type=Path, help="output directory for CSV/JSON files")
    common.add_argument("--threads", type=int, help="parallelism cap (overrides ELAND_THREADS)")
    common.add_argument("--seed", type=int, default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("profile", parents=[common], help="connecting profile U and D'(eps)")
    s.add_argument("--eps", type=float, default=0.1)
    s.add_argument("--u-max", type=float, help="largest sampled value (default mu (1 - 1e-8))")
    s.add_argument("--n-points", type=int, default=2000)
    s.add_argument("--window", type=float, nargs=2, help="decay-fit window in s")
    s.add_argument("--residual-tol", type=float, default=1e-6, help="first-integral residual tolerance")

    s = sub.add_parser("radial", parents=[common], help="radial minimizer on a ball")
    s.add_argument("--n", type=int, default=2)
    s.add_argument("--R", type=float, required=True)
    s.add_argument("--h", type=float)
    s.add_argument("--eps", type=float, default=0.1)

    s = sub.add_parser("sweep", parents=[common], help="radial minimizers over several radii")
    s.add_argument("--n", type=int, default=2)
    s.add_argument("--R-list", type=float, nargs="+", required=True)
    s.add_argument("--h", type=float)
    s.add_argument("--eps", type=float, default=0.1)
    s.add_argument("--S", type=float, default=5.0)

    s = sub.add_parser("spectrum", parents=[common], help="principal eigenpair of the linearization")
    s.add_argument("--n", type=int, default=2)
    s.add_argument("--R", type=float, required=True)
    s.add_argument("--h", type=float)
    s.add_argument("--S", type=float, default=5.0)

    s = sub.add_parser("critical-radius", parents=[common], help="bisection for the critical radius")
    s.add_argument("--n", type=int, default=1)
    s.add_argument("--bracket", type=float, nargs=2, required=True)
    s.add_argument("--width", type=float, default=1e-3)
    s.add_argument("--tol", type=float, default=1e-2, help="allowed distance to the analytic value")

    s = sub.add_parser("solve2d", parents=[common], help="2-D Dirichlet solution and estimates")
    s.add_argument("--domain", required=True, help="domain JSON {shape, params, h}")
    s.add_argument("--method", choices=("monotone", "minimizer", "both"), default="both")
    s.add_argument("--eps", type=float, default=0.1)
    s.add_argument("--D", type=float, default=2.6)
    s.add_argument("--ball-R", type=float, help="radius of the ball lower solution (default dist_max - 1)")
    s.add_argument("--agree-tol", type=float, default=5e-3)

    s = sub.add_parser("layer", parents=[common], help="boundary-layer width versus lambda")
    s.add_argument("--domain", help="2-D domain JSON (h is replaced by 0.2/lambda)")
    s.add_argument("--lambdas", type=float, nargs="+", default=[])
    s.add_argument("--analog-lambdas", type=float, nargs="*")
    s.add_argument("--eps", type=float, default=0.1)
    s.add_argument("--tol-1d", type=float, default=0.10)
    s.add_argument("--tol-2d", type=float, default=0.15)

    s = sub.add_parser("multiwell", parents=[common], help="ordered solutions for a multi-well potential")
    s.add_argument("--domain", required=True)
    s.add_argument("--eps", type=float, default=0.1)

    s = sub.add_parser("saddle", parents=[common], help="saddle solution on [0, L]^2 reflected oddly")
    s.add_argument("--L", type=float, default=30.0)
    s.add_argument("--h", type=float, default=0.05)
    s.add_argument("--x2", type=float, default=25.0)
    s.add_argument("--tol", type=float, default=0.05)

    s = sub.add_parser("verify", parents=[common], help="run the acceptance suite")
    s.add_argument("--suite", choices=("primary",), default="primary")
    s.add_argument("--only", type=int, nargs="+", help="criterion numbers to run")
    return p


def config_from_args(args) -> RunConfig:
    params = {
        k: v
        for k, v in vars(args).items()
        if k not in ("command", "potential", "out", "threads", "seed")
    }
    return RunConfig(
        command=args.command,
        potential=_potential(args.potential),
        params=params,
        out=args.out,
        threads=args.threads,
        seed=args.seed,
    )


# -- commands ------------------------------------------------------------------------


def _cmd_profile(cfg: RunConfig) -> Outcome:
    pot, p = cfg.potential, cfg.params
    if not 0 < p["eps"] < pot.mu:
        raise UsageError("--eps must lie in (0, mu)")
    u_max = p["u_max"] if p["u_max"] is not None else pot.mu * (1 - 1e-8)
    if not 0 < u_max < pot.mu:
        raise UsageError("--u-max must lie in (0, mu)")
    prof = compute_profile(pot, u_max, p["n_points"])
    Dp = compute_Dprime(pot, p["eps"])
    out = Outcome(
        {
            "D_prime": {"value": Dp, "tolerance": 1e-13, "kind": "relative quadrature tolerance"},
            "eps": p["eps"],
            "slope0": prof.slope0,
            "s_max": prof.s_max,
        },
        csv={"profile": prof.to_csv()},
    )
    tol = p.get("residual_tol", 1e-6)
    out.check("first_integral_residual", prof.first_integral_residual, tol, prof.first_integral_residual <= tol)
    if p["window"]:
        out.summary["decay_fit"] = fit_profile_decay(prof, tuple(p["window"])).to_dict()
    return out


def _radial_problem(cfg: RunConfig, R: float) -> rad.RadialProblem:
    try:
        return rad.RadialProblem(cfg.params["n"], R, cfg.potential, h=cfg.params.get("h"))
    except rad.DomainError as exc:
        raise UsageError(str(exc)) from None


def _cmd_radial(cfg: RunConfig) -> Outcome:
    p = cfg.params
    prob = _radial_problem(cfg, p["R"])
    if not 0 < p["eps"] < cfg.potential.mu:
        raise UsageError("--eps must lie in (0, mu)")
    sol = rad.solve_radial_minimizer(prob)
    summary = {
        "n": prob.n,
        "R": prob.R,
        "h": prob.h,
        "trivial": sol.trivial,
        "flux": sol.flux,
        "u0": float(sol.u[0]),
        "energy": sol.energy,
        "residual": {"value": sol.residual, "tolerance": 1e-10},
        "iterations": sol.iterations,
    }
    out = Outcome(summary, csv={"radial": sol.to_csv()})
    pot = cfg.potential
    out.check("max_principle", [float(sol.u.min()), float(sol.u.max())], [0.0, pot.mu],
              sol.u.min() >= min(0.0, pot.mu_minus) - 1e-14 and sol.u.max() <= pot.mu + 1e-14)
    if not sol.trivial:
        diag = rad.diagnostics(sol, p["eps"])
        summary["diagnostics"] = diag.to_dict()
        if prob.n >= 2:
            out.check("modica_margin", diag.modica_margin, 0.0, diag.modica_margin > 0)
        out.check("monotonicity_formula", bool(rad.is_nondecreasing(diag.monotonicity_seq)), "nondecreasing",
                  rad.is_nondecreasing(diag.monotonicity_seq))
        ramp = rad.discrete_energy(prob, rad.linear_ramp_competitor(prob))
        out.check("energy_vs_ramp", sol.energy - ramp, 0.0, sol.energy <= ramp)
    return out


def _cmd_sweep(cfg: RunConfig) -> Outcome:
    p = cfg.params
    Rs = p["R_list"]
    if any(b <= a for a, b in zip(Rs, Rs[1:])):
        raise UsageError("--R-list must be increasing")
    template = _radial_problem(cfg, Rs[0])
    table = rad.sweep_R(template, Rs, epsilon=p["eps"], S=p["S"], keep_solutions=False)
    rows = [dict(zip(rad.SWEEP_COLUMNS, r.values())) for r in table.rows]
    out = Outcome({"n": template.n, "rows": rows}, csv={"sweep": table.to_csv()})
    failed = [r.R for r in table.rows if r.status.startswith("failed")]
    out.check("all_rows_solved", failed, [], not failed)
    return out


def _cmd_spectrum(cfg: RunConfig) -> Outcome:
    p = cfg.params
    prob = _radial_problem(cfg, p["R"])
    sol = rad.solve_radial_minimizer(prob)
    if sol.trivial:
        raise UsageError("the radial minimizer is trivial for this R; spectrum undefined")
    eig = spec_mod.principal_eigenpair(sol)
    zeta = spec_mod.zeta_identity(sol)
    pot = cfg.potential
    try:
        prof = compute_profile(pot, pot.mu * (1 - 1e-8), 2000)
        gap = spec_mod.eigenfunction_profile_gap(eig, sol, prof, p["S"])
    except (ProfileError, AssumptionViolated):
        gap = float("nan")
    summary = {
        "R": prob.R,
        "mu_R": eig.mu_R,
        "residual_zeta": {"value": zeta.residual, "tolerance": 1e-6},
        "phi_profile_gap": gap,
        "rayleigh": eig.rayleigh,
    }
    out = Outcome(summary, csv={"spectrum_phi": eig.to_csv()})
    bound = -pot.max_abs_d2W - 1e-6
    out.check("mu_R_lower_bound", eig.mu_R, bound, eig.mu_R >= bound)
    out.check("rayleigh_consistency", abs(eig.rayleigh - eig.mu_R), 1e-8 * max(1.0, abs(eig.mu_R)),
              abs(eig.rayleigh - eig.mu_R) <= 1e-8 * max(1.0, abs(eig.mu_R)))
    out.check("zeta_residual", zeta.residual, 1e-6, (not zeta.flagged) and zeta.residual <= 1e-6)
    return out


def _cmd_critical(cfg: RunConfig) -> Outcome:
    p = cfg.params
    lo, hi = p["bracket"]
    if not 0 < lo < hi:
        raise UsageError("--bracket must satisfy 0 < lo < hi")
    try:
        res = rad.critical_radius(cfg.potential, p["n"], (lo, hi), width=p["width"])
    except (rad.BracketError, rad.DomainError) as exc:
        raise UsageError(str(exc)) from None
    out = Outcome({"numeric": res.numeric, "analytic": res.analytic, "bracket": list(res.bracket), "solves": res.solves})
    err = abs(res.numeric - res.analytic)
    out.check("analytic_agreement", err, p["tol"], err <= p["tol"])
    return out


def _build_domain(spec: d2.DomainSpec) -> d2.Domain2D:
    try:
        return d2.build_domain(spec)
    except (d2.DomainError, d2.BudgetError) as exc:
        raise UsageError(str(exc)) from None


def _cmd_solve2d(cfg: RunConfig) -> Outcome:
    p = cfg.params
    pot = cfg.potential
    dom = _build_domain(_domain(p["domain"]))
    if not 0 < p["eps"] < pot.mu:
        raise UsageError("--eps must lie in (0, mu)")
    if not p["D"] > compute_Dprime(pot, p["eps"]):
        raise UsageError("--D must exceed D'(eps)")
    summary = {"domain": dom.spec.to_dict(), "nodes": dom.n_nodes}
    out = Outcome(summary)
    fields = {}
    if p["method"] in ("monotone", "both"):
        R = p["ball_R"] if p["ball_R"] is not None else float(dom.dist.max()) - 1.0
        if not 0 < R < float(dom.dist.max()):
            raise UsageError("--ball-R must be positive and fit inside the domain")
        radial = rad.solve_radial_minimizer(rad.RadialProblem(2, R, pot))
        if radial.trivial:
            raise UsageError("ball radius too small: radial lower solution is trivial")
        lower = d2.lower_solution_field(dom, radial, dom.deepest_point())
        u, rep = d2.solve_monotone(dom, pot, lower)
        fields["monotone"] = u
        summary["monotone"] = rep.to_dict()
        out.check("minimal_le_maximal", rep.min_to_max_gap, "ordered", rep.ordered)
        out.check("monotone_residual", u.residual, 1e-8, u.residual <= 1e-8)
    if p["method"] in ("minimizer", "both"):
        u = d2.solve_minimizer_2d(dom, pot)
        fields["minimizer"] = u
        summary["minimizer"] = dict(u.info)
        out.check("minimizer_energy_vs_zero", u.info["energy"] - u.info["energy_zero"], 0.0,
                  u.info["energy"] <= u.info["energy_zero"])
        out.check("minimizer_energy_vs_competitor", u.info["energy"] - u.info["energy_competitor"], 0.0,
                  u.info["energy"] <= u.info["energy_competitor"])
    if len(fields) == 2:
        diff = float(np.max(np.abs(fields["monotone"].values - fields["minimizer"].values)))
        out.check("cross_method_agreement", diff, p["agree_tol"], diff <= p["agree_tol"])
    for name, u in fields.items():
        out.csv[f"solve2d_{name}"] = u.to_csv()
        if u.trivial:
            summary[f"report_{name}"] = "trivial"
            continue
        report = d2.verify_main_theorem(u, dom, pot, p["eps"], p["D"])
        summary[f"report_{name}"] = report.to_dict()
        out.check(f"{name}_bounds", report.bounds_hold, "0 < u < mu", report.bounds_hold)
        out.check(f"{name}_plateau", report.plateau_min_u, pot.mu - p["eps"], report.plateau_holds)
    return out


def _cmd_layer(cfg: RunConfig) -> Outcome:
    p = cfg.params
    pot = cfg.potential
    spec = _domain(p["domain"]) if p["domain"] else None
    analog = p["analog_lambdas"] if p["analog_lambdas"] is not None else p["lambdas"]
    if not p["lambdas"] and not analog:
        raise UsageError("give --lambdas and/or --analog-lambdas")
    try:
        table = d2.layer_experiment(spec, pot, p["lambdas"] if spec is not None else [], p["eps"],
                                    analog_lambdas=analog)
    except d2.BudgetError as exc:
        raise UsageError(str(exc)) from None
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = Outcome({"D_prime": table.target, "eps": p["eps"],
                   "rows": [dict(zip(d2.LAYER_COLUMNS, r.values())) for r in table.rows]},
                  csv={"layer": table.to_csv()})
    for row in table.rows:
        tol = p["tol_1d"] if row.dim == 1 else p["tol_2d"]
        rel = abs(row.width_lambda - table.target) / table.target
        out.check(f"width_lambda_dim{row.dim}_lam{row.lam:g}", row.width_lambda,
                  {"relative": tol, "target": table.target}, rel <= tol)
    for dim in (1, 2):
        widths = [r.width for r in table.select(dim)]
        if len(widths) > 1:
            dec = bool(np.all(np.diff(widths) < 0))
            out.check(f"width_decreasing_dim{dim}", widths, "decreasing", dec)
    return out


def _cmd_multiwell(cfg: RunConfig) -> Outcome:
    p = cfg.params
    pot = cfg.potential
    if pot.kind != "multi_well":
        raise UsageError("multiwell needs a multi_well potential")
    dom = _build_domain(_domain(p["domain"]))
    try:
        res = d2.multiwell_ordered(dom, pot, p["eps"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = Outcome(res.to_dict())
    for i, f in enumerate(res.fields, start=1):
        out.csv[f"multiwell_u{i}"] = f.to_csv()
    out.check("complete", res.failure_index, None, res.failure_index is None)
    for i, g in enumerate(res.min_gaps, start=2):
        out.check(f"order_u{i}_above_u{i - 1}", g, 0.0, g > 0)
    for i, ok in enumerate(res.plateau_ok, start=1):
        out.check(f"plateau_u{i}", ok, f"u > mu_{i} - {p['eps']}", ok)
    return out


def _cmd_saddle(cfg: RunConfig) -> Outcome:
    p = cfg.params
    pot = cfg.potential
    if p["L"] < 20:
        raise UsageError("--L must be >= 20")
    if not pot.is_even:
        raise UsageError("saddle needs an even potential")
    res = d2.saddle_demo(p["L"], pot, h=p["h"])
    target = math.sqrt(2 * pot.W(0.0))
    flux = res.flux_at(p["x2"])
    out = Outcome(
        {"L": p["L"], "h": p["h"], "x2": p["x2"], "flux": flux, "target": target, "trivial": res.trivial},
        csv={"saddle_flux": res.flux_csv(), "saddle_field": res.full.to_csv()},
    )
    out.check("nontrivial", res.trivial, False, not res.trivial)
    out.check("flux", flux, {"relative": p["tol"], "target": target}, abs(flux - target) <= p["tol"] * target)
    out.check("sign_structure", res.sign_ok, "u x1 x2 >= 0", res.sign_ok)
    out.check("positive_in_quadrant", res.positive_ok, "u > 0", res.positive_ok)
    out.check("axis_jump", res.axis_jump, 0.0, res.axis_jump == 0.0)
    return out


def _cmd_verify(cfg: RunConfig) -> Outcome:
    from .acceptance import CRITERIA, run_suite

    only = cfg.params.get("only")
    if only and any(i not in CRITERIA for i in only):
        raise UsageError(f"criteria are numbered 1..{len(CRITERIA)}")
    results = run_suite(only, echo=lambda line: print(line, file=sys.stderr))
    out = Outcome({"suite": cfg.params.get("suite", "primary"), "results": [r.to_dict() for r in results]})
    for r in results:
        out.check(f"criterion_{r.number}", r.measured, r.tolerance, r.passed)
    return out


COMMANDS = {
    "profile": _cmd_profile,
    "radial": _cmd_radial,
    "sweep": _cmd_sweep,
    "spectrum": _cmd_spectrum,
    "critical-radius": _cmd_critical,
    "solve2d": _cmd_solve2d,
    "layer": _cmd_layer,
    "multiwell": _cmd_multiwell,
    "saddle": _cmd_saddle,
    "verify": _cmd_verify,
}

NUMERIC_ERRORS = (
    rad.RadialError,
    spec_mod.SpectrumError,
    ProfileError,
    InsufficientData,
    d2.Solve2DError,
    d2.MonotonicityBroken,
    FloatingPointError,
    np.linalg.LinAlgError,
)


def _write_outputs(cfg: RunConfig, outcome: Outcome, text: str) -> None:
    if cfg.out is None:
        return
    cfg.out.mkdir(parents=True, exist_ok=True)
    stem = cfg.command.replace("-", "_")
    (cfg.out / f"{stem}.json").write_text(text)
    for name, body in outcome.csv.items():
        with open(cfg.out / f"{name}.csv", "w", newline="\n") as fh:
            fh.write(body)


def run(config: RunConfig) -> int:
    """Dispatch a validated config; returns the exit code."""
    if config.threads is not None:
        if config.threads < 1:
            return _fail(UsageError("--threads must be >= 1"), EXIT_USAGE)
        os.environ["ELAND_THREADS"] = str(config.threads)
    try:
        outcome = COMMANDS[config.command](config)
    except UsageError as exc:
        return _fail(exc, EXIT_USAGE)
    except (rad.DomainError, PotentialError, d2.BudgetError) as exc:
        return _fail(exc, EXIT_USAGE)
    except NUMERIC_ERRORS as exc:
        return _fail(exc, EXIT_NUMERIC)
    payload = dict(outcome.summary)
    payload["command"] = config.command
    payload["checks"] = outcome.checks
    payload["passed"] = outcome.passed
    text = dumps(payload)
    sys.stdout.write(text)
    _write_outputs(config, outcome, text)
    return EXIT_OK if outcome.passed else EXIT_CHECK


def _fail(exc: Exception, code: int) -> int:
    err = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    if hasattr(exc, "residual"):
        err["residual"] = exc.residual
    sys.stderr.write(dumps(err))
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # argparse exits with code 2 on usage errors
    try:
        cfg = config_from_args(args)
    except UsageError as exc:
        return _fail(exc, EXIT_USAGE)
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
