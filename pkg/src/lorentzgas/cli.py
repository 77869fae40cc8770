"""Command-line front end.

Each subcommand writes ``<command>.json`` plus CSV tables (and PNG figures
unless ``--no-figures``) into ``--out``.  All output is produced after the
computation finishes.  Exit codes: 0 ok, 1 check failed, 2 bad input,
3 run aborted by a singular collision or an unbounded flight.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__, checks, io
from .dynamics import PhasePoint, expansion_constant, lyapunov_estimate, orbit, sample_arrays
from .errors import ChooseRError, HorizonExceeded, LorentzGasError, SceneError, SchemaError, SingularStep
from .runtime import task_rng

EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_ABORT = 0, 1, 2, 3


class InputError(Exception):
    pass


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.replace(";", ",").split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ids(text: str) -> list:
    try:
        return io.parse_id_list(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _id(text: str):
    try:
        return io.parse_id(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scene", required=True, help="scene JSON file")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--samples", type=int, default=None)
    common.add_argument("--steps", type=int, default=None)
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--no-figures", action="store_true", help="skip PNG rendering")

    start = argparse.ArgumentParser(add_help=False)
    start.add_argument("--alpha", type=_id, default=None, help="start scatterer i:j:m")
    start.add_argument("--r", type=float, default=None)
    start.add_argument("--phi", type=float, default=None)

    target = argparse.ArgumentParser(add_help=False)
    target.add_argument("--target", type=_ids, default=None, help="scatterer list i:j:m,i:j:m")

    p = argparse.ArgumentParser(prog="lorentzgas", description="Lorentz gas simulation and checks")
    p.add_argument("--version", action="version", version=f"lorentzgas {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("verify", parents=[common], help="run the invariant suite")
    sub.add_parser("simulate", parents=[common, start], help="export a trajectory")
    sub.add_parser("lyapunov", parents=[common, start], help="Lyapunov exponent estimates")
    s = sub.add_parser("singularities", parents=[common, target], help="singularity curves and eps-tubes")
    s.add_argument("--epsilon", type=_floats, default=[0.005, 0.01, 0.02, 0.04])
    s.add_argument("--grid", type=int, default=2048)
    s = sub.add_parser("horizon", parents=[common], help="free-path range and corridor search")
    s.add_argument("--radius", type=float, default=None, help="sampling region radius")
    sub.add_parser("neighbors", parents=[common, target], help="neighbor-set growth")
    s = sub.add_parser("recur", parents=[common, target], help="recurrence fractions and A(R)")
    s.add_argument("--radius-grid", type=_floats, default=None)
    s.add_argument("--cap", type=int, default=None)
    s = sub.add_parser("birkhoff", parents=[common, start, target], help="forward vs backward return averages")
    s.add_argument("--observable", default="f1", choices=["one", "f1", "f2", "f3"])
    s.add_argument("--budget", type=int, default=None)
    s = sub.add_parser("build-aperiodic", parents=[common, target], help="recursive annulus construction")
    s.add_argument("--rounds", type=int, default=2)
    s.add_argument("--eps-schedule", type=_floats, default=None)
    s.add_argument("--annulus-width", type=float, default=None)
    s.add_argument("--policy", default="jitter", choices=["jitter", "identity"])
    s.add_argument("--cap", type=int, default=100_000)
    return p


# ---------------------------------------------------------------------------
# helpers


class Run:
    """Collects artifacts; everything is written at the end by :meth:`flush`."""

    def __init__(self, args, scene_data):
        self.args = args
        self.out = Path(args.out)
        self.scene_data = scene_data
        self.tables: list = []
        self.figures: list = []
        self.extra: list = []

    def table(self, name, header, columns):
        self.tables.append((name, header, columns))

    def figure(self, fn, name, *a, **kw):
        if not self.args.no_figures:
            self.figures.append((fn, name, a, kw))

    def text(self, name, content):
        self.extra.append((name, content))

    def spec(self, params: dict) -> dict:
        return {"command": self.args.command, "scene": self.scene_data, "params": params}

    def flush(self, report: dict) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        for name, header, columns in self.tables:
            io.export_series(self.out / name, header, columns)
        for name, content in self.extra:
            (self.out / name).write_text(content, newline="\n")
        for fn, name, a, kw in self.figures:
            fn(*a, path=self.out / name, **kw)
        path = self.out / f"{self.args.command}.json"
        io.write_report(report, path)
        return path


def _plot(name):
    from . import plotting

    return getattr(plotting, name)


def _default_alpha(config):
    return checks.sample_pool(config, 1)[0]


def _start_point(args, config) -> PhasePoint:
    alpha = tuple(args.alpha) if getattr(args, "alpha", None) else None
    if alpha is None and getattr(args, "target", None):
        alpha = tuple(args.target[0])
    if alpha is None:
        alpha = _default_alpha(config)
    if not config.has(alpha):
        raise InputError(f"scatterer {io.fmt_id(alpha)} is not part of the scene")
    rng = task_rng(args.seed, "start")
    _, r, phi = sample_arrays(config, [alpha], 1, rng)
    r = float(r[0]) if args.r is None else args.r
    phi = float(phi[0]) if args.phi is None else args.phi
    if not 0.0 < phi < math.pi:
        raise InputError("phi must lie in (0, pi)")
    return PhasePoint(alpha, r, phi)


def _targets(args, config) -> list:
    tg = [tuple(t) for t in args.target] if args.target else [_default_alpha(config)]
    for t in tg:
        if not config.has(t):
            raise InputError(f"scatterer {io.fmt_id(t)} is not part of the scene")
    return tg


def _point_dict(x: PhasePoint) -> dict:
    return {"alpha": io.fmt_id(x.alpha), "r": x.r, "phi": x.phi}


# ---------------------------------------------------------------------------
# subcommands; each returns (payload, params, exit_code)


def cmd_verify(args, config, run: Run):
    samples = args.samples or 2000
    res = checks.run_verify(config, args.seed, samples)
    names = [c["name"] for c in res["checks"]]
    run.table("verify_checks.csv", ["name", "module", "passed", "total", "ok"],
              [names, [c["module"] for c in res["checks"]], [c["passed"] for c in res["checks"]],
               [c["total"] for c in res["checks"]], [str(c["ok"]).lower() for c in res["checks"]]])
    run.figure(_plot("plot_scene"), "scene.png", config)
    return res, {"samples": samples}, EXIT_OK if res["ok"] else EXIT_FAIL


def cmd_simulate(args, config, run: Run):
    n = 100 if args.steps is None else args.steps
    if n < 0:
        raise InputError("--steps must be >= 0")
    x = _start_point(args, config)
    orb = orbit(config, x, n) if n > 0 else None
    if orb is None:
        from .dynamics import Orbit

        fr = config.disk(x.alpha)
        orb = Orbit(np.array([x.alpha]), np.array([x.r]), np.array([x.phi]), np.array([fr.center[0]]),
                    np.array([fr.center[1]]), np.zeros(0), np.zeros(0))
    run.text("trajectory.csv", io.trajectory_text(orb))
    if orb.steps > 0:
        run.figure(_plot("plot_trajectory"), "trajectory.png", config, orb)
    payload = {"start": _point_dict(x), "requested": n, "steps": orb.steps, "status": orb.status,
               "min_grazing_margin": float(orb.margin.min()) if orb.steps else None,
               "total_time": float(orb.tau.sum())}
    code = EXIT_OK if orb.status == "ok" else EXIT_ABORT
    return payload, {"steps": n, "start": _point_dict(x)}, code


def cmd_lyapunov(args, config, run: Run):
    N = args.steps or 10_000
    m = args.samples or 10
    lam = expansion_constant(config)
    pool = [tuple(args.alpha)] if args.alpha else checks.sample_pool(config)
    ids, r, phi = sample_arrays(config, pool, m, task_rng(args.seed, "lyapunov", "starts"))
    rows = []
    for q in range(m):
        x = PhasePoint(tuple(int(v) for v in ids[q]), float(r[q]), float(phi[q]))
        res = lyapunov_estimate(config, x, N, task_rng(args.seed, "lyapunov", q))
        rows.append((x, res))
    est = np.array([res.estimate for _, res in rows])
    full = [res.status == "ok" for _, res in rows]
    payload = {
        "log_lambda": math.log(lam), "lambda": lam, "steps": N, "runs": m,
        "estimates": [res.as_dict() | {"start": _point_dict(x)} for x, res in rows],
        "mean": float(np.nanmean(est)), "min": float(np.nanmin(est)),
        "all_exceed_log_lambda": bool(np.all(est > math.log(lam))),
        "all_complete": bool(all(full)),
    }
    run.table("lyapunov.csv", ["run", "alpha", "r", "phi", "estimate", "steps", "status"],
              [list(range(m)), [io.fmt_id(x.alpha) for x, _ in rows], [x.r for x, _ in rows],
               [x.phi for x, _ in rows], list(est), [res.steps for _, res in rows], [res.status for _, res in rows]])
    run.figure(_plot("plot_series"), "lyapunov.png", np.arange(m), {"estimate": est}, xlabel="run",
               ylabel="Lyapunov exponent", hlines={"log lambda": math.log(lam)})
    if not all(full):
        code = EXIT_ABORT
    else:
        code = EXIT_OK if payload["all_exceed_log_lambda"] else EXIT_FAIL
    return payload, {"steps": N, "samples": m}, code


def cmd_singularities(args, config, run: Run):
    from .singularity import CurveSet, eps_tube_measure, tube_union_bound

    n = args.samples or 100_000
    eps = sorted(args.epsilon)
    targets = _targets(args, config)
    per = []
    all_curves = []
    tube_rows = []
    for q, alpha in enumerate(targets):
        cs = CurveSet.of(config, alpha, grid=args.grid)
        all_curves.extend(cs.curves)
        est = eps_tube_measure(config, alpha, eps, n, task_rng(args.seed, "tube", q), curves=cs)
        bounds = [tube_union_bound(cs, e) for e in eps]
        plus = [c for c in cs.curves if c.kind == "+"]
        per.append({
            "alpha": io.fmt_id(alpha), "curves": len(cs.curves),
            "visible_neighbors": len({c.neighbor for c in plus}),
            "monotone": all(c.is_monotone() for c in cs.curves),
            "tube": [e.as_dict() | {"ratio": e.estimate / e.epsilon, "ratio_ci_low": e.ci[0] / e.epsilon,
                                    "ratio_ci_high": e.ci[1] / e.epsilon, "union_bound": b}
                     for e, b in zip(est, bounds)],
        })
        for e, b in zip(est, bounds):
            tube_rows.append((io.fmt_id(alpha), e.epsilon, e.estimate, e.ci[0], e.ci[1], b))
        run.figure(_plot("plot_curves"), f"curves_{io.fmt_id(alpha).replace(':', '_')}.png", cs.curves,
                   cs.length, title=f"singularity curves on {io.fmt_id(alpha)}")
    C = max(max(t["union_bound"] for t in p["tube"]) for p in per)
    bounded = all(t["ratio_ci_low"] <= C for p in per for t in p["tube"])
    payload = {"scatterers": per, "constant": C, "ratios_bounded": bounded, "samples": n}
    rows = [(c.kind, io.fmt_id(c.base), io.fmt_id(c.neighbor), c.branch, k, r, p)
            for c in all_curves for k, (r, p) in enumerate(zip(c.r, c.phi))]
    run.table("curves.csv", list(io.CURVE_COLUMNS), list(zip(*rows)) if rows else [[]] * 7)
    run.table("tube.csv", ["alpha", "epsilon", "estimate", "ci_low", "ci_high", "union_bound"], list(zip(*tube_rows)))
    run.figure(_plot("plot_series"), "tube_ratio.png", eps,
               {p["alpha"]: [t["ratio"] for t in p["tube"]] for p in per}, xlabel="epsilon",
               ylabel="measure / epsilon", logx=True, hlines={"C": C})
    ok = bounded and all(p["monotone"] for p in per)
    return payload, {"samples": n, "epsilon": eps, "targets": [io.fmt_id(t) for t in targets],
                     "grid": args.grid}, EXIT_OK if ok else EXIT_FAIL


def cmd_horizon(args, config, run: Run):
    from .scene import estimate_horizon

    n = args.samples or 20_000
    radius = args.radius or 2.0 * (config.lattice.cell_diameter if config.lattice is not None else config.max_diameter)
    rep = estimate_horizon(config, radius, n, task_rng(args.seed, "horizon"))
    payload = rep.as_dict() | {"bounds": config.bounds.as_dict() if config.bounds else None}
    return payload, {"samples": n, "radius": radius}, EXIT_OK


def cmd_neighbors(args, config, run: Run):
    from .singularity import DYNAMICAL, GEOMETRIC, neighbor_set
    from .stats import relative_quadratic_residual

    n_max = args.steps or 8
    m = args.samples or 10_000
    alpha = _targets(args, config)[0]
    geo, dyn, viol = [], [], 0
    for n in range(1, n_max + 1):
        g = neighbor_set(config, alpha, n, GEOMETRIC)
        d = neighbor_set(config, alpha, n, DYNAMICAL, rng=task_rng(args.seed, "neighbors"), n_samples=m)
        viol += len(d.ids - g.ids)
        geo.append(len(g))
        dyn.append(len(d))
    ns = list(range(1, n_max + 1))
    coef, resid = relative_quadratic_residual(ns, geo)
    payload = {"alpha": io.fmt_id(alpha), "n": ns, "geometric": geo, "dynamical": dyn,
               "containment_violations": viol, "quadratic_fit": list(coef), "relative_residual": resid}
    run.table("neighbors.csv", ["n", "geometric", "dynamical"], [ns, geo, dyn])
    run.figure(_plot("plot_series"), "neighbors.png", ns, {"geometric": geo, "dynamical": dyn}, xlabel="n",
               ylabel="#N_n")
    ok = viol == 0 and (n_max < 3 or resid < 0.05)
    return payload, {"steps": n_max, "samples": m, "target": io.fmt_id(alpha)}, EXIT_OK if ok else EXIT_FAIL


def cmd_recur(args, config, run: Run):
    from .recurrence import excursion_sample, recurrence_fraction

    N = args.steps or 100_000
    m = args.samples or 1000
    cap = args.cap or N
    targets = _targets(args, config)
    grid = args.radius_grid or [1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0]
    grid = sorted(grid)
    rf = recurrence_fraction(config, targets, N, m, task_rng(args.seed, "recur"), threads=args.threads)
    smp = excursion_sample(config, targets[0], m, cap, task_rng(args.seed, "recur", "A"), threads=args.threads)
    fr = [smp.A_fraction(R) for R in grid]
    viol = sum(int(np.sum(smp.in_A(a) & ~smp.in_A(b))) for a, b in zip(grid, grid[1:]))
    payload = {"targets": [io.fmt_id(t) for t in targets], "recurrence": rf.as_dict(),
               "strictly_increasing": rf.strictly_increasing(),
               "A": {"R": grid, "fractions": [f.as_dict() for f in fr], "nesting_violations": viol, "cap": cap}}
    run.table("recurrence.csv", ["checkpoint", "fraction", "ci_low", "ci_high"],
              [rf.checkpoints, [f.p for f in rf.fractions], [f.lo for f in rf.fractions],
               [f.hi for f in rf.fractions]])
    run.table("A_measure.csv", ["R", "fraction", "ci_low", "ci_high"],
              [grid, [f.p for f in fr], [f.lo for f in fr], [f.hi for f in fr]])
    run.figure(_plot("plot_series"), "recurrence.png", rf.checkpoints, {"fraction": [f.p for f in rf.fractions]},
               xlabel="N", ylabel="returned fraction", logx=True)
    run.figure(_plot("plot_series"), "A_measure.png", grid, {"mu(A(R))": [f.p for f in fr]}, xlabel="R",
               ylabel="normalized measure", logx=True)
    ok = rf.monotone() and viol == 0
    return payload, {"steps": N, "samples": m, "cap": cap, "radius_grid": grid,
                     "targets": [io.fmt_id(t) for t in targets]}, EXIT_OK if ok else EXIT_FAIL


def cmd_birkhoff(args, config, run: Run):
    from .recurrence import birkhoff_average

    N = args.steps or 1000
    x = _start_point(args, config)
    res = birkhoff_average(config, x.alpha, args.observable, x, N, budget=args.budget)
    payload = {"start": _point_dict(x), **res.as_dict()}
    if not res.complete:
        print(f"warning: only {res.n_forward}/{res.n_backward} of {N} returns within the step budget",
              file=sys.stderr)
    ok = res.complete and res.agree()
    return payload, {"steps": N, "observable": args.observable, "budget": args.budget,
                     "start": _point_dict(x)}, EXIT_OK if ok else EXIT_FAIL


def cmd_build_aperiodic(args, config, run: Run):
    from .recurrence import POLICIES, build_aperiodic

    alpha = _targets(args, config)[0]
    m = args.samples or 2000
    policy = POLICIES[args.policy]()
    params = {"rounds": args.rounds, "eps_schedule": args.eps_schedule, "annulus_width": args.annulus_width,
              "policy": args.policy, "samples": m, "cap": args.cap, "target": io.fmt_id(alpha)}
    try:
        cfg, log_ = build_aperiodic(config, alpha, args.eps_schedule, args.annulus_width, args.rounds, policy,
                                    task_rng(args.seed, "build"), n_samples=m, cap=args.cap, threads=args.threads)
    except ChooseRError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return {"aborted": str(exc)}, params, EXIT_FAIL
    scene = io.scene_to_dict(cfg)
    run.text("aperiodic_scene.json", json.dumps(io._clean(scene), indent=2) + "\n")
    ver = checks.run_verify(cfg, args.seed, 1000)
    payload = {"log": log_.as_dict(), "verify": {"ok": ver["ok"], "passed_checks": ver["passed_checks"],
                                                 "total_checks": ver["total_checks"],
                                                 "failed": [c["name"] for c in ver["checks"] if not c["ok"]]},
               "removed": len(cfg.removed), "added": len(cfg.alive_added)}
    if log_.rounds:
        R_last = log_.rounds[-1].R + log_.rho_w
        run.figure(_plot("plot_scene"), "aperiodic_scene.png", cfg, radius=R_last + cfg.max_diameter,
                   highlight=[cfg.added[s] for s in cfg.alive_added])
    ok = log_.certifies() and ver["ok"]
    return payload, params, EXIT_OK if ok else EXIT_FAIL


COMMANDS = {
    "verify": cmd_verify,
    "simulate": cmd_simulate,
    "lyapunov": cmd_lyapunov,
    "singularities": cmd_singularities,
    "horizon": cmd_horizon,
    "neighbors": cmd_neighbors,
    "recur": cmd_recur,
    "birkhoff": cmd_birkhoff,
    "build-aperiodic": cmd_build_aperiodic,
}


def run_command(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    for flag in ("samples", "steps", "threads"):
        v = getattr(args, flag, None)
        if v is not None and v < (0 if flag == "steps" else 1):
            print(f"error: --{flag} must be positive", file=sys.stderr)
            return EXIT_INPUT
    try:
        text = Path(args.scene).read_text()
        scene_data = json.loads(text)
        config = io.scene_from_dict(scene_data)
    except OSError as exc:
        print(f"error: cannot read scene: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except json.JSONDecodeError as exc:
        print(f"error: scene is not valid JSON: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (SchemaError, SceneError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    run = Run(args, scene_data)
    try:
        payload, params, code = COMMANDS[args.command](args, config, run)
    except (InputError, SceneError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (SingularStep, HorizonExceeded) as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except LorentzGasError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    report = io.build_report(args.command, run.spec(params), args.seed, payload, exit_code=code)
    path = run.flush(report)
    print(f"{args.command}\t{'ok' if code == EXIT_OK else 'exit ' + str(code)}\t{path}")
    return code


def main(argv=None) -> None:
    sys.exit(run_command(argv))


if __name__ == "__main__":
    main()
