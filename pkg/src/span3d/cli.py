"""``span3d`` command line.

Exit codes: 0 success, 1 usage or config error, 2 I/O or input-format error,
3 failed ``--check``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from span3d import autodiff, htl, kitti
from span3d.config import RunConfig, default_config_json, load_config
from span3d.errors import ConfigError, InvalidArgumentError, ParseError, Span3DError
from span3d.fit import fit_box, perturb_box, run_fit_suite, sampler_rng, scene_problem, trend_ok
from span3d.geom3d import Box3D
from span3d.kitti import KITTI_P2
from span3d.losses import Rect2D, perturb_rect, projected_enclosing_rect

log = logging.getLogger("span3d")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_CHECK = 0, 1, 2, 3

GRAD_TOL = 1e-5
CONVERGENCE_RATE = 0.95
DEVIATION_MEAN_PX = 1.0
DEVIATION_V_MAX_PX = 5.0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


_GLOBAL_DEFAULTS = {"seed": None, "config": None, "out": Path("."), "check": False}


class _CheckFailed(Exception):
    pass


def _floats(n: int):
    def parse(text: str) -> tuple:
        try:
            vals = tuple(float(v) for v in text.split(","))
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected {n} comma-separated numbers") from None
        if len(vals) != n:
            raise argparse.ArgumentTypeError(f"expected {n} comma-separated numbers, got {len(vals)}")
        return vals

    return parse


def _write(out: Path, name: str, text: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(text)
    return path


def _json(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


# -- subcommands -----------------------------------------------------------------


def cmd_fit(args, cfg: RunConfig) -> int:
    fc = cfg.fit
    if args.gt is None:
        prob = scene_problem(fc, args.scene, fc.noise_px)
        init, gt, K, rect = prob.init, prob.gt, prob.K, prob.rect
        rng = sampler_rng(fc, args.scene)
    else:
        K = KITTI_P2
        gt = Box3D.from_params(args.gt)
        if args.init:
            init = Box3D.from_params(args.init)
        else:
            init = perturb_box(gt, fc, np.random.default_rng([fc.seed, 1]))
        if args.rect:
            rect = Rect2D(*args.rect)
        else:
            rect = projected_enclosing_rect(gt, K)
            if fc.noise_px > 0:
                rect = perturb_rect(rect, fc.noise_px, np.random.default_rng([fc.seed, 2]))
        rng = np.random.default_rng([fc.seed, 3])
    res = fit_box(init, gt, K, rect, fc, rng=rng)
    doc = {
        "gt": list(gt.params()),
        "init": list(init.params()),
        "rect": list(rect.as_tuple()),
        "box": list(res.box.params()),
        "rmse": res.rmse,
        "iterations": res.iterations,
        "converged": res.converged,
        "stop_reason": res.stop_reason,
        "final_loss": res.trajectory[-1],
    }
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("iteration", "loss"))
    for i, v in enumerate(res.trajectory):
        w.writerow((i, repr(v)))
    _write(args.out, "fit.json", _json(doc))
    _write(args.out, "trajectory.csv", buf.getvalue())
    print(f"rmse={res.rmse:.6g} m iterations={res.iterations} converged={res.converged}")
    if args.check and not res.converged:
        raise _CheckFailed(f"fit did not converge (rmse {res.rmse:.4g} m)")
    return EXIT_OK


def cmd_suite(args, cfg: RunConfig) -> int:
    n = args.n_scenes or cfg.suite.n_scenes
    workers = args.workers or cfg.suite.workers
    report = run_fit_suite(cfg.fit, n, workers=workers)
    _write(args.out, "suite.json", report.to_json())
    _write(args.out, "suite.csv", report.to_csv())
    summary = report.summary()
    for s in summary:
        print(
            f"noise={s['noise_px']:g}px convergence={s['convergence_rate']:.3f} "
            f"median_rmse={s['median_rmse']:.4g} m"
        )
    if args.check:
        problems = []
        if summary[0]["noise_px"] == 0 and summary[0]["convergence_rate"] < CONVERGENCE_RATE:
            problems.append(f"convergence rate {summary[0]['convergence_rate']:.3f} at 0 px")
        if not all(s["all_monotone"] for s in summary):
            problems.append("non-monotone loss trajectory")
        if len(summary) > 1 and not trend_ok(report):
            problems.append("median RMSE not increasing with noise")
        if problems:
            raise _CheckFailed("; ".join(problems))
    return EXIT_OK


def cmd_htl_replay(args, cfg: RunConfig) -> int:
    histories = htl.read_history_csv(Path(args.history).read_text())
    graph = cfg.dag.graph
    steps = htl.replay(histories, graph, cfg.dag.window, cfg.dag.total_epochs)
    _write(args.out, "weights.csv", htl.trace_csv(steps, graph))
    print(f"{len(steps)} epochs x {len(graph)} tasks")
    if args.check:
        last = steps[-1]
        if last.epoch == (cfg.dag.total_epochs or last.epoch):
            bad = [t for t, w in last.omega.items() if w != 1.0]
            if bad:
                raise _CheckFailed(f"final-epoch weight != 1 for {', '.join(bad)}")
    return EXIT_OK


def cmd_deviation_stats(args, cfg: RunConfig) -> int:
    for d in (args.label_dir, args.calib_dir):
        if not Path(d).is_dir():
            raise FileNotFoundError(f"not a directory: {d}")
    items, warnings = kitti.load_kitti_dir(args.label_dir, args.calib_dir)
    samples = [kitti.deviation_samples(recs, K, cfg.filters) for _, recs, K in items]
    stats = kitti.stats_from_samples(np.vstack(samples) if samples else np.empty((0, 4)))
    doc = stats.summary()
    doc["warnings"] = len(warnings)
    doc["files"] = len(items)
    _write(args.out, "deviation.json", _json(doc))
    _write(args.out, "deviation.csv", stats.to_csv())
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"{stats.n} objects from {len(items)} files, {len(warnings)} warning(s)")
    if args.check:
        e = stats.edges
        means = [h.mean for h in e.values()]
        vmax = max(abs(e[k].min) for k in ("dv_min", "dv_max"))
        vmax = max(vmax, *(abs(e[k].max) for k in ("dv_min", "dv_max")))
        if max(abs(m) for m in means) >= DEVIATION_MEAN_PX or vmax > DEVIATION_V_MAX_PX:
            raise _CheckFailed(f"deviation means {means}, max |dv| {vmax:.3g}")
    return EXIT_OK


def cmd_grad_check(args, cfg: RunConfig) -> int:
    losses = [autodiff.LossId(args.loss)] if args.loss != "all" else [
        autodiff.LossId.SPATIAL, autodiff.LossId.PROJECTION, autodiff.LossId.DEPTH
    ]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("loss", "instance", "max_rel_err", "tie"))
    summary = {}
    for k, lid in enumerate(losses):
        rng = np.random.default_rng([args.seed, k])
        worst = 0.0
        for i in range(args.n_instances):
            rep = autodiff.finite_diff_check(lid, autodiff.random_instance(lid, rng), args.eps)
            worst = max(worst, rep.max_rel_err)
            w.writerow((lid.value, i, repr(rep.max_rel_err), int(rep.tie_flag)))
        summary[lid.value] = {"n": args.n_instances, "max_rel_err": worst, "passed": worst <= args.tol}
        print(f"{lid.value}: max rel err {worst:.3g} over {args.n_instances} instances")
    _write(args.out, "grad_check.csv", buf.getvalue())
    _write(args.out, "grad_check.json", _json({"eps": args.eps, "tol": args.tol, "losses": summary}))
    if args.check and not all(s["passed"] for s in summary.values()):
        raise _CheckFailed("gradient check above tolerance")
    return EXIT_OK


def cmd_config_defaults(args, cfg: RunConfig) -> int:
    sys.stdout.write(default_config_json())
    return EXIT_OK


# -- entry -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    # SUPPRESS so a flag given before the subcommand is not reset by the subparser
    common = _Parser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--seed", type=int, help="overrides fit.seed (default 0)")
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--out", type=Path, help="output directory (default .)")
    common.add_argument("--check", action="store_true", help="exit 3 if the acceptance check fails")

    p = _Parser(prog="span3d", description=__doc__.splitlines()[0], parents=[common])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    f = sub.add_parser("fit", parents=[common], help="fit one box")
    f.add_argument("--scene", type=int, default=0, help="synthetic scene index")
    f.add_argument("--gt", type=_floats(7), help="cx,cy,cz,l,h,w,ry (replaces the synthetic scene)")
    f.add_argument("--init", type=_floats(7), help="initial box, defaults to a perturbed gt")
    f.add_argument("--rect", type=_floats(4), help="umin,umax,vmin,vmax, defaults to the gt projection")
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("suite", parents=[common], help="noise sweep over synthetic scenes")
    s.add_argument("--n-scenes", type=int, default=None)
    s.add_argument("--workers", type=int, default=None)
    s.set_defaults(func=cmd_suite)

    h = sub.add_parser("htl-replay", parents=[common], help="replay a loss history through HTL")
    h.add_argument("history", help="CSV with columns epoch,task_id,mean_loss")
    h.set_defaults(func=cmd_htl_replay)

    d = sub.add_parser("deviation-stats", parents=[common], help="projection deviation histograms")
    d.add_argument("label_dir")
    d.add_argument("calib_dir")
    d.set_defaults(func=cmd_deviation_stats)

    g = sub.add_parser("grad-check", parents=[common], help="analytic vs finite-difference gradients")
    g.add_argument("--loss", choices=["all", "spatial", "projection", "depth"], default="all")
    g.add_argument("--n-instances", type=int, default=100)
    g.add_argument("--eps", type=float, default=autodiff.FD_EPS)
    g.add_argument("--tol", type=float, default=GRAD_TOL)
    g.set_defaults(func=cmd_grad_check)

    c = sub.add_parser("config-defaults", parents=[common], help="print the default config JSON")
    c.set_defaults(func=cmd_config_defaults)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    for name, default in _GLOBAL_DEFAULTS.items():
        if not hasattr(args, name):
            setattr(args, name, default)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = RunConfig(
                fit=type(cfg.fit).from_dict({**cfg.fit.to_dict(), "seed": args.seed}),
                dag=cfg.dag,
                filters=cfg.filters,
                suite=cfg.suite,
            )
        else:
            args.seed = cfg.fit.seed
        return args.func(args, cfg)
    except _CheckFailed as e:
        print(f"check failed: {e}", file=sys.stderr)
        return EXIT_CHECK
    except (ConfigError, InvalidArgumentError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ParseError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except Span3DError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
