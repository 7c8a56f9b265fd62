"""``legodo`` command line: simulate datasets, run the estimator, evaluate trajectories.

Exit codes: 0 ok, 1 usage, 2 data or config error, 3 numerical failure.
Verbosity comes from the ``LEGODO_LOG`` environment variable (default WARNING).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, load_config
from .dataset_io import DataError, read_trajectory, write_dataset
from .eskf import RejectedSample
from .gait_sim import SimConfigError, simulate
from .metrics import MetricError, associate, evaluate
from .pipeline import Detector, NumericalFailure, run_dataset

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

log = logging.getLogger("legodo")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ----------------------------------------------------------------- commands


def cmd_sim(config_path, out_dir, seed: int | None = None) -> int:
    cfg = load_config(config_path)
    sim_cfg = cfg.sim if seed is None else dataclasses.replace(cfg.sim, rng_seed=seed)
    sim = simulate(sim_cfg, cfg.legs)
    write_dataset(sim, out_dir)
    log.info("wrote %d samples to %s", sim.t.size, out_dir)
    return EXIT_OK


def cmd_run(dataset_dir, config_path, out_dir, detector: str = "fused",
            sigma_base: float | None = None) -> int:
    cfg = load_config(config_path)
    run_dataset(dataset_dir, cfg, out_dir, detector, sigma_base)
    return EXIT_OK


def _json_safe(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _json_safe(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_json_safe(v) for v in x]
    return x


def _svg(est_xy: np.ndarray, gt_xy: np.ndarray, size: int = 600, margin: int = 20) -> str:
    pts = np.vstack([est_xy, gt_xy])
    lo = pts.min(axis=0)
    span = max(float((pts.max(axis=0) - lo).max()), 1e-9)
    scale = (size - 2 * margin) / span

    def poly(xy, color):
        u = margin + (xy[:, 0] - lo[0]) * scale
        v = size - margin - (xy[:, 1] - lo[1]) * scale
        coords = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(u, v))
        return f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>'

    return "\n".join([
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        '<rect width="100%" height="100%" fill="white"/>',
        poly(gt_xy, "black"),
        poly(est_xy, "red"),
        '<text x="10" y="16" font-size="12" fill="black">ground truth</text>',
        '<text x="10" y="32" font-size="12" fill="red">estimate</text>',
        "</svg>",
        "",
    ])


def cmd_eval(est_path, gt_path, out_path, svg_path=None, config_path=None,
             align: str | None = None) -> int:
    """Write the metric report JSON to ``out_path`` and the plot CSV next to it."""
    cfg = load_config(config_path)
    mc = cfg.metrics
    est = read_trajectory(est_path)
    gt = read_trajectory(gt_path)
    if len(est) < 2 or len(gt) < 2:
        raise MetricError("both trajectories need at least 2 poses")
    align = mc.align if align is None else align
    rep = evaluate(est, gt, max_dt=mc.max_dt, delta_m=mc.delta_m, align=align,
                   frechet_max_points=mc.frechet_max_points)
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(_json_safe(rep.to_dict()), indent=2, sort_keys=True) + "\n")

    pairs = associate(est, gt, mc.max_dt)
    pe = est.p[pairs[:, 0]]
    pg = gt.p[pairs[:, 1]]
    err = np.linalg.norm(pe - pg, axis=1)
    plot = out.with_name(out.stem + "_plot.csv")
    with open(plot, "w") as fh:
        fh.write("t,ate_t,x_est,y_est,x_gt,y_gt\n")
        for t, e, a, b in zip(gt.t[pairs[:, 1]], err, pe, pg):
            fh.write("%.6f,%.17g,%.17g,%.17g,%.17g,%.17g\n" % (t, e, a[0], a[1], b[0], b[1]))
    if svg_path:
        Path(svg_path).write_text(_svg(pe[:, :2], pg[:, :2]))
    return EXIT_OK


# ----------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="legodo", description="Proprioceptive leg odometry tools.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("sim", help="simulate a gait and write a dataset directory")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=None, help="overrides sim.rng_seed")

    r = sub.add_parser("run", help="run the estimator over a dataset directory")
    r.add_argument("dataset")
    r.add_argument("--config", default=None)
    r.add_argument("--out", required=True)
    r.add_argument("--detector", choices=[d.value for d in Detector], default="fused")
    r.add_argument("--sigma-base", type=float, default=None)

    e = sub.add_parser("eval", help="compare an estimated trajectory against ground truth")
    e.add_argument("est")
    e.add_argument("gt")
    e.add_argument("--out", required=True, help="metric report JSON path")
    e.add_argument("--config", default=None)
    e.add_argument("--svg", default=None, help="optional 2-D overlay SVG path")
    e.add_argument("--align", choices=["none", "initial", "se3"], default=None)
    return p


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("LEGODO_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        if args.command == "sim":
            return cmd_sim(args.config, args.out, args.seed)
        if args.command == "run":
            if args.sigma_base is not None and not args.sigma_base > 0.0:
                print("legodo: error: --sigma-base must be positive", file=sys.stderr)
                return EXIT_USAGE
            return cmd_run(args.dataset, args.config, args.out, args.detector, args.sigma_base)
        return cmd_eval(args.est, args.gt, args.out, args.svg, args.config, args.align)
    except NumericalFailure as exc:
        print(f"legodo: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, SimConfigError, DataError, MetricError, RejectedSample, OSError) as exc:
        print(f"legodo: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
