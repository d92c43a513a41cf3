"""Command-line entry point: ``conflow <subcommand> [--config PATH] [--seed N] [--out DIR]``."""

import argparse
import json
import os
import sys

import numpy as np

from . import bench
from .bands import RiskControllingBand
from .calibration import Filtration
from .cpd import BaseMeasure, CPDSpec, MixingMeasure, sample_cpd
from .datagen import GENERATORS, SPLITS
from .flow import FlowOptions, integrate_batch
from .io import load_config, read_csv, read_tensor, rows_to_csv, write_tensor
from .metrics import MetricConfig, energy_distance, lsd, patch_mmd, vendi_score
from .numerics import RngStream
from .repulsion import RepulsionOptions, repulse
from .scores import make_score

BENCHES = {
    "bench-convergence": "convergence",
    "bench-repulsion": "repulsion",
    "bench-bands": "bands",
    "audit-cpd": "cpd_audit",
}


class ConfigError(ValueError):
    pass


def _path(cfg, key, base):
    if key not in cfg:
        raise ConfigError(f"config is missing {key!r}")
    p = cfg[key] if os.path.isabs(cfg[key]) else os.path.join(base, cfg[key])
    if not os.path.exists(p):
        raise ConfigError(f"file for {key!r} not found: {p}")
    return p


def _tensor(cfg, key, base):
    return read_tensor(_path(cfg, key, base))


def _score(cfg, base):
    """Score from ``score``/``score_params``; fitted families use the
    ``fit_y_hat``/``fit_y`` pair, falling back to the calibration pair."""
    score = make_score(cfg.get("score", "l2"), **cfg.get("score_params", {}))
    if score.requires_fit:
        if "fit_y_hat" in cfg:
            score.fit(_tensor(cfg, "fit_y_hat", base), _tensor(cfg, "fit_y", base))
        else:
            score.fit(_tensor(cfg, "cal_y_hat", base), _tensor(cfg, "cal_y", base))
    return score


def _flow_opts(cfg):
    return FlowOptions(**cfg.get("flow", {}))


def _filtration(cfg, score, base):
    return Filtration.from_scores(
        np.atleast_1d(score.evaluate(_tensor(cfg, "cal_y_hat", base), _tensor(cfg, "cal_y", base)))
    )


def _write_csv(path, rows, cfg, seed):
    with open(path, "w") as f:
        f.write(rows_to_csv(rows, cfg, seed))


def cmd_datagen(cfg, seed, out, base):
    name = cfg.get("generator", "linear_gaussian")
    if name not in GENERATORS:
        raise ConfigError(f"unknown generator {name!r}")
    params = cfg.get("params", {})
    rows = []
    for split in cfg.get("splits", list(SPLITS)):
        ds = GENERATORS[name](seed=seed, split=split, **params)
        write_tensor(os.path.join(out, f"{split}_X.ncf"), ds.X)
        write_tensor(os.path.join(out, f"{split}_Y.ncf"), ds.Y)
        if "pred" in ds.extras:
            write_tensor(os.path.join(out, f"{split}_pred.ncf"), ds.extras["pred"])
        rows.append({"split": split, "n": len(ds), "x_shape": "x".join(map(str, ds.X.shape[1:])),
                     "y_shape": "x".join(map(str, ds.Y.shape[1:]))})
    _write_csv(os.path.join(out, "datagen.csv"), rows, cfg, seed)


def cmd_calibrate(cfg, seed, out, base):
    score = _score(cfg, base)
    filt = _filtration(cfg, score, base)
    alphas = cfg.get("alphas", [0.1])
    taus, clamped = filt.thresholds(alphas)
    rows = [{"alpha": a, "tau": t, "clamped": c, "n_cal": filt.n} for a, t, c in zip(alphas, taus, clamped)]
    _write_csv(os.path.join(out, "thresholds.csv"), rows, cfg, seed)


def cmd_sample_boundary(cfg, seed, out, base):
    score = _score(cfg, base)
    tau, _ = _filtration(cfg, score, base).threshold(cfg.get("alpha", 0.1))
    y_hat = _tensor(cfg, "y_hat", base)
    y0 = _tensor(cfg, "y0", base)
    streams = [RngStream(seed, i) for i in range(len(y0))]
    res = integrate_batch(score, y_hat, y0, tau, _flow_opts(cfg), streams)
    write_tensor(os.path.join(out, "terminal.ncf"), res.terminal)
    rows = [
        {"index": i, "tau": tau, "lambda": res.lambda_used[i], "converged": res.converged[i],
         "polish_steps": res.polish_steps_used[i], "final_error": res.final_error[i]}
        for i in range(len(res))
    ]
    _write_csv(os.path.join(out, "boundary.csv"), rows, cfg, seed)


def cmd_repulse(cfg, seed, out, base):
    score = _score(cfg, base)
    tau = cfg["tau"] if "tau" in cfg else _filtration(cfg, score, base).threshold(cfg.get("alpha", 0.1))[0]
    ropts = RepulsionOptions(cfg.get("steps", 50), cfg.get("step_size", 0.1))
    res = repulse(
        _tensor(cfg, "points", base), score, _tensor(cfg, "y_hat", base), tau, ropts,
        _flow_opts(cfg), RngStream(seed, 0).generator(),
    )
    write_tensor(os.path.join(out, "repulsed.ncf"), res.points)
    rows = [{"round": k, "min_distance": d} for k, d in enumerate(res.min_distance_trace)]
    _write_csv(os.path.join(out, "repulsion.csv"), rows, cfg, seed)


def cmd_sample_cpd(cfg, seed, out, base):
    score = _score(cfg, base)
    filt = _filtration(cfg, score, base)
    kind, a, b = cfg.get("mixing", ["uniform", 0.0, 1.0])
    mixing = MixingMeasure.uniform() if kind == "uniform" else MixingMeasure.uniform_range(a, b)
    if cfg.get("base", "empirical") == "empirical":
        bm = BaseMeasure.empirical(_tensor(cfg, "cal_y", base), cfg.get("jitter", 0.0))
    else:
        bm = BaseMeasure.gaussian(cfg.get("jitter", 1.0))
    spec = CPDSpec(score, filt, bm, mixing, _tensor(cfg, "y_hat", base), _flow_opts(cfg))
    res = sample_cpd(spec, cfg.get("samples", 1000), seed)
    write_tensor(os.path.join(out, "cpd_samples.ncf"), res.points)
    rows = [
        {"index": i, "alpha": res.alpha[i], "tau": res.tau[i], "clamped": res.clamped[i],
         "converged": res.converged[i], "score": res.scores[i]}
        for i in range(len(res.alpha))
    ]
    _write_csv(os.path.join(out, "cpd_samples.csv"), rows, cfg, seed)


def cmd_band(cfg, seed, out, base):
    est = RiskControllingBand(cfg.get("alpha", 0.1), cfg.get("delta", 0.0), cfg.get("mode", "symmetric"))
    est.fit(_tensor(cfg, "cal_samples", base), _tensor(cfg, "cal_y", base))
    lower, upper = est.predict(_tensor(cfg, "test_samples", base))
    write_tensor(os.path.join(out, "lower.ncf"), lower)
    write_tensor(os.path.join(out, "upper.ncf"), upper)
    row = {"alpha": est.alpha, "delta": est.delta, "mode": est.mode, "eta_lo": est.eta_lo_, "eta_hi": est.eta_hi_}
    if "test_y" in cfg:
        row["coverage"] = est.score(_tensor(cfg, "test_samples", base), _tensor(cfg, "test_y", base))
    _write_csv(os.path.join(out, "band.csv"), [row], cfg, seed)


def cmd_metrics(cfg, seed, out, base):
    samples = _tensor(cfg, "samples", base)
    target = _tensor(cfg, "target", base)
    row = {"energy_distance": energy_distance(samples, target), "vendi": vendi_score(samples)}
    if target.ndim in (2, 3):
        row["lsd"] = lsd(samples, target)
        mc = cfg.get("metric", {})
        row["patch_mmd"] = patch_mmd(samples, target, MetricConfig(**mc))
    _write_csv(os.path.join(out, "metrics.csv"), [row], cfg, seed)


def cmd_bench(kind, cfg, seed, out, full_scale):
    cfg = bench.resolve_config(kind, cfg, full_scale)
    rows = bench.RUNNERS[kind](cfg, seed)
    csv_path = os.path.join(out, f"{kind}.csv")
    _write_csv(csv_path, rows, cfg, seed)
    with open(os.path.join(out, f"{kind}.config.json"), "w") as f:
        json.dump(cfg, f, indent=2, sort_keys=True)
    bench.plot_csv(kind, read_csv(csv_path), os.path.join(out, f"{kind}.svg"))
    return csv_path


COMMANDS = {
    "datagen": cmd_datagen,
    "calibrate": cmd_calibrate,
    "sample-boundary": cmd_sample_boundary,
    "repulse": cmd_repulse,
    "sample-cpd": cmd_sample_cpd,
    "band": cmd_band,
    "metrics": cmd_metrics,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="conflow", description="Conformal boundary sampling toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in list(COMMANDS) + list(BENCHES):
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="root seed (default: config 'seed' or 0)")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--full-scale", action="store_true", help="use the full-size experiment grid")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else {}
    except (OSError, ValueError) as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2
    base = os.path.dirname(os.path.abspath(args.config)) if args.config else os.getcwd()
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    if seed < 0:
        print("error: seed must be nonnegative", file=sys.stderr)
        return 2
    os.makedirs(args.out, exist_ok=True)
    try:
        if args.command in BENCHES:
            path = cmd_bench(BENCHES[args.command], cfg, seed, args.out, args.full_scale)
        else:
            COMMANDS[args.command](cfg, seed, args.out, base)
            path = args.out
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"{args.command}: wrote {path} (seed {seed})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
