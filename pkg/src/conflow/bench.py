"""Benchmark drivers that emit CSV rows, plus SVG plots drawn from those CSVs.

Every driver takes a resolved config dict and a root seed; randomness is
derived from ``(seed, cell key)`` so rows do not depend on scheduling.
"""

import copy
import zlib

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .bands import Band, RiskControllingBand, envelope, pointwise_risk
from .calibration import Filtration
from .cpd import BaseMeasure, CPDSpec, MixingMeasure, coverage_audit, sample_cpd
from .datagen import (
    fit_ridge,
    gen_gp1d,
    gen_gp2d,
    gen_gp2d_downscale,
    gen_linear_gaussian,
    gen_linear_student_t,
)
from .flow import FlowOptions, integrate_batch
from .metrics import vendi_ratio
from .numerics import RngStream, parallel_map
from .repulsion import RepulsionOptions, repulse
from .scores import make_score

_FLOW = {"steps": 20, "horizon": 1.0, "tol": 1e-6, "max_polish_steps": 200}

DEFAULTS = {
    "convergence": {
        "n": 500,
        "alphas": [0.05, 0.1, 0.2],
        "flows_per_cell": 100,
        "ridge": 1e-3,
        "start_noise": 1.0,
        "vector_tasks": ["iso_gaussian", "student_t"],
        "dims": [5, 10, 25, 50, 100],
        "vector_scores": ["l2", "l1", "huber", "knn", "gauss", "student_t"],
        "field_tasks": ["gp2d", "gp2d_downscale"],
        "field_size": 32,
        "lengths": [0.05, 0.1, 0.2],
        "field_scores": ["field_l2", "sobolev", "psd", "wavelet"],
        "score_params": {"wavelet": {"depth": 3}},
        "flow": _FLOW,
    },
    "repulsion": {
        "n": 500,
        "dims": [10, 25, 50, 100],
        "n_points": 200,
        "sims": 5,
        "alpha": 0.1,
        "steps": 50,
        "step_size": 0.1,
        "ridge": 1e-3,
        "flow": _FLOW,
    },
    "bands": {
        "variants": ["symmetric", "asym", "bias_mu", "bias_mu_sigma"],
        "n_train": 500,
        "n_cal": 500,
        "n_test": 500,
        "n_base": 500,
        "p": 128,
        "samples_per_input": 30,
        "alpha": 0.1,
        "delta": 0.0,
        "reps": 5,
        "ridge": 1e-3,
        "flow": _FLOW,
    },
    "cpd_audit": {
        "p": 10,
        "n": 500,
        "samples": 20000,
        "betas": [0.1, 0.3, 0.5, 0.7, 0.9],
        "mixings": [["uniform", 0.0, 1.0], ["range", 0.0, 0.1], ["range", 0.9, 1.0]],
        "ridge": 1e-3,
        "flow": _FLOW,
    },
}

FULL_SCALE = {
    "convergence": {"n": 1000, "dims": list(range(10, 101, 10)), "flows_per_cell": 200},
    "repulsion": {"n_points": 1000, "sims": 25},
    "bands": {"p": 256, "samples_per_input": 200, "reps": 1},
    "cpd_audit": {"samples": 100000},
}


def _merge(base, override):
    out = copy.deepcopy(base)
    for k, v in (override or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve_config(kind, user=None, full_scale=False):
    if kind not in DEFAULTS:
        raise ValueError(f"unknown experiment {kind!r}")
    cfg = DEFAULTS[kind]
    if full_scale:
        cfg = _merge(cfg, FULL_SCALE[kind])
    cfg = _merge(cfg, user)
    cfg["experiment"] = kind
    for a in cfg.get("alphas", []) + [cfg.get("alpha", 0.5)]:
        if not 0 < a < 1:
            raise ValueError(f"alpha {a} outside (0, 1)")
    return cfg


def derive_seed(root, *parts):
    """63-bit seed addressed by ``root`` and a tuple of hashable labels."""
    key = tuple(zlib.crc32(str(p).encode()) for p in parts)
    state = np.random.SeedSequence(int(root), spawn_key=key).generate_state(2, np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


def _flow_options(cfg):
    return FlowOptions(**cfg["flow"])


def build_score(family, params, y_hat_fit, y_fit):
    score = make_score(family, **(params or {}))
    if score.requires_fit:
        score.fit(y_hat_fit, y_fit)
    return score


# --- convergence ------------------------------------------------------------


def _convergence_data(task, value, n, seed):
    if task == "iso_gaussian":
        return [gen_linear_gaussian(int(value), n, seed, s) for s in ("train", "cal", "test")]
    if task == "student_t":
        return [gen_linear_student_t(int(value), n, seed, s) for s in ("train", "cal", "test")]
    raise ValueError(f"unknown task {task!r}")


def _field_data(task, length, n, size, seed):
    if task == "gp2d":
        return [gen_gp2d(n, size, seed, s, ly=length) for s in ("train", "cal", "test")]
    if task == "gp2d_downscale":
        return [gen_gp2d_downscale(n, size, seed, s, length=length) for s in ("train", "cal", "test")]
    raise ValueError(f"unknown task {task!r}")


def _convergence_group(cfg, seed, task, param_name, value, scores):
    gseed = derive_seed(seed, "convergence", task, value)
    if param_name == "dim":
        train, cal, test = _convergence_data(task, value, cfg["n"], gseed)
    else:
        train, cal, test = _field_data(task, value, cfg["n"], cfg["field_size"], gseed)
    model = fit_ridge(train, cfg["ridge"])
    yh_train, yh_cal = model.predict(train.X), model.predict(cal.X)
    M = min(cfg["flows_per_cell"], len(test), len(cal))
    opts = _flow_options(cfg)
    # start perturbations are measured in units of the calibration residual RMS
    noise = cfg["start_noise"] * float(np.sqrt(np.mean((cal.Y - yh_cal) ** 2)))
    rows = []
    for family in scores:
        params = cfg.get("score_params", {}).get(family, {})
        score = build_score(family, params, yh_train, train.Y)
        filt = Filtration.from_scores(score.evaluate(yh_cal, cal.Y))
        for alpha in cfg["alphas"]:
            cseed = derive_seed(gseed, family, alpha)
            rng = RngStream(cseed, 0).generator()
            idx = rng.choice(len(cal), size=M, replace=False)
            y0 = cal.Y[idx] + noise * rng.standard_normal((M,) + cal.Y.shape[1:])
            tau, clamped = filt.threshold(alpha)
            streams = [RngStream(cseed, i + 1) for i in range(M)]
            try:
                res = integrate_batch(score, yh_cal[idx], y0, tau, opts, streams)
            except Exception as exc:
                raise RuntimeError(f"cell ({task}, {value}, {family}, {alpha}) failed: {exc}") from exc
            rk = res.rk_error
            final = res.final_error
            rows.append(
                {
                    "task": task,
                    "score": family,
                    "param": param_name,
                    "value": value,
                    "alpha": alpha,
                    "n_flows": M,
                    "tau": tau,
                    "clamped": clamped,
                    "mean_log10_err_rk": float(np.mean(np.log10(np.maximum(rk, 1e-300)))),
                    "mean_err_rk": float(np.mean(rk)),
                    "mean_err_final": float(np.mean(final)),
                    "max_err_final": float(np.max(final)),
                    "converged_frac": float(np.mean(res.converged)),
                    "within_tol": bool(np.mean(final) <= opts.tol),
                    "vendi_ratio": vendi_ratio(res.terminal, test.Y[:M]),
                }
            )
    return rows


def run_convergence_bench(cfg, seed):
    groups = [("dim", t, d, cfg["vector_scores"]) for t in cfg["vector_tasks"] for d in cfg["dims"]]
    groups += [("length", t, ell, cfg["field_scores"]) for t in cfg["field_tasks"] for ell in cfg["lengths"]]
    parts = parallel_map(lambda g: _convergence_group(cfg, seed, g[1], g[0], g[2], g[3]), groups)
    return [r for part in parts for r in part]


# --- repulsion --------------------------------------------------------------


def _nn_stats(points):
    D = squareform(pdist(points.reshape(len(points), -1)))
    np.fill_diagonal(D, np.inf)
    nn = D.min(axis=1)
    return float(nn.min()), float(nn.mean())


def _repulsion_dim(cfg, seed, p):
    pseed = derive_seed(seed, "repulsion", p)
    train, cal, test = (gen_linear_gaussian(p, cfg["n"], pseed, s) for s in ("train", "cal", "test"))
    model = fit_ridge(train, cfg["ridge"])
    score = make_score("l2")
    tau, _ = Filtration.from_scores(score.evaluate(model.predict(cal.X), cal.Y)).threshold(cfg["alpha"])
    opts = _flow_options(cfg)
    ropts = RepulsionOptions(cfg["steps"], cfg["step_size"])
    stats = []
    for sim in range(cfg["sims"]):
        sseed = derive_seed(pseed, sim)
        rng = RngStream(sseed, 0).generator()
        yh = model.predict(test.X[sim : sim + 1])[0]
        B = cfg["n_points"]
        y0 = yh + np.sqrt(p) + rng.standard_normal((B, p))
        streams = [RngStream(sseed, i + 1) for i in range(B)]
        naive = integrate_batch(score, yh, y0, tau, opts, streams)
        if not naive.converged.all():
            raise RuntimeError(f"naive flow did not converge at p={p}, sim={sim}")
        rep = repulse(naive.terminal, score, yh, tau, ropts, opts, RngStream(sseed, 0).child(7).generator())
        err = np.abs(score.evaluate(np.broadcast_to(yh, rep.points.shape), rep.points) - tau)
        stats.append(_nn_stats(naive.terminal) + _nn_stats(rep.points) + (float(err.max()),))
    s = np.array(stats)
    return {
        "p": p,
        "n_points": cfg["n_points"],
        "sims": cfg["sims"],
        "steps": cfg["steps"],
        "naive_min_dist": s[:, 0].mean(),
        "repulsed_min_dist": s[:, 2].mean(),
        "ratio": s[:, 2].mean() / s[:, 0].mean(),
        "naive_mean_nn": s[:, 1].mean(),
        "repulsed_mean_nn": s[:, 3].mean(),
        "max_abs_err": s[:, 4].max(),
    }


def run_repulsion_bench(cfg, seed):
    return parallel_map(lambda p: _repulsion_dim(cfg, seed, p), cfg["dims"])


# --- bands ------------------------------------------------------------------


def _sample_banks(score, y_hat, bank, tau, M, opts, seed):
    n = len(y_hat)
    rng = RngStream(seed, 0).generator()
    idx = rng.integers(len(bank), size=(n, M))
    y0 = bank[idx].reshape((n * M,) + bank.shape[1:])
    yh = np.repeat(y_hat, M, axis=0)
    streams = [RngStream(seed, i + 1) for i in range(n * M)]
    res = integrate_batch(score, yh, y0, tau, opts, streams)
    return res.terminal.reshape((n, M) + bank.shape[1:]), float(np.mean(res.converged))


def _band_rep(cfg, seed, variant, rep):
    vseed = derive_seed(seed, "bands", variant, rep)
    p = cfg["p"]
    train = gen_gp1d(cfg["n_train"], p, vseed, "train", variant)
    cal = gen_gp1d(cfg["n_cal"], p, vseed, "cal", variant)
    test = gen_gp1d(cfg["n_test"], p, vseed, "test", variant)
    base = gen_gp1d(cfg["n_base"], p, vseed, "extra", variant)
    model = fit_ridge(train, cfg["ridge"])
    score = make_score("l2")
    alpha, delta = cfg["alpha"], cfg["delta"]
    tau, _ = Filtration.from_scores(score.evaluate(model.predict(base.X), base.Y)).threshold(alpha)
    opts = _flow_options(cfg)
    M = cfg["samples_per_input"]
    cal_banks, c1 = _sample_banks(score, model.predict(cal.X), base.Y, tau, M, opts, derive_seed(vseed, "cal"))
    test_banks, c2 = _sample_banks(score, model.predict(test.X), base.Y, tau, M, opts, derive_seed(vseed, "test"))

    out = {}
    raw = [Band(*envelope(b, alpha / 2, 1 - alpha / 2)) for b in test_banks]
    out["sample"] = (
        float(np.mean([pointwise_risk(b, y) <= delta for b, y in zip(raw, test.Y)])),
        float(np.median([b.width.mean() for b in raw])),
        0.0,
        0.0,
    )
    for method, mode in (("reconf", "symmetric"), ("reconf_asym", "asymmetric")):
        est = RiskControllingBand(alpha, delta, mode).fit(cal_banks, cal.Y)
        bands = est.predict_bands(test_banks)
        out[method] = (
            est.score(test_banks, test.Y),
            float(np.median([b.width.mean() for b in bands])),
            est.eta_lo_,
            est.eta_hi_,
        )
    return out, min(c1, c2)


def run_band_bench(cfg, seed):
    jobs = [(v, r) for v in cfg["variants"] for r in range(cfg["reps"])]
    results = parallel_map(lambda j: _band_rep(cfg, seed, *j), jobs)
    rows = []
    for v in cfg["variants"]:
        reps = [res for (vv, _), res in zip(jobs, results) if vv == v]
        for method in ("sample", "reconf", "reconf_asym"):
            vals = np.array([r[0][method] for r in reps])
            rows.append(
                {
                    "variant": v,
                    "method": method,
                    "alpha": cfg["alpha"],
                    "delta": cfg["delta"],
                    "reps": len(reps),
                    "coverage": float(vals[:, 0].mean()),
                    "coverage_min": float(vals[:, 0].min()),
                    "median_width": float(vals[:, 1].mean()),
                    "eta_lo": float(vals[:, 2].mean()),
                    "eta_hi": float(vals[:, 3].mean()),
                    "flow_converged_frac": float(min(r[1] for r in reps)),
                }
            )
    return rows


# --- CPD audit --------------------------------------------------------------


def _mixing(spec):
    kind, a, b = spec
    return MixingMeasure.uniform() if kind == "uniform" else MixingMeasure.uniform_range(a, b)


def _audit_mixing(cfg, seed, j, spec, filt, score, base, yh):
    mixing = _mixing(spec)
    cspec = CPDSpec(score, filt, base, mixing, yh, _flow_options(cfg))
    samples = sample_cpd(cspec, cfg["samples"], derive_seed(seed, "cpd_audit", j))
    tol = cfg["flow"]["tol"]
    rows = []
    for r in coverage_audit(samples.scores, filt, cfg["betas"], mixing, tol):
        se = np.sqrt(max(r.target * (1 - r.target), 1e-300) / r.n_used)
        rows.append(
            {
                "mixing": f"{spec[0]}({spec[1]},{spec[2]})",
                "beta": r.beta,
                "coverage": r.coverage,
                "target": r.target,
                "z": (r.coverage - r.target) / se if r.target * (1 - r.target) > 0 else 0.0,
                "clamped_frac": float(np.mean(samples.clamped)),
                "converged_frac": float(np.mean(samples.converged)),
                "samples": r.n_used,
            }
        )
    return rows


def run_cpd_audit(cfg, seed):
    dseed = derive_seed(seed, "cpd_audit_data")
    train, cal, test = (gen_linear_gaussian(cfg["p"], cfg["n"], dseed, s) for s in ("train", "cal", "test"))
    model = fit_ridge(train, cfg["ridge"])
    score = make_score("l2")
    filt = Filtration.from_scores(score.evaluate(model.predict(cal.X), cal.Y))
    base = BaseMeasure.empirical(cal.Y)
    yh = model.predict(test.X[:1])[0]
    parts = parallel_map(
        lambda js: _audit_mixing(cfg, seed, js[0], js[1], filt, score, base, yh),
        list(enumerate(cfg["mixings"])),
    )
    return [r for part in parts for r in part]


RUNNERS = {
    "convergence": run_convergence_bench,
    "repulsion": run_repulsion_bench,
    "bands": run_band_bench,
    "cpd_audit": run_cpd_audit,
}


# --- plots ------------------------------------------------------------------


def _figure():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "conflow"
    return plt


def plot_csv(kind, rows, path):
    """Write an SVG summary of CSV ``rows`` (dicts of strings) to ``path``."""
    plt = _figure()
    fig, ax = plt.subplots(figsize=(6, 4))
    if kind == "convergence":
        keys = sorted({(r["task"], r["score"]) for r in rows})
        for task, fam in keys:
            sel = [r for r in rows if r["task"] == task and r["score"] == fam]
            xs = sorted({float(r["value"]) for r in sel})
            ys = [
                np.mean([float(r["mean_log10_err_rk"]) for r in sel if float(r["value"]) == x])
                for x in xs
            ]
            ax.plot(xs, ys, marker="o", label=f"{task}/{fam}")
        ax.axhline(np.log10(1e-6), color="k", lw=1)
        ax.set_xlabel("dimension or length scale")
        ax.set_ylabel("mean log10 |S - tau| after RK phase")
        ax.legend(fontsize=5, ncol=2)
    elif kind == "repulsion":
        ps = [float(r["p"]) for r in rows]
        ax.plot(ps, [float(r["naive_min_dist"]) for r in rows], marker="o", label="naive")
        ax.plot(ps, [float(r["repulsed_min_dist"]) for r in rows], marker="s", label="repulsed")
        ax.set_xlabel("p")
        ax.set_ylabel("min pairwise distance")
        ax.legend()
    elif kind == "bands":
        variants = list(dict.fromkeys(r["variant"] for r in rows))
        methods = list(dict.fromkeys(r["method"] for r in rows))
        width = 0.8 / len(methods)
        for k, m in enumerate(methods):
            cov = [float(next(r for r in rows if r["variant"] == v and r["method"] == m)["coverage"]) for v in variants]
            ax.bar(np.arange(len(variants)) + k * width, cov, width, label=m)
        ax.axhline(0.9, color="k", lw=1)
        ax.set_xticks(np.arange(len(variants)) + 0.4 - width / 2)
        ax.set_xticklabels(variants)
        ax.set_ylabel("coverage")
        ax.legend()
    elif kind == "cpd_audit":
        for mix in dict.fromkeys(r["mixing"] for r in rows):
            sel = [r for r in rows if r["mixing"] == mix]
            ax.plot([float(r["beta"]) for r in sel], [float(r["coverage"]) for r in sel], marker="o", label=f"{mix} observed")
            ax.plot([float(r["beta"]) for r in sel], [float(r["target"]) for r in sel], ls="--", label=f"{mix} target")
        ax.set_xlabel("beta")
        ax.set_ylabel("P(S <= tau_beta)")
        ax.legend(fontsize=6)
    else:
        raise ValueError(f"unknown plot kind {kind!r}")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
