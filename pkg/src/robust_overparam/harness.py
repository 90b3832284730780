"""Experiment orchestration and the command-line surface.

Every command resolves its full configuration, runs the relevant module
operations, and writes outputs atomically (temp file + rename) with the tool
version, resolved config and seed embedded, so reruns with the same flags are
byte-identical.  Exit codes: 0 success, 1 certification failure, 2 usage
error; failures also emit one machine-readable JSON line on stderr.
"""
from __future__ import annotations

import argparse
import concurrent.futures
import json
import os
import statistics
import sys

import numpy as np

from . import __version__
from .adversary import AttackConfig, make_adversary, random_cap_point
from .dataspace import (
    SeparabilityError,
    delta_histogram,
    load_csv,
    separability,
    synth_separated,
    uniform_domain_sample,
)
from .network import (
    anti_concentration_check,
    grad_loss_pseudo,
    grad_loss_real,
    gradient_coupling_norm,
    init_network,
    perturbed_state,
    weight_norms,
)
from .polyapprox import CertificationError, StepSpec, robust_interpolant, step_poly
from .rng import stream
from .training import adversarial_train, fit_pseudo_to_target, make_loss, schedule

THREADS_ENV = "ROBUST_OVERPARAM_THREADS"


# ---------------------------------------------------------------------------
# Atomic, reproducible output
# ---------------------------------------------------------------------------

def _meta(config: dict, seed) -> dict:
    return {"version": __version__, "config": config, "seed": seed}


def atomic_write_text(path: str, text: str) -> None:
    tmp = f"{path}.tmp"
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_json(path: str, payload: dict) -> None:
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_csv(path: str, meta: dict, header, rows) -> None:
    lines = ["# meta " + json.dumps(meta, sort_keys=True)]
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_poly(args) -> int:
    config = {
        "command": "poly",
        "delta": args.delta,
        "rho": args.rho,
        "eps1": args.eps1,
        "cert_grid": args.cert_grid,
    }
    spec = StepSpec(rho=args.rho, delta=args.delta, eps1=args.eps1)
    q = step_poly(spec, cert_grid=args.cert_grid)
    cert = q.meta["certification"]
    payload = {
        "meta": _meta(config, None),
        "degree": q.degree,
        "basis": "chebyshev",
        "coefficients": [float(c) for c in q.chebyshev_coeffs],
        "certification": {
            "interval": cert["intervals"],
            "max_error": cert["max_error"],
            "tolerance": cert["tolerance"],
            "pass": cert["pass"],
        },
    }
    if args.emit:
        write_json(args.emit, payload)
    else:
        print(json.dumps({k: payload[k] for k in ("degree", "basis", "certification")}, sort_keys=True))
    return 0


def _dataset_from_args(args) -> Dataset:
    if getattr(args, "input", None):
        return load_csv(args.input)
    if getattr(args, "synth", None):
        kv = dict(part.split("=") for part in args.synth.split(","))
        return synth_separated(
            n=int(kv["n"]), d=int(kv["d"]), delta_min=float(kv["delta"]), seed=args.seed
        )
    raise ValueError("provide --input data.csv or --synth n=..,d=..,delta=..")


def cmd_separability(args) -> int:
    config = {
        "command": "separability",
        "input": args.input,
        "synth": args.synth,
        "rho": args.rho,
        "seed": args.seed,
    }
    ds = _dataset_from_args(args)
    rep = separability(ds, args.rho)
    payload = {
        "meta": _meta(config, args.seed),
        "n": ds.n,
        "d": ds.d,
        "rho": args.rho,
        "delta": rep.delta,
        "gamma": rep.gamma,
        "separable": rep.gamma > 0,
        "per_point_delta": [float(v) for v in rep.per_point_delta],
    }
    write_json(args.out, payload)
    if args.hist:
        counts, edges = delta_histogram(rep)
        rows = [(float(edges[i]), float(edges[i + 1]), int(counts[i])) for i in range(len(counts))]
        write_csv(args.hist, _meta(config, args.seed), ("bin_lo", "bin_hi", "count"), rows)
    return 0


def _coupling_cell(m: int, d: int, R: float, samples: int, batch_n: int, seed: int):
    """One (width, seed) cell: sup-sample gap, flip fraction, gradient ratio.

    The gap and flip scans share one chunked pass over the sample; at the
    largest widths the sample-times-width matrices dominate the sweep cost.
    """
    state = init_network(m, d, seed)
    pert = perturbed_state(state, R, seed)
    init = pert.init
    dW = pert.W - init.W0
    sample = uniform_domain_sample(samples, d, stream(seed, "coupling-sample"))
    gap = 0.0
    flipped = np.zeros(m, dtype=bool)
    chunk = max(1, min(256, samples))
    for lo in range(0, samples, chunk):
        X = sample[lo : lo + chunk]
        pre0 = X @ init.W0 + init.b0
        shift = X @ dW
        f = np.maximum(pre0 + shift, 0.0) @ init.a0
        mask0 = pre0 >= 0
        g = (shift * mask0) @ init.a0
        gap = max(gap, float(np.max(np.abs(f - g))))
        flipped |= (((pre0 + shift) >= 0) != mask0).any(axis=0)
    flips = float(flipped.sum()) / m
    ds = synth_separated(batch_n, d, delta_min=0.8, seed=seed)
    loss = make_loss("absolute")
    g_real = grad_loss_real(pert, ds.X, ds.y, loss)
    g_pseudo = grad_loss_pseudo(pert, ds.X, ds.y, loss)
    denom = float(np.linalg.norm(g_real, axis=0).sum())
    ratio = gradient_coupling_norm(g_pseudo, g_real) / denom if denom > 0 else float("inf")
    return gap, flips, ratio


def cmd_coupling(args) -> int:
    m_list = [int(v) for v in args.m_list.split(",")]
    config = {
        "command": "coupling",
        "m_list": m_list,
        "R": args.R,
        "samples": args.samples,
        "d": args.d,
        "seeds": args.seeds,
        "seed": args.seed,
        "batch_n": args.batch_n,
    }
    rows = []
    grad_rows = []
    jobs = [(m, args.seed + r) for m in m_list for r in range(args.seeds)]
    results = _pool_map(
        lambda job: _coupling_cell(job[0], args.d, args.R, args.samples, args.batch_n, job[1]),
        jobs,
    )
    by_m: dict[int, list] = {m: [] for m in m_list}
    for (m, _), res in zip(jobs, results):
        by_m[m].append(res)
    for m in m_list:
        gaps = [r[0] for r in by_m[m]]
        flips = [r[1] for r in by_m[m]]
        ratios = [r[2] for r in by_m[m]]
        rows.append((m, args.R, statistics.median(gaps), max(gaps), statistics.median(flips)))
        grad_rows.append((m, args.R, statistics.median(ratios)))
    meta = _meta(config, args.seed)
    write_csv(args.out, meta, ("m", "R", "gap_median", "gap_max", "flip_fraction"), rows)
    if args.grad_out:
        write_csv(args.grad_out, meta, ("m", "R", "grad_ratio_median"), grad_rows)
    return 0


def cmd_anticonc(args) -> int:
    t_grid = [float(v) for v in args.t_grid.split(",")]
    config = {
        "command": "anticonc",
        "m": args.m,
        "d": args.d,
        "t_grid": t_grid,
        "trials": args.trials,
        "seed": args.seed,
    }
    rows = anti_concentration_check(args.m, args.d, t_grid, args.trials, args.seed)
    write_csv(
        args.out,
        _meta(config, args.seed),
        ("t", "estimate", "exact", "stderr", "envelope"),
        [(r.t, r.estimate, r.exact, r.stderr, r.envelope) for r in rows],
    )
    return 0


def build_fit_instance(n, d, delta_min, rho, eps, seed, pert_per_point):
    """Shared setup for fit runs: dataset, interpolant, and the fit sample."""
    ds = synth_separated(n, d, delta_min, seed)
    rep = separability(ds, rho)
    spec = StepSpec(rho=rho, delta=rep.delta, eps1=eps / (3.0 * n))
    target = robust_interpolant(ds, spec)
    perts = [
        random_cap_point(ds.X[i], rho, stream(seed, "fit-sample", i, j))
        for i in range(n)
        for j in range(pert_per_point)
    ]
    sample = np.vstack([ds.X] + perts)
    return ds, target, sample


def cmd_fit(args) -> int:
    config = {
        "command": "fit",
        "n": args.n,
        "d": args.d,
        "delta": args.delta,
        "rho": args.rho,
        "eps": args.eps,
        "m": args.m,
        "pert_per_point": args.pert_per_point,
        "ridge": args.ridge,
        "seed": args.seed,
    }
    ds, target, sample = build_fit_instance(
        args.n, args.d, args.delta, args.rho, args.eps, args.seed, args.pert_per_point
    )
    state = init_network(args.m, args.d, args.seed)
    fit = fit_pseudo_to_target(state.init, target, sample, ridge=args.ridge)
    payload = {
        "meta": _meta(config, args.seed),
        "m": args.m,
        "sample_size": int(len(sample)),
        "target_degree": target.degree,
        "max_error": fit.max_error,
        "two_inf": fit.two_inf,
        "r_star": fit.r_star,
        "ridge": fit.ridge,
    }
    write_json(args.out, payload)
    return 0


def cmd_train(args) -> int:
    config = {
        "command": "train",
        "input": args.input,
        "synth": args.synth,
        "rho": args.rho,
        "m": args.m,
        "eps": args.eps,
        "R": args.R,
        "c_T": args.c_T,
        "c_eta": args.c_eta,
        "attack": args.attack,
        "attack_steps": args.attack_steps,
        "attack_restarts": args.attack_restarts,
        "loss": args.loss,
        "seed": args.seed,
    }
    ds = _dataset_from_args(args)
    rep = separability(ds, args.rho)
    if rep.gamma <= 0:
        raise SeparabilityError(
            f"training set not separable for rho={args.rho}: delta={rep.delta:.4g}"
        )
    loss = make_loss(args.loss)
    cfg = AttackConfig(
        rho=args.rho, steps=args.attack_steps, restarts=args.attack_restarts, seed=args.seed
    )
    adv = make_adversary(args.attack, cfg)
    hp = schedule(args.eps, args.R, args.m, c_T=args.c_T, c_eta=args.c_eta)
    state = init_network(args.m, ds.d, args.seed)
    result = adversarial_train(state, ds, adv, loss, hp)
    meta = _meta(config, args.seed)
    if args.trace:
        write_csv(args.trace, meta, result.trace.COLUMNS, list(result.trace.rows()))
    summary = {
        "meta": meta,
        "best_t": result.best_t,
        "best_robust_loss": result.best_robust_loss,
        "final_drift_2inf": weight_norms(result.final_W, state.init.W0).two_inf,
        "hp": {
            "T": hp.T,
            "eta": hp.eta,
            "R": hp.R,
            "eps": hp.eps,
            "c_T": hp.c_T,
            "c_eta": hp.c_eta,
        },
        "invariant_violations": result.violations,
    }
    if args.summary:
        write_json(args.summary, summary)
    return 0


def _sweep_cell_fit(args, m: int, seed: int) -> dict:
    ds, target, sample = build_fit_instance(
        args.n, args.d, args.delta, args.rho, args.eps, seed, args.pert_per_point
    )
    state = init_network(m, args.d, seed)
    fit = fit_pseudo_to_target(state.init, target, sample, ridge=args.ridge)
    return {"max_error": fit.max_error, "two_inf": fit.two_inf, "r_star": fit.r_star}


def _sweep_cell_train(args, m: int, delta: float, seed: int) -> dict:
    ds = synth_separated(args.n, args.d, delta, seed)
    loss = make_loss(args.loss)
    cfg = AttackConfig(rho=args.rho, steps=args.attack_steps, restarts=args.attack_restarts, seed=seed)
    adv = make_adversary(args.attack, cfg)
    hp = schedule(args.eps, args.R, m, c_T=args.c_T, c_eta=args.c_eta)
    state = init_network(m, args.d, seed)
    result = adversarial_train(state, ds, adv, loss, hp)
    return {
        "best_robust_loss": result.best_robust_loss,
        "best_t": float(result.best_t),
        "violations": float(len(result.violations)),
    }


def cmd_sweep(args) -> int:
    m_list = [int(v) for v in args.m_list.split(",")]
    delta_list = [float(v) for v in args.delta_list.split(",")] if args.delta_list else [args.delta]
    config = {
        "command": f"sweep-{args.target}",
        "m_list": m_list,
        "delta_list": delta_list,
        "repeats": args.repeats,
        "seed": args.seed,
        "params": {
            k: getattr(args, k)
            for k in ("n", "d", "rho", "eps", "R", "pert_per_point", "ridge", "loss")
            if hasattr(args, k)
        },
    }
    cells = [(m, delta) for m in m_list for delta in delta_list]

    def run_cell(cell):
        m, delta = cell
        outs = []
        for rep in range(args.repeats):
            seed = args.seed + rep
            if args.target == "fit":
                outs.append(_sweep_cell_fit(args, m, seed))
            else:
                outs.append(_sweep_cell_train(args, m, delta, seed))
        return outs

    results = _pool_map(run_cell, cells)
    keys = sorted(results[0][0].keys())
    header = ["m", "delta"] + [f"{k}_median" for k in keys]
    rows = []
    for (m, delta), outs in zip(cells, results):
        rows.append(
            tuple([m, delta] + [statistics.median(o[k] for o in outs) for k in keys])
        )
    write_csv(args.out, _meta(config, args.seed), header, rows)
    return 0


def _pool_map(fn, items):
    workers = os.environ.get(THREADS_ENV)
    workers = int(workers) if workers else min(4, os.cpu_count() or 1)
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# Parser and entry point
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


class _UsageError(Exception):
    pass


def build_parser():
    p = _Parser(prog="robust-overparam")
    sub = p.add_subparsers(dest="command", required=True)
    subparser_map: dict[str, argparse.ArgumentParser] = {}

    poly = sub.add_parser("poly", help="build and certify a step polynomial")
    poly.add_argument("--delta", type=float, required=True)
    poly.add_argument("--rho", type=float, required=True)
    poly.add_argument("--eps1", type=float, required=True)
    poly.add_argument("--cert-grid", type=int, default=10_000)
    poly.add_argument("--emit", type=str, default=None, help="write coeffs JSON here")
    poly.set_defaults(func=cmd_poly)

    sep = sub.add_parser("separability", help="measure pairwise separation")
    sep.add_argument("--input", type=str, default=None)
    sep.add_argument("--synth", type=str, default=None, help="n=..,d=..,delta=..")
    sep.add_argument("--rho", type=float, required=True)
    sep.add_argument("--out", type=str, required=True)
    sep.add_argument("--hist", type=str, default=None)
    sep.add_argument("--seed", type=int, default=0)
    sep.set_defaults(func=cmd_separability)

    cpl = sub.add_parser("coupling", help="network vs pseudo-network width sweep")
    cpl.add_argument("--m-list", type=str, required=True)
    cpl.add_argument("--R", type=float, default=2.0)
    cpl.add_argument("--samples", type=int, default=20_000)
    cpl.add_argument("--d", type=int, default=16)
    cpl.add_argument("--seeds", type=int, default=3)
    cpl.add_argument("--seed", type=int, default=1)
    cpl.add_argument("--batch-n", type=int, default=20)
    cpl.add_argument("--out", type=str, required=True)
    cpl.add_argument("--grad-out", type=str, default=None)
    cpl.set_defaults(func=cmd_coupling)

    ac = sub.add_parser("anticonc", help="anti-concentration Monte Carlo check")
    ac.add_argument("--m", type=int, default=4096)
    ac.add_argument("--d", type=int, default=16)
    ac.add_argument("--t-grid", type=str, default="0.01,0.05,0.1,0.5")
    ac.add_argument("--trials", type=int, default=100_000)
    ac.add_argument("--seed", type=int, default=1)
    ac.add_argument("--out", type=str, required=True)
    ac.set_defaults(func=cmd_anticonc)

    fit = sub.add_parser("fit", help="fit a pseudo-network to the robust interpolant")
    fit.add_argument("--n", type=int, default=20)
    fit.add_argument("--d", type=int, default=10)
    fit.add_argument("--delta", type=float, default=0.8)
    fit.add_argument("--rho", type=float, default=0.05)
    fit.add_argument("--eps", type=float, default=0.3)
    fit.add_argument("--m", type=int, required=True)
    fit.add_argument("--pert-per-point", type=int, default=20)
    fit.add_argument("--ridge", type=float, default=None)
    fit.add_argument("--seed", type=int, default=7)
    fit.add_argument("--out", type=str, required=True)
    fit.set_defaults(func=cmd_fit)

    tr = sub.add_parser("train", help="adversarial training run")
    tr.add_argument("--data", dest="input", type=str, default=None)
    tr.add_argument("--synth", type=str, default=None, help="n=..,d=..,delta=..")
    tr.add_argument("--rho", type=float, required=True)
    tr.add_argument("--m", type=int, required=True)
    tr.add_argument("--eps", type=float, required=True)
    tr.add_argument("--R", type=float, default=2.0)
    tr.add_argument("--c-T", dest="c_T", type=float, default=1.0)
    tr.add_argument("--c-eta", dest="c_eta", type=float, default=1.0)
    tr.add_argument("--attack", choices=("worst", "random", "identity"), default="worst")
    tr.add_argument("--attack-steps", type=int, default=20)
    tr.add_argument("--attack-restarts", type=int, default=3)
    tr.add_argument("--loss", choices=("absolute", "huber"), default="absolute")
    tr.add_argument("--seed", type=int, default=1)
    tr.add_argument("--trace", type=str, default=None)
    tr.add_argument("--summary", type=str, default=None)
    tr.set_defaults(func=cmd_train)

    sw = sub.add_parser("sweep", help="cartesian sweep over m/delta lists")
    sw.add_argument("target", choices=("fit", "train"))
    sw.add_argument("--m-list", type=str, required=True)
    sw.add_argument("--delta-list", type=str, default=None)
    sw.add_argument("--repeats", type=int, default=3)
    sw.add_argument("--seed", type=int, default=1)
    sw.add_argument("--n", type=int, default=20)
    sw.add_argument("--d", type=int, default=10)
    sw.add_argument("--delta", type=float, default=0.8)
    sw.add_argument("--rho", type=float, default=0.05)
    sw.add_argument("--eps", type=float, default=0.3)
    sw.add_argument("--R", type=float, default=2.0)
    sw.add_argument("--c-T", dest="c_T", type=float, default=1.0)
    sw.add_argument("--c-eta", dest="c_eta", type=float, default=1.0)
    sw.add_argument("--pert-per-point", type=int, default=20)
    sw.add_argument("--ridge", type=float, default=None)
    sw.add_argument("--loss", choices=("absolute", "huber"), default="absolute")
    sw.add_argument("--attack", choices=("worst", "random", "identity"), default="worst")
    sw.add_argument("--attack-steps", type=int, default=20)
    sw.add_argument("--attack-restarts", type=int, default=3)
    sw.add_argument("--out", type=str, required=True)
    sw.set_defaults(func=cmd_sweep)

    for name, parser in (
        ("poly", poly), ("separability", sep), ("coupling", cpl),
        ("anticonc", ac), ("fit", fit), ("train", tr), ("sweep", sw),
    ):
        parser.add_argument("--config", type=str, default=None, help="JSON file with flag defaults")
        subparser_map[name] = parser
    return p, subparser_map


def _emit_error(kind: str, message: str) -> None:
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")


def run(argv=None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    parser, subparser_map = build_parser()
    try:
        if "--config" in argv:
            # config files supply defaults; explicit flags still win
            path = argv[argv.index("--config") + 1]
            with open(path) as fh:
                defaults = json.load(fh)
            command = next((a for a in argv if not a.startswith("-")), None)
            if command not in subparser_map:
                raise _UsageError(f"unknown command for --config: {command!r}")
            known = {a.dest for a in subparser_map[command]._actions}
            bad = set(defaults) - known
            if bad:
                raise _UsageError(f"unknown config keys: {sorted(bad)}")
            subparser_map[command].set_defaults(**defaults)
            for action in subparser_map[command]._actions:
                if action.dest in defaults:
                    action.required = False
        args = parser.parse_args(argv)
    except _UsageError as exc:
        _emit_error("usage", str(exc))
        return 2
    except (IndexError, FileNotFoundError, json.JSONDecodeError) as exc:
        _emit_error("usage", f"bad --config: {exc}")
        return 2
    try:
        return args.func(args)
    except (CertificationError, SeparabilityError) as exc:
        _emit_error(type(exc).__name__, str(exc))
        return 1
    except (ValueError, FileNotFoundError) as exc:
        _emit_error("usage", str(exc))
        return 2
