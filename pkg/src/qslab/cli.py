"""Command-line entry point.

Every subcommand writes CSV reports (with a '#'-prefixed metadata header,
floats at 17 significant digits) plus a manifest JSON naming the inputs that
determine every emitted number.  Exit codes: 2 usage, 3 validation,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import __version__, montecarlo, qprocess, variance_clt
from .chain_model import BUILTIN_MODELS, ModelBundle, resolve_model
from .errors import QslabError
from .spectral import (
    certification_profile,
    certify_ergodicity,
    default_time_grid,
    solve_spectral,
)


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    return str(v)


def _write_csv(path, meta, columns, rows):
    with open(path, "w", newline="") as fh:
        for k, v in meta.items():
            fh.write(f"# {k} = {_fmt(v)}\n")
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _model_id(spec: str) -> str:
    if spec.lower() in BUILTIN_MODELS:
        return f"builtin:{spec.lower()}"
    with open(spec, "rb") as fh:
        return "sha256:" + hashlib.sha256(fh.read()).hexdigest()


def _manifest(args, params: dict):
    determ = {
        "subcommand": args.cmd,
        "model": _model_id(args.model),
        "params": params,
        "seed": args.seed,
        "version": __version__,
    }
    digest = hashlib.sha256(
        json.dumps(determ, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()
    return determ, digest


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _prepare(bundle: ModelBundle):
    triple = solve_spectral(bundle.chain)
    qp = qprocess.h_transform(bundle.chain, triple, bundle.psi1)
    return triple, qp


# ---------------------------------------------------------------------------
# subcommand implementations; each returns {filename: (meta, columns, rows)}

def _run_spectral(bundle, args):
    triple = solve_spectral(bundle.chain)
    L = bundle.chain.sub_generator
    res_a = np.abs(triple.alpha @ L + triple.lambda0 * triple.alpha)
    res_e = np.abs(L @ triple.eta + triple.lambda0 * triple.eta)
    rows = [("lambda0", "", triple.lambda0, float(res_a.max())),
            ("gamma", "", triple.gamma, "")]
    rows += [("alpha", i, triple.alpha[i], float(res_a[i])) for i in range(bundle.chain.n)]
    rows += [("eta", i, triple.eta[i], float(res_e[i])) for i in range(bundle.chain.n)]
    return {"spectral.csv": ({}, ("object", "index", "value", "residual"), rows)}


def _run_certify(bundle, args):
    triple = solve_spectral(bundle.chain)
    grid = default_time_grid(triple.gamma, args.tpoints)
    if args.tmax is not None:
        grid = np.concatenate([[0.0], np.geomspace(0.1 / triple.gamma, args.tmax, args.tpoints)])
    cert = certify_ergodicity(bundle.chain, triple, bundle.psi1, grid)
    rows = certification_profile(bundle.chain, triple, bundle.psi1, grid)
    meta = {"C": cert.C, "gamma": cert.gamma, "worst_ratio": cert.worst_ratio,
            "slack_factor": cert.slack_factor, "argmax_t": cert.argmax_t,
            "note": "grid certificate; not a proof between grid points"}
    return {"certify.csv": (meta, ("t", "ratio"), rows)}


def _run_qprocess(bundle, args):
    triple, _ = _prepare(bundle)
    rep = qprocess.conditional_vs_q_gap(bundle.chain, triple, bundle.mu,
                                        args.t, args.T, bundle.psi1)
    rows = [(rep.t, rep.T, rep.tv_gap, rep.tv_gap_sum, rep.bound,
             rep.threshold_T, rep.threshold_ok)]
    return {"qprocess.csv": ({"gamma": triple.gamma},
                             ("t", "T", "tv_gap", "tv_gap_sum", "bound",
                              "threshold_T", "threshold_ok"), rows)}


def _run_variance(bundle, args):
    _, qp = _prepare(bundle)
    res = variance_clt.sigma2_poisson(qp, bundle.f)
    meta = {"tolerance_cross_oracle": 1e-8}
    rows = [(res.sigma2, res.quadrature_value,
             abs(res.sigma2 - res.quadrature_value), res.error_bound,
             res.horizon, res.step)]
    return {"variance.csv": (meta, ("sigma2", "quadrature", "abs_diff",
                                    "error_bound", "horizon", "step"), rows)}


def _run_moments(bundle, args):
    _, qp = _prepare(bundle)
    obs = variance_clt.make_observable(qp, bundle.f)
    times = _floats(args.times) if args.times else [5.0 / qp.gamma, 10.0 / qp.gamma]
    rows = []
    for t in times:
        mv = variance_clt.exact_conditional_moments(qp, bundle.mu, obs.f_centered,
                                                    args.kmax, t)
        for k in range(args.kmax + 1):
            rows.append((k, t, mv.m[k], mv.conditional[k], mv.survival))
    meta = {"kmax": args.kmax, "observable_centered": True}
    return {"moments.csv": (meta, ("k", "t", "m_k", "conditional_m_k", "survival"), rows)}


def _run_charfun(bundle, args):
    _, qp = _prepare(bundle)
    obs = variance_clt.make_observable(qp, bundle.f)
    s2 = variance_clt.sigma2_poisson(qp, obs, with_quadrature=False).sigma2
    omegas = _floats(args.omegas) if args.omegas else [0.5, 1.0, 2.0]
    times = _floats(args.times) if args.times else [100.0 / qp.gamma]
    rows = []
    for t in times:
        for w in omegas:
            cf = variance_clt.exact_conditional_charfun(
                bundle.chain, bundle.mu, obs.f_centered, w / np.sqrt(t), t)
            lim = float(np.exp(-s2 * w * w / 2.0))
            rows.append((w, t, cf.real, cf.imag, lim, abs(cf - lim)))
    meta = {"sigma2": s2, "tolerance_gauss_limit": 0.05}
    return {"charfun.csv": (meta, ("omega", "t", "re", "im", "gauss_limit",
                                   "abs_gap"), rows)}


def _run_clt(bundle, args):
    triple, _ = _prepare(bundle)
    emp = montecarlo.conditional_clt_sample(
        bundle.chain, triple, bundle.mu, bundle.f, args.t, args.n,
        method=args.method, seed=args.seed, psi1=bundle.psi1,
        threads=args.threads or (os.cpu_count() or 1))
    d = montecarlo.kolmogorov_distance(emp, emp.sigma2) if emp.sigma2 > 0 else float("nan")
    rows = [(emp.t, emp.n_effective, d, emp.sigma2, emp.method, emp.gap_bound_factor)]
    out = {"clt.csv": ({"n_requested": emp.n_requested},
                       ("t", "n_eff", "d_kolm", "sigma2", "method", "gap_bound"), rows)}
    if args.dump:
        out["clt_samples.txt"] = (None, None, [(v,) for v in emp.samples])
    return out


def _run_qed(bundle, args):
    triple, _ = _prepare(bundle)
    times = _floats(args.times) if args.times else [10.0 / triple.gamma, 20.0 / triple.gamma,
                                                    40.0 / triple.gamma]
    rep = montecarlo.quasi_ergodic_check(
        bundle.chain, triple, bundle.mu, bundle.f, times, args.n,
        seed=args.seed, method=args.method, psi1=bundle.psi1,
        threads=args.threads or (os.cpu_count() or 1))
    meta = {"fitted_rate": rep.fitted_rate, "method": rep.method}
    return {"qed.csv": (meta, ("t", "mean_square", "stderr", "exact"), rep.rows)}


def _run_all(bundle, args):
    out = {}
    out.update(_run_spectral(bundle, args))
    triple = solve_spectral(bundle.chain)
    args_t = argparse.Namespace(**vars(args))
    args_t.tpoints, args_t.tmax = 12, None
    out.update(_run_certify(bundle, args_t))
    args_t.t, args_t.T = 1.0, 1.0 + 4.0 / triple.gamma
    out.update(_run_qprocess(bundle, args_t))
    out.update(_run_variance(bundle, args_t))
    args_t.kmax, args_t.times = 4, None
    out.update(_run_moments(bundle, args_t))
    args_t.omegas = None
    out.update(_run_charfun(bundle, args_t))
    args_t.t, args_t.n, args_t.method, args_t.dump = 50.0 / triple.gamma, args.n, None, False
    out.update(_run_clt(bundle, args_t))
    args_t.times = None
    out.update(_run_qed(bundle, args_t))
    return out


_RUNNERS = {
    "spectral": _run_spectral,
    "certify": _run_certify,
    "qprocess": _run_qprocess,
    "variance": _run_variance,
    "moments": _run_moments,
    "charfun": _run_charfun,
    "clt": _run_clt,
    "qed": _run_qed,
    "all": _run_all,
}


def build_parser():
    p = argparse.ArgumentParser(prog="qslab",
                                description="quasi-stationary laboratory for absorbed finite Markov chains")
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp):
        sp.add_argument("--model", required=True,
                        help=f"model YAML file or one of {', '.join(BUILTIN_MODELS)}")
        sp.add_argument("--out", default="qslab_out", help="output directory")
        sp.add_argument("--seed", type=int, default=0, help="master seed (u64)")
        sp.add_argument("--threads", type=int, default=1,
                        help="worker threads for Monte Carlo batches (0 = auto)")

    common(sub.add_parser("spectral", help="eigen-triple and gap"))
    sp = sub.add_parser("certify", help="exponential-ergodicity certificate")
    common(sp)
    sp.add_argument("--tmax", type=float, default=None)
    sp.add_argument("--tpoints", type=int, default=12)
    sp = sub.add_parser("qprocess", help="conditioned vs Q-process gap")
    common(sp)
    sp.add_argument("--t", type=float, default=1.0)
    sp.add_argument("--T", type=float, default=5.0)
    common(sub.add_parser("variance", help="asymptotic variance, two oracles"))
    sp = sub.add_parser("moments", help="exact conditional moments")
    common(sp)
    sp.add_argument("--kmax", type=int, default=4)
    sp.add_argument("--times", default=None, help="comma-separated t grid")
    sp = sub.add_parser("charfun", help="exact conditional characteristic function")
    common(sp)
    sp.add_argument("--omegas", default=None, help="comma-separated omega values")
    sp.add_argument("--times", default=None, help="comma-separated t grid")
    sp = sub.add_parser("clt", help="Monte Carlo conditional CLT sample")
    common(sp)
    sp.add_argument("--t", type=float, default=100.0)
    sp.add_argument("--n", type=int, default=10000)
    sp.add_argument("--method", choices=["rejection", "qprocess"], default=None)
    sp.add_argument("--dump", action="store_true", help="write samples one per line")
    sp = sub.add_parser("qed", help="conditional mean-square ergodic decay")
    common(sp)
    sp.add_argument("--times", default=None, help="comma-separated t grid")
    sp.add_argument("--n", type=int, default=10000)
    sp.add_argument("--method", choices=["rejection", "qprocess"], default=None)
    sp = sub.add_parser("all", help="full pipeline on one model")
    common(sp)
    sp.add_argument("--n", type=int, default=20000, help="Monte Carlo replicas")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    started = time.time()
    try:
        bundle = resolve_model(args.model)
        params = {k: v for k, v in sorted(vars(args).items())
                  if k not in ("cmd", "model", "out", "seed", "threads")}
        determ, digest = _manifest(args, params)
        outputs = _RUNNERS[args.cmd](bundle, args)
        os.makedirs(args.out, exist_ok=True)
        written = []
        for fname, (meta, columns, rows) in outputs.items():
            path = os.path.join(args.out, fname)
            if columns is None:  # bare one-value-per-line dump
                with open(path, "w") as fh:
                    fh.write(f"# manifest_hash = {digest}\n")
                    for row in rows:
                        fh.write(_fmt(row[0]) + "\n")
            else:
                full_meta = {"manifest_hash": digest, "model": determ["model"],
                             "seed": args.seed, "version": __version__}
                full_meta.update(meta or {})
                _write_csv(path, full_meta, columns, rows)
            written.append(fname)
        manifest = dict(determ)
        manifest["manifest_hash"] = digest
        manifest["outputs"] = written
        manifest["wall_clock_s"] = round(time.time() - started, 3)
        with open(os.path.join(args.out, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except QslabError as exc:
        print(f"error: {exc.code}: {exc.message}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
