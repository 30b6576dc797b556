"""Command-line entry point: ``frogbound <subcommand> ...``.

Every output file gets a sibling ``<out>.manifest.json`` holding the resolved
configuration; ``frogbound replay <manifest>`` re-runs it byte for byte.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time

import numpy as np

from . import __version__
from .certify import CLAIMS, certify, enumerate_claims
from .gadget import run_gadget_batch
from .output import dumps, write_csv, write_json
from .prob import ParameterError, RngStream, UnsupportedInput, parse_threshold
from .rde import EmpiricalDist, iterate_B, rde_summary, sample_rde_many
from .ssfm import simulate_ssfm_many, verify_lemma_A
from .tree import PROXY_POPULATION_CAP, ModelParams, ProxyConfig, SearchConfig, estimate_mu_c, simulate_tfm_many

DEFAULT_SEED = 20240611
EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
# never echoed into manifests: they cannot change the output
_UNTRACKED = {"workers", "command", "func", "timestamp"}


class ConfigError(Exception):
    pass


def _positive_int(s: str) -> int:
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected an integer >= 1, got {s}")
    return v


def _nonneg_int(s: str) -> int:
    v = int(s)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected an integer >= 0, got {s}")
    return v


def _nonneg_float(s: str) -> float:
    v = float(s)
    if not (math.isfinite(v) and v >= 0):
        raise argparse.ArgumentTypeError(f"expected a finite number >= 0, got {s}")
    return v


def _tau(s: str) -> str:
    try:
        parse_threshold(s)
    except ParameterError as e:
        raise argparse.ArgumentTypeError(str(e))
    return s


def _float_list(s: str) -> list[float]:
    try:
        vals = [float(x) for x in s.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad number list: {s}")
    if any(not math.isfinite(v) or v < 0 for v in vals):
        raise argparse.ArgumentTypeError("lambdas must be finite and >= 0")
    return vals


def _claim_list(s: str) -> list[str]:
    vals = [x.strip() for x in s.split(",") if x.strip()]
    bad = [v for v in vals if v not in CLAIMS + ("lemmaA",)]
    if bad or not vals:
        raise argparse.ArgumentTypeError(f"unknown claims {bad}; choose from {', '.join(CLAIMS + ('lemmaA',))}")
    return vals


# ---------------------------------------------------------------------------
# subcommands; each returns (summary, module_params)

def _params(a) -> ModelParams:
    return ModelParams(a.d, parse_threshold(a.tau), a.mu)


def cmd_simulate_tfm(a):
    params = _params(a)
    trajs = simulate_tfm_many(params, a.reps, a.horizon, a.depth_cap, a.pop, RngStream(a.seed),
                              stop_at=a.stop_at, workers=a.workers)

    def rows():
        for r, tr in enumerate(trajs):
            cum = np.cumsum(tr.arrivals)
            caps = "|".join(tr.caps_hit)
            k = len(tr.times)
            for i in range(k):
                last = i == k - 1 and tr.times[i] == tr.last_tick
                yield r, int(tr.times[i]), int(tr.arrivals[i]), int(cum[i]), caps if last else ""
            if k == 0 or tr.times[-1] != tr.last_tick:
                yield r, tr.last_tick, 0, int(cum[-1]) if k else 0, caps

    write_csv(a.out, ["replica", "t", "arrivals", "cumulative_visits", "caps_hit"], rows())
    totals = np.array([tr.total for tr in trajs], dtype=float)
    summary = {
        "replicas": a.reps,
        "mean_visits": float(totals.mean()),
        "se_visits": float(totals.std(ddof=1) / math.sqrt(a.reps)) if a.reps > 1 else 0.0,
        "caps_hit": {c: sum(c in tr.caps_hit for tr in trajs) for c in ("depth", "population", "horizon", "stopped")},
    }
    return summary, {"alpha": params.alpha}


def cmd_simulate_ssfm(a):
    params = _params(a)
    samples = simulate_ssfm_many(params, a.reps, a.depth_cap, a.steps, RngStream(a.seed), a.visit_cap)
    write_csv(a.out, ["replica", "visits", "vertices", "caps_hit"],
              ((r, s.visits, s.vertices, "|".join(s.caps_hit)) for r, s in enumerate(samples)))
    v = np.array([s.visits for s in samples], dtype=float)
    summary = {"replicas": a.reps, "mean_visits": float(v.mean()),
               "se_visits": float(v.std(ddof=1) / math.sqrt(a.reps)) if a.reps > 1 else 0.0}
    return summary, {"alpha": params.alpha}


def cmd_rde(a):
    params = _params(a)
    rng = RngStream(a.seed)
    dist = EmpiricalDist(sample_rde_many(params, a.depth, a.pop, rng.child(0)))
    rows = [{"generation": 0, **rde_summary(dist)}]
    for g in range(1, a.generations + 1):
        dist = iterate_B(dist, params, a.pop, rng.child(g))
        rows.append({"generation": g, **rde_summary(dist)})
    header = list(rows[0])
    write_csv(a.out, header, ([row[h] for h in header] for row in rows))
    return {"final_mean": rows[-1]["mean"], "generations": a.generations}, {"alpha": params.alpha}


def cmd_operator(a):
    params = _params(a)
    gen = RngStream(a.seed).gen
    lam = a.lam
    n = gen.geometric(params.alpha, size=a.reps)
    x_v = gen.poisson(params.mu, size=a.reps)
    w_vp = gen.poisson(lam, size=a.reps)
    batch = run_gadget_batch(params.d, n, x_v, w_vp, lambda k: gen.poisson(lam, size=k), gen)
    d = params.d
    nf = n.astype(float)
    theta = params.mu / (d + 1) * np.power(float(d), 1 - nf) + lam * np.power(float(d), -nf) + lam * batch.nerve_weight
    write_csv(a.out, ["replica", "n", "count_at_v", "count_at_vprime", "activated_nerves", "root_halts", "theta"],
              zip(range(a.reps), n.tolist(), x_v.tolist(), w_vp.tolist(), batch.activated.tolist(),
                  batch.root_halts.tolist(), theta.tolist()))
    e = np.exp(-theta)
    summary = {"mean_root_halts": float(batch.root_halts.mean()), "neg_exp_moment": float(e.mean()),
               "neg_exp_moment_se": float(e.std(ddof=1) / math.sqrt(a.reps)) if a.reps > 1 else 0.0}
    return summary, {"alpha": params.alpha}


def cmd_certify(a):
    cert = certify(a.d, parse_threshold(a.tau), a.mode, a.K)
    write_json(a.out, cert.to_dict())
    det = cert.details
    return {"verdict": cert.verdict, "mu0": cert.mu0, "lambda0": cert.lambda0}, {
        "alpha": cert.alpha, "F": det.get("F"), "gamma": det.get("gamma"),
        "search": det.get("surface"), "claims": det.get("claims"),
    }


def cmd_verify(a):
    out = {}
    enum_claims = [c for c in a.claims if c != "lemmaA"]
    if enum_claims:
        if a.d is None or a.n_max is None:
            raise ConfigError("enumeration claims need --d and --n-max")
        rep = enumerate_claims(a.d, a.n_max, a.lambdas, enum_claims)
        out["enumeration"] = {**rep.to_dict(), "digest": rep.digest()}
    if "lemmaA" in a.claims:
        grid = _load_grid(a.grid)
        out["lemmaA"] = verify_lemma_A(grid, a.reps, RngStream(a.seed))
    write_json(a.out, out)
    verdicts = {}
    for c in out.get("enumeration", {}).get("cells", []):
        verdicts.setdefault(c["claim"], set()).add(c["verdict"])
    for r in out.get("lemmaA", []):
        verdicts.setdefault("lemmaA", set()).add(r["verdict"])
    return {k: "violated" if "violated" in v else "holds" for k, v in verdicts.items()}, {}


def _load_grid(path):
    if path is None:
        raise ConfigError("lemmaA needs --grid FILE")
    try:
        with open(path) as fh:
            grid = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read grid {path}: {e}")
    if isinstance(grid, dict):
        grid = grid.get("cells", [])
    if not isinstance(grid, list) or not grid:
        raise ConfigError("grid must be a nonempty JSON list of {d, n, a, mu, lambda} cells")
    return grid


def cmd_estimate_mu_c(a):
    proxy = ProxyConfig(a.m, a.horizon, a.depth_cap, a.reps, a.pop)
    search = SearchConfig(a.mu_min, a.mu_max, a.p_lo, a.p_hi, a.iterations)
    res = estimate_mu_c(a.d, parse_threshold(a.tau), proxy, search, RngStream(a.seed), a.workers)
    write_json(a.out, res.to_dict())
    return {"found": res.found, "mu_lo": res.mu_lo, "mu_hi": res.mu_hi}, {}


# ---------------------------------------------------------------------------
# parser

def _common(p, *, model=True, out_help="output path"):
    if model:
        p.add_argument("--d", type=int, required=True)
        p.add_argument("--tau", type=_tau, required=True)
        p.add_argument("--mu", type=_nonneg_float, required=True)
    p.add_argument("--seed", type=_nonneg_int, default=DEFAULT_SEED)
    p.add_argument("--workers", type=_positive_int, default=os.cpu_count() or 1)
    p.add_argument("--out", required=True, help=out_help)
    p.add_argument("--timestamp", action="store_true", help="record wall-clock time in the manifest")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="frogbound", description="Threshold frog model toolkit.")
    ap.add_argument("--version", action="version", version=f"frogbound {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate-tfm", help="simulate the threshold frog model on the d-ary tree")
    _common(p, out_help="CSV of root arrivals")
    p.add_argument("--horizon", type=_positive_int, default=10_000)
    p.add_argument("--depth-cap", type=_positive_int, default=30)
    p.add_argument("--pop", type=_positive_int, default=200_000, help="population cap per replica")
    p.add_argument("--reps", type=_positive_int, default=100_000)
    p.add_argument("--stop-at", type=_positive_int, default=None, help="freeze a replica after this many root visits")
    p.set_defaults(func=cmd_simulate_tfm)

    p = sub.add_parser("simulate-ssfm", help="simulate the self-similar model")
    _common(p, out_help="CSV of root-visit totals")
    p.add_argument("--depth-cap", type=_positive_int, default=30)
    p.add_argument("--steps", type=_positive_int, default=1_000_000, help="step cap per replica")
    p.add_argument("--visit-cap", type=_positive_int, default=None)
    p.add_argument("--reps", type=_positive_int, default=100_000)
    p.set_defaults(func=cmd_simulate_ssfm)

    p = sub.add_parser("rde", help="sample the recursion, then iterate B by population dynamics")
    _common(p, out_help="CSV of per-generation summaries")
    p.add_argument("--depth", type=_nonneg_int, default=4)
    p.add_argument("--pop", type=_positive_int, default=100_000)
    p.add_argument("--generations", type=_nonneg_int, default=5)
    p.set_defaults(func=cmd_rde)

    p = sub.add_parser("operator", help="sample spine gadgets with Poisson counts")
    _common(p, out_help="CSV of gadget realizations")
    p.add_argument("--lambda", dest="lam", type=_nonneg_float, default=0.0)
    p.add_argument("--reps", type=_positive_int, default=100_000)
    p.set_defaults(func=cmd_operator)

    p = sub.add_parser("certify", help="search for a certificate (lambda0, mu0)")
    _common(p, model=False, out_help="certificate JSON")
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--tau", type=_tau, required=True)
    p.add_argument("--mode", choices=("paper", "exact"), default="exact")
    p.add_argument("--K", type=_positive_int, default=12)
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("verify", help="check claims by enumeration or Monte Carlo")
    _common(p, model=False, out_help="report JSON")
    p.add_argument("--claims", type=_claim_list, required=True)
    p.add_argument("--d", type=int, default=None)
    p.add_argument("--n-max", type=_positive_int, default=None)
    p.add_argument("--lambdas", type=_float_list, default=[1.0])
    p.add_argument("--grid", default=None, help="JSON list of lemmaA cells {d, n, a, mu, lambda}")
    p.add_argument("--reps", type=_positive_int, default=100_000)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("estimate-mu-c", help="bracket the critical density with the recurrence proxy")
    _common(p, model=False, out_help="bracket JSON")
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--tau", type=_tau, required=True)
    p.add_argument("--m", type=_nonneg_int, default=50)
    p.add_argument("--horizon", type=_positive_int, default=10_000)
    p.add_argument("--depth-cap", type=_positive_int, default=30)
    p.add_argument("--pop", type=_positive_int, default=PROXY_POPULATION_CAP)
    p.add_argument("--reps", type=_positive_int, default=200)
    p.add_argument("--mu-min", type=_nonneg_float, default=0.0)
    p.add_argument("--mu-max", type=_nonneg_float, default=100.0)
    p.add_argument("--p-lo", type=float, default=0.05)
    p.add_argument("--p-hi", type=float, default=0.95)
    p.add_argument("--iterations", type=_positive_int, default=6)
    p.set_defaults(func=cmd_estimate_mu_c)

    p = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    p.add_argument("manifest")
    p.add_argument("--out", default=None, help="write here instead of the recorded path")
    p.add_argument("--workers", type=_positive_int, default=os.cpu_count() or 1)
    return ap


def _config(a) -> dict:
    return {k: v for k, v in sorted(vars(a).items()) if k not in _UNTRACKED}


def _argv_from(command: str, config: dict) -> list[str]:
    argv = [command]
    for k, v in config.items():
        if v is None:
            continue
        argv.append("--" + k.replace("_", "-") if k != "lam" else "--lambda")
        if isinstance(v, list):
            argv.append(",".join(repr(x) if isinstance(x, float) else str(x) for x in v))
        else:
            argv.append(repr(v) if isinstance(v, float) else str(v))
    return argv


def _check_out(path: str):
    parent = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(parent) or not os.access(parent, os.W_OK):
        raise ConfigError(f"cannot write to {path}")
    if os.path.isdir(path):
        raise ConfigError(f"{path} is a directory")


def run(a) -> int:
    _check_out(a.out)
    if getattr(a, "d", None) is not None and a.d < 2:
        raise ConfigError("--d must be >= 2")
    started = time.time()
    summary, module_params = a.func(a)
    config = _config(a)
    manifest = {
        "tool": "frogbound",
        "version": __version__,
        "command": a.command,
        "argv": _argv_from(a.command, config),
        "config": config,
        "seed": getattr(a, "seed", None),
        "output": a.out,
        "module_params": module_params,
        "summary": summary,
        "wall_clock": {"started": started, "seconds": time.time() - started} if a.timestamp else None,
    }
    write_json(a.out + ".manifest.json", manifest)
    print(dumps({"command": a.command, "output": a.out, "summary": summary}))
    return EXIT_OK


def _replay(a, parser) -> int:
    try:
        with open(a.manifest) as fh:
            m = json.load(fh)
        argv = list(m["argv"])
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as e:
        raise ConfigError(f"cannot read manifest {a.manifest}: {e}")
    if a.out is not None:
        i = argv.index("--out")
        argv[i + 1] = a.out
    argv += ["--workers", str(a.workers)]
    return run(parser.parse_args(argv))


def main(argv=None) -> int:
    parser = build_parser()
    a = parser.parse_args(argv)
    try:
        if a.command == "replay":
            return _replay(a, parser)
        return run(a)
    except (ConfigError, ParameterError, UnsupportedInput) as e:
        print(f"frogbound: error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:  # noqa: BLE001 - any failure during computation
        print(f"frogbound: runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
