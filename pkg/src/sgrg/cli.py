"""Command-line front end.

Every artifact starts with a header carrying the config digest and seed.  Each
subcommand also writes `<command>.json`, a small summary that `report` reads;
`report` never recomputes anything.

Randomness: one root seed, expanded with numpy's SeedSequence.spawn, so a
subtask's stream depends only on (root seed, subtask index).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import activities as act
from . import covariance as cv
from . import gaussian as gs
from . import mc_correlator as mc
from . import polymers as pm
from . import rg_flow as rg

log = logging.getLogger("sgrg")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_ACCEPTANCE = 0, 1, 2, 3
COMMANDS = ("decompose", "gff-sample", "sg-check", "polymer-enum", "extract", "rg-flow", "tune",
            "delta-k", "correlate", "report")
SCHEMA = Path(__file__).with_name("schema.json")


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def float_list(text: str) -> list[float]:
    return [float(t) for t in str(text).split(",") if t.strip()]


def int_list(text: str) -> list[int]:
    return [int(t) for t in str(text).split(",") if t.strip()]


def beta_arg(text) -> float:
    try:
        return rg.parse_beta(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad beta {text!r}; use a number or e.g. '16pi'")


def read_config(path) -> dict:
    """Flat 'key = value' text; '#' starts a comment; keys use the flag names."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k.replace("-", "_")] = v
    return out


def build_parser() -> Parser:
    p = Parser(prog="sgrg", description="Multiscale sine-Gordon toolkit")
    p.add_argument("--log-level", default="WARNING")
    sub = p.add_subparsers(dest="command", parser_class=Parser)

    def cmd(name):
        s = sub.add_parser(name)
        s.add_argument("--config", help="flat key = value file; flags override it")
        s.add_argument("--out", default="run", help="output directory")
        s.add_argument("--seed", type=int, default=0)
        return s

    s = cmd("decompose")
    s.add_argument("--L", type=int, default=8)
    s.add_argument("--n-nodes", type=int, default=cv.TABLE_NODES)

    s = cmd("gff-sample")
    s.add_argument("--L", type=int, default=4)
    s.add_argument("--beta", type=beta_arg, default="10pi")
    s.add_argument("--n-scales", type=int, default=3)
    s.add_argument("--grid", type=int, default=64)
    s.add_argument("--side", type=float, default=16.0)
    s.add_argument("--count", type=int, default=1)

    s = cmd("sg-check")
    s.add_argument("--L", type=int, default=2)
    s.add_argument("--beta", type=beta_arg, default="10pi")
    s.add_argument("--z", type=float, default=0.1)
    s.add_argument("--grid", type=int, default=8)
    s.add_argument("--side", type=float, default=2.0)
    s.add_argument("--n-scales", type=int, default=1)
    s.add_argument("--n-max", type=int, default=4)
    s.add_argument("--n-samples", type=int, default=1_000_000)

    s = cmd("polymer-enum")
    s.add_argument("--max-size", type=int, default=6)
    s.add_argument("--torus", type=int, default=9)

    s = cmd("extract")
    s.add_argument("--z", type=float, default=1e-3)
    s.add_argument("--sigma", type=float, default=0.0)
    s.add_argument("--max-size", type=int, default=pm.SMALL_MAX)
    s.add_argument("--limit", type=int, default=0, help="use only the first N sets (0: all)")

    for name in ("rg-flow", "tune", "delta-k"):
        s = cmd(name)
        s.add_argument("--L", type=int, default=16)
        s.add_argument("--beta", type=beta_arg, default="16pi")
        s.add_argument("--eps", type=float, default=1e-2)
        s.add_argument("--eps0", type=float, default=0.1)
        s.add_argument("--j-max", type=int, default=40)
        if name != "delta-k":
            s.add_argument("--k0", type=float, default=1e-3)
        if name == "rg-flow":
            s.add_argument("--sigma0", type=float, default=None, help="omit to use the tuned value")
        if name == "delta-k":
            s.add_argument("--powers", type=int_list, default="2,3,4,5")

    s = cmd("correlate")
    s.add_argument("--L", type=int, default=4)
    s.add_argument("--beta", type=beta_arg, default="10pi")
    s.add_argument("--n-scales", type=int, default=5)
    s.add_argument("--grid", type=int, default=64)
    s.add_argument("--side", type=float, default=32.0)
    s.add_argument("--z", type=float_list, default="0,0.05")
    s.add_argument("--separations", type=int_list, default=",".join(map(str, mc.DEFAULT_SEPARATIONS)))
    s.add_argument("--n-samples", type=int, default=1_000_000)

    s = sub.add_parser("report")
    s.add_argument("--out", default="run")
    s.add_argument("--compare", default=None, help="second run directory; artifacts must match byte for byte")
    return p


def parse(argv) -> argparse.Namespace:
    p = build_parser()
    ns = p.parse_args(argv)
    if ns.command is None:
        raise UsageError("missing subcommand; choose from " + ", ".join(COMMANDS))
    if getattr(ns, "config", None):
        cfg = read_config(ns.config)
        sp = p._subparsers._group_actions[0].choices[ns.command]
        known = {a.dest for a in sp._actions}
        bad = sorted(set(cfg) - known)
        if bad:
            raise UsageError(f"unknown config keys: {', '.join(bad)}")
        sp.set_defaults(**cfg)
        ns = p.parse_args(argv)
    return ns


def config_of(ns) -> dict:
    """Everything that determines the numbers; the output directory is excluded."""
    d = {k: v for k, v in sorted(vars(ns).items()) if k not in ("out", "config", "log_level")}
    return json.loads(json.dumps(d, default=repr))


def digest(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]


class Run:
    def __init__(self, ns):
        self.ns = ns
        self.cfg = config_of(ns)
        self.digest = digest(self.cfg)
        self.out = Path(ns.out)
        self.out.mkdir(parents=True, exist_ok=True)

    @property
    def header(self) -> str:
        return f"# sgrg command={self.ns.command} digest={self.digest} seed={self.ns.seed}\n"

    def seeds(self, n: int) -> list:
        return np.random.SeedSequence(self.ns.seed).spawn(n)

    def stamp(self, name: str, writer, *args) -> Path:
        """Run a path-based writer, then prepend the run header."""
        path = self.out / name
        writer(path, *args)
        body = path.read_text()
        path.write_text(self.header + body)
        return path

    def summary(self, criterion: str, passed: bool, **detail) -> dict:
        doc = {"command": self.ns.command, "criterion": criterion, "passed": bool(passed),
               "digest": self.digest, "seed": self.ns.seed, "config": self.cfg, "detail": detail}
        (self.out / f"{self.ns.command}.json").write_text(json.dumps(doc, indent=2, sort_keys=True, default=float) + "\n")
        return doc


# ------------------------------------------------------------------ commands


def do_decompose(run: Run) -> int:
    ns = run.ns
    cov = cv.make_covariance(cv.reference_kernel(), ns.L, ns.n_nodes)
    run.stamp(f"cov_L{ns.L}.csv", cv.write_covariance, cov, {"digest": run.digest})
    target = math.log(ns.L) / (2 * math.pi)
    err = abs(cov.C0 - target)
    tail = np.asarray(cov(np.linspace(ns.L, 2 * ns.L, 64)))
    ok = err <= 1e-6 and not tail.any()
    print(f"C(0) = {cov.C0:.12f}  log(L)/2pi = {target:.12f}  |diff| = {err:.2e}  {'PASS' if ok else 'FAIL'}")
    run.summary("covariance", ok, C0=cov.C0, target=target, error=err)
    return EXIT_OK if ok else EXIT_ACCEPTANCE


def do_gff_sample(run: Run) -> int:
    ns = run.ns
    sd = cv.ScaleDecomposition(cv.reference_covariance(ns.L), ns.n_scales)
    grid = gs.TorusGrid(ns.grid, ns.side)
    samples = gs.sample_multiscale(sd, ns.beta, run.seeds(1)[0], grid, ns.count)
    for i, smp in enumerate(samples):
        gs.write_field(run.out / f"field_{i}.bin", smp, {"digest": run.digest, "command": ns.command})
    var = float(np.mean([s.values.var() for s in samples]))
    run.summary("gff-sample", True, count=len(samples), mean_site_variance=var)
    return EXIT_OK


def do_sg_check(run: Run) -> int:
    ns = run.ns
    sd = cv.ScaleDecomposition(cv.reference_covariance(ns.L), ns.n_scales, torus_side=ns.side)
    grid = gs.TorusGrid(ns.grid, ns.side)
    res = gs.sine_gordon_check(ns.z, ns.beta, sd, ns.n_max, grid, ns.n_samples, run.seeds(1)[0])

    def write(path):
        with open(path, "w") as fh:
            fh.write("order,term\n")
            for n, t in enumerate(res.terms):
                fh.write(f"{n},{t!r}\n")
            fh.write(f"# lhs={res.lhs!r} stderr={res.lhs_stderr!r} rhs={res.rhs!r} bound={res.truncation_bound!r}\n")

    run.stamp("sg_check.csv", write)
    print(f"MC {res.lhs:.8f} +- {res.lhs_stderr:.2e}  series {res.rhs:.8f}  gap {res.gap:.2e}  "
          f"allowed {res.truncation_bound + 3 * res.lhs_stderr:.2e}")
    run.summary("sine-gordon", res.consistent, lhs=res.lhs, stderr=res.lhs_stderr, rhs=res.rhs, gap=res.gap,
                bound=res.truncation_bound)
    return EXIT_OK if res.consistent else EXIT_ACCEPTANCE


def do_polymer_enum(run: Run) -> int:
    ns = run.ns
    if not 1 <= ns.max_size <= 8:
        raise UsageError("--max-size must lie in 1..8")
    counts = pm.connected_counts(ns.max_size)
    run.stamp("polymer_counts.csv", pm.write_counts_csv, counts)
    t = pm.BlockTorus(ns.torus)
    small = pm.small_sets(t, (0, 0))
    run.stamp("small_sets.jsonl", pm.write_polymers_jsonl, small)
    ok = len(small) == sum(counts[: pm.SMALL_MAX])
    run.summary("polymer-enum", ok, counts=list(counts), n_small=len(small))
    return EXIT_OK


def do_extract(run: Run) -> int:
    ns = run.ns
    t = pm.BlockTorus(2 * ns.max_size + 1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        sets = pm.enumerate_connected(t, (0, 0), ns.max_size)
    if ns.limit:
        sets = sets[: ns.limit]
    K = act.vacuum_activity(ns.z, ns.sigma)
    coeffs = act.extraction_coeffs(K, sets)
    run.stamp("extraction.csv", act.write_extraction_csv, coeffs)
    rep = act.kill_conditions(K, coeffs)
    ok = rep.worst <= 1e-6
    print(f"kill conditions on {len(sets)} sets: worst residual {rep.worst:.2e}  {'PASS' if ok else 'FAIL'}")
    run.summary("extraction", ok, n_sets=len(sets), residual0=rep.residual0, residual2=rep.residual2,
                residual3=rep.residual3)
    return EXIT_OK if ok else EXIT_ACCEPTANCE


def flow_params(ns) -> rg.FlowParams:
    return rg.FlowParams(L=ns.L, beta=ns.beta, eps=ns.eps, eps0=ns.eps0)


def do_rg_flow(run: Run) -> int:
    ns = run.ns
    p = flow_params(ns)
    if ns.sigma0 is None:
        sig, k = rg.stable_orbit(ns.k0, p, ns.j_max)
        E = np.concatenate([[0.0], np.cumsum(p.c_E * p.L**2 * (k + np.abs(sig)))[:-1]])
        states = [rg.FlowState(j, float(sig[j]), float(k[j]), float(E[j]), False) for j in range(len(sig))]
    else:
        # the quadratic term overflows soon after exit, so stop at the first escape
        states = rg.trajectory(ns.sigma0, ns.k0, p, ns.j_max)
    run.stamp("trajectory.csv", rg.write_trajectory_csv, states)
    ratio = max(max(abs(s.sigma), s.k) / (p.delta**s.j * p.eps) for s in states)
    ok = ratio <= 1 and not any(s.diverged for s in states)
    run.summary("rg-flow", ok, worst_ratio=ratio, delta=p.delta, tuned=ns.sigma0 is None)
    return EXIT_OK if ok else EXIT_ACCEPTANCE


def do_tune(run: Run) -> int:
    ns = run.ns
    p = flow_params(ns)
    rep = rg.tune_sigma0(ns.k0, p, ns.j_max)
    sig, k = rg.stable_orbit(ns.k0, p, ns.j_max)
    esc = {f"{d:+g}": rg.trajectory(rep.sigma0 + d, ns.k0, p, ns.j_max)[-1].diverged for d in (1e-6, -1e-6)}
    doc = json.loads(rep.to_json())
    doc.update({"stable_orbit_sigma0": float(sig[0]), "escapes": esc,
                "run": {"digest": run.digest, "seed": ns.seed}})
    (run.out / "tune_report.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    ratio = float((np.maximum(np.abs(sig), k) / (p.delta ** np.arange(len(sig)) * p.eps)).max())
    ok = ratio <= 1 and all(esc.values())
    print(json.dumps({"sigma0": rep.sigma0, "stable_orbit_sigma0": float(sig[0]), "escapes": esc}))
    run.summary("tuning", ok, sigma0=rep.sigma0, worst_ratio=ratio, escapes=esc)
    return EXIT_OK if ok else EXIT_ACCEPTANCE


def do_delta_k(run: Run) -> int:
    ns = run.ns
    p = flow_params(ns)
    dk = rg.deltaK_flow(p.eps_prime(), p, True, ns.j_max)
    bound = rg.deltaK_bound(p, ns.j_max)
    pinned_ok = bool((dk <= bound * (1 + 1e-12)).all())
    un = rg.deltaK_flow(p.eps_prime(), p, False, ns.j_max)
    first_violation = next((j for j in range(len(un)) if un[j] > bound[j]), None)
    ratios = {}
    zero_ok = True

    def write(path):
        nonlocal zero_ok
        with open(path, "w") as fh:
            fh.write("separation,I,j,dk,bound,T_j\n")
            for n in ns.powers:
                sep = p.L**n
                led, ratio = rg.correlation_bound(sep, p, dk)
                ratios[sep] = ratio
                zero_ok &= all(t == 0.0 for t in led.T[: led.I])
                for j, t in enumerate(led.T):
                    fh.write(f"{sep},{led.I},{j},{dk[j]!r},{bound[j]!r},{t!r}\n")

    run.stamp("delta_k.csv", write)
    ok = pinned_ok and first_violation is not None and first_violation <= 5 and zero_ok
    run.summary("delta-k", ok, pinned_ok=pinned_ok, unpinned_first_violation=first_violation,
                T_zero_below_I=zero_ok, bound_ratio={str(k): v for k, v in ratios.items()},
                ratio_ceiling=rg.ratio_ceiling(p))
    return EXIT_OK if ok else EXIT_ACCEPTANCE


def do_correlate(run: Run) -> int:
    ns = run.ns
    sd = cv.ScaleDecomposition(cv.reference_covariance(ns.L), ns.n_scales)
    grid = gs.TorusGrid(ns.grid, ns.side)
    scans = mc.decay_scan(ns.separations, ns.z, ns.beta, sd, grid, ns.n_samples, run.seeds(1)[0], run.digest)
    oracle = mc.oracle_fit(ns.separations, ns.beta, sd, grid)
    rows = []
    for z, sc in scans.items():
        for d, e in zip(sc.separations, sc.results):
            rows.append({"observable": e.name, "separation": d * math.sqrt(2) * grid.spacing, "z": z,
                         "beta": ns.beta, "L": ns.L, "n_scales": ns.n_scales, "value": e.value,
                         "stderr": e.stderr, "n_samples": e.n_samples, "seed": ns.seed})
    run.stamp("correlate.csv", mc.write_results_csv, rows)
    any_fit = scans[ns.z[0]].fit
    (run.out / "decay.gp").write_text(run.header + mc.gnuplot_script("correlate.csv", any_fit))
    fits = {}
    ok = True
    for z, sc in scans.items():
        f = sc.fit
        fits[repr(z)] = {"exponent": f.exponent, "stderr": f.exponent_stderr, "excluded": list(f.excluded)}
        if z == 0:
            ok &= abs(f.exponent + 2) <= 0.15
        else:
            ok &= -2.3 <= f.exponent <= -1.7
        print(f"z={z:g}: exponent {f.exponent:.4f} +- {f.exponent_stderr:.4f}")
    print(f"oracle exponent {oracle.exponent:.4f}")
    run.summary("correlation-decay", ok, fits=fits, oracle_exponent=oracle.exponent)
    return EXIT_OK if ok else EXIT_ACCEPTANCE


def do_report(ns) -> int:
    out = Path(ns.out)
    if not out.is_dir():
        raise UsageError(f"no run directory {out}")
    docs = []
    for f in sorted(out.glob("*.json")):
        try:
            d = json.loads(f.read_text())
        except json.JSONDecodeError:
            continue
        if isinstance(d, dict) and "criterion" in d and "passed" in d:
            docs.append(d)
    if not docs:
        raise UsageError(f"no summaries in {out}")
    ok = True
    for d in docs:
        ok &= d["passed"]
        print(f"{'PASS' if d['passed'] else 'FAIL'}  {d['criterion']:<20} ({d['command']}, digest {d['digest']})")
    if ns.compare:
        other = Path(ns.compare)
        names = sorted(p.name for p in out.iterdir() if p.is_file())
        same = all((other / n).is_file() and (other / n).read_bytes() == (out / n).read_bytes() for n in names)
        print(f"{'PASS' if same else 'FAIL'}  {'determinism':<20} ({len(names)} files vs {other})")
        ok &= same
    return EXIT_OK if ok else EXIT_ACCEPTANCE


HANDLERS = {
    "decompose": do_decompose, "gff-sample": do_gff_sample, "sg-check": do_sg_check,
    "polymer-enum": do_polymer_enum, "extract": do_extract, "rg-flow": do_rg_flow, "tune": do_tune,
    "delta-k": do_delta_k, "correlate": do_correlate,
}


def main(argv=None) -> int:
    ns = None
    try:
        ns = parse(sys.argv[1:] if argv is None else argv)
        logging.basicConfig(level=getattr(logging, str(ns.log_level).upper(), logging.WARNING))
        if ns.command == "report":
            return do_report(ns)
        return HANDLERS[ns.command](Run(ns))
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:  # --help
        return EXIT_OK if not e.code else EXIT_USAGE
    except (ValueError, ArithmeticError, RuntimeError, np.linalg.LinAlgError) as e:
        print(f"sgrg {getattr(ns, 'command', '')}: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
