"""Command line runner: ``ultrahyp <subcommand> --scenario <path|name> --out <dir>``.

Exit status is 0 when every configured criterion passes, 1 when one fails
(``failures.json`` lists them), 2 on usage errors such as an unknown
subcommand or a malformed scenario.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import warnings
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .grid_core import Grid, random_bandlimited
from .hamilton_flow import SamplerSpec, flat_asymptotics_check, flow, nontrapping_parameter
from .psdo import calculus_remainder_probe
from .renorm_symbols import (PsiOne, build_psi2, build_q, calibrate_O, positive_commutator_check_O,
                             positive_commutator_check_q)
from .scenario import Scenario, ScenarioError, shipped_names
from .solver import (evolve_linear, evolve_nonlinear, evolve_paradifferential, mizohata_oracle, mizohata_run,
                     verify_estimate)
from . import acceptance

SUBCOMMANDS = ("rays", "trap", "flatcheck", "symbol-O", "symbol-q", "psdo-probe", "solve-linear", "solve-para",
               "solve-nonlinear", "verify", "mizohata", "regress")
KINDS = ("energy", "local-smoothing", "local-smoothing-H1", "full", "Z", "mizohata")


class UsageError(ValueError):
    pass


# ------------------------------------------------------------------ output

def _jsonable(o):
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, complex):
        return [o.real, o.imag]
    raise TypeError(f"not serialisable: {type(o).__name__}")


def _clean(o):
    """Replace non-finite floats by strings so the JSON stays standard."""
    if isinstance(o, dict):
        return {str(k): _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    if isinstance(o, (float, np.floating)) and not math.isfinite(float(o)):
        return str(float(o))
    return o


class Output:
    """Writes artifacts into one directory, each stamped with the scenario fingerprint."""

    def __init__(self, out: Path, command: str, name: str, fingerprint: str, seed: int):
        self.dir = Path(out)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.meta = {"toolkit": "ultrahyp", "version": __version__, "command": command, "scenario": name,
                     "fingerprint": fingerprint, "seed": seed}
        self.files: List[str] = []

    def json(self, name: str, payload: dict) -> Path:
        body = {"meta": self.meta, **payload}
        text = json.dumps(_clean(json.loads(json.dumps(body, default=_jsonable))), indent=2, sort_keys=True)
        return self._write(name, text + "\n")

    def csv(self, name: str, header: Sequence[str], rows) -> Path:
        buf = io.StringIO()
        m = self.meta
        buf.write(f"# ultrahyp {m['version']} command={m['command']} scenario={m['scenario']} "
                  f"fingerprint={m['fingerprint']} seed={m['seed']}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
        return self._write(name, buf.getvalue())

    def heatmap(self, name: str, data, colormap: str = "heat") -> Path:
        path = self.dir / name
        render_heatmap(data, path, colormap=colormap, comment=f"ultrahyp {__version__} {self.meta['fingerprint']}")
        self.files.append(name)
        return path

    def _write(self, name: str, text: str) -> Path:
        path = self.dir / name
        path.write_text(text)
        self.files.append(name)
        return path


# ----------------------------------------------------------------- heatmap

def _heat_lut() -> np.ndarray:
    # black -> red -> yellow -> white, piecewise linear in 256 steps
    t = np.linspace(0.0, 1.0, 256)
    r = np.clip(3 * t, 0, 1)
    g = np.clip(3 * t - 1, 0, 1)
    b = np.clip(3 * t - 2, 0, 1)
    return np.round(255 * np.stack([r, g, b], axis=1)).astype(np.uint8)


_HEAT = _heat_lut()


def render_heatmap(data, path, colormap: str = "heat", slice_index: Optional[int] = None, axis: int = 0,
                   comment: str = "ultrahyp") -> Path:
    """Write a 2-D array (or a slice of a 3-D one) as a binary PGM (``gray``) or PPM (``heat``).

    Values are mapped linearly from ``[min, max]`` onto 0..255; a constant
    array maps to 0.  Output bytes depend only on the input.
    """
    a = np.asarray(data)
    if np.iscomplexobj(a):
        a = np.abs(a)
    a = np.asarray(a, dtype=float)
    if a.ndim == 3:
        if slice_index is None or not (0 <= axis < 3) or not (0 <= slice_index < a.shape[axis]):
            raise UsageError(f"a 3-D array needs a valid slice; got axis={axis} index={slice_index}")
        a = np.take(a, slice_index, axis=axis)
    elif slice_index is not None:
        raise UsageError("slice_index applies to 3-D arrays only")
    if a.ndim != 2 or a.size == 0:
        raise UsageError(f"heatmap needs a 2-D slice, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise UsageError("heatmap input contains non-finite values")
    lo, hi = float(a.min()), float(a.max())
    idx = np.zeros(a.shape, dtype=np.uint8) if hi <= lo else np.round(255 * (a - lo) / (hi - lo)).astype(np.uint8)
    h, w = idx.shape
    comment = comment.replace("\n", " ")
    if colormap == "gray":
        head, body = b"P5", idx.tobytes()
    elif colormap == "heat":
        head, body = b"P6", _HEAT[idx].tobytes()
    else:
        raise UsageError(f"unknown colormap {colormap!r}")
    path = Path(path)
    path.write_bytes(head + f"\n# {comment}\n{w} {h}\n255\n".encode() + body)
    return path


# -------------------------------------------------------------- criteria

def _crit(name: str, passed: bool, value, threshold) -> dict:
    return {"name": name, "passed": bool(passed), "value": value, "threshold": threshold}


# ------------------------------------------------------------ subcommands

def cmd_rays(sc: Scenario, out: Output, args) -> List[dict]:
    fl = sc["flow"]
    m = sc.metric()
    rng = np.random.default_rng(sc.seed)
    n, d, R = int(fl["n_rays"]), sc.d, float(fl["R"])
    X = rng.uniform(-1, 1, (n, d)) * R / math.sqrt(d)
    XI = rng.standard_normal((n, d))
    XI /= np.linalg.norm(XI, axis=1, keepdims=True)
    rows, summary = [], []
    worst = 0.0
    for i in range(n):
        ray = flow(m, X[i], XI[i], (0.0, float(fl["T"])), tol=float(fl["tol"]))
        worst = max(worst, ray.max_drift)
        summary.append({"ray": i, "x0": X[i], "xi0": XI[i], "a0": ray.a0, "max_drift": ray.max_drift,
                        "xi_growth": ray.xi_growth, "steps": ray.steps})
        for t, x, xi, dr in zip(ray.t, ray.x, ray.xi, ray.drift):
            rows.append([i, t, *x, *xi, dr])
    out.csv("rays.csv", ["ray", "t"] + [f"x{j}" for j in range(d)] + [f"xi{j}" for j in range(d)] + ["drift"], rows)
    crit = [_crit("hamiltonian_drift", worst <= 1e-8, worst, 1e-8)]
    out.json("rays.json", {"rays": summary, "max_drift": worst, "criteria": crit})
    return crit


def cmd_trap(sc: Scenario, out: Output, args) -> List[dict]:
    fl = sc["flow"]
    m = sc.metric()
    R = float(fl["R"])
    rep = nontrapping_parameter(m, R, SamplerSpec(int(fl["n_samples"]), sc.seed), T_cap=fl["T_cap"])
    prof = sc["metric"]["profile"]
    crit = []
    if prof == "flat":
        err = abs(rep.L - R) / R
        crit.append(_crit("chord_time", err <= 0.05, err, 0.05))
    elif prof == "trapping-annulus":
        crit.append(_crit("trapped_suspect", rep.verdict == "trapped-suspect", rep.verdict, "trapped-suspect"))
    else:
        crit.append(_crit("nontrapping", rep.verdict == "nontrapping-estimate", rep.verdict, "nontrapping-estimate"))
    body = json.loads(rep.to_json())
    out.csv("exit_times.csv", ["sample", "exit_time"], [[i, t] for i, t in enumerate(rep.exit_times)])
    out.json("trap.json", {"report": body, "criteria": crit})
    return crit


def cmd_flatcheck(sc: Scenario, out: Output, args) -> List[dict]:
    m = sc.metric()
    eps0 = float(sc["flow"]["eps0"])
    rep = flat_asymptotics_check(m, float(sc["metric"]["R0"]), eps0=eps0, seed=sc.seed)
    crit = [_crit("dev_x", rep.dev_x <= eps0, rep.dev_x, eps0), _crit("dev_xi", rep.dev_xi <= eps0, rep.dev_xi, eps0),
            _crit("certified", rep.n_uncertified == 0, rep.n_uncertified, 0)]
    out.json("flatcheck.json", {"report": vars(rep), "criteria": crit})
    return crit


def _symbol_slice(fz, params, n: int = 48, lam: float = 8.0) -> np.ndarray:
    """``O(x, lam e_1)`` on an ``n x n`` grid of ``|x_i| <= 3R``."""
    R = params.R
    ax = np.linspace(-3 * R, 3 * R, n)
    X = np.stack(np.meshgrid(ax, ax, indexing="ij"), axis=-1).reshape(-1, 2)
    XI = np.zeros_like(X)
    XI[:, 0] = lam
    psi = PsiOne(fz, params).evaluate(X, XI) + np.real(build_psi2(fz, params)(X, XI))
    return np.exp(psi).reshape(n, n)


def cmd_symbol_O(sc: Scenario, out: Output, args) -> List[dict]:
    fz, p, lat = acceptance._renorm_O(sc)
    rep = positive_commutator_check_O(fz, p, lat)
    sab = positive_commutator_check_O(fz, p, lat, K_prime=0.0)
    crit = [_crit("commutator_O", rep.passed, rep.minimum, -rep.tol),
            _crit("sabotage_detected", not sab.passed, sab.minimum, -sab.tol)]
    warn = [rep.resolution_warning] if rep.resolution_warning else []
    if sc.d == 2:
        out.heatmap("O_slice.ppm", _symbol_slice(fz, p))
    out.json("symbol-O.json", {"report": json.loads(rep.to_json()), "sabotage": json.loads(sab.to_json()),
                               "params": vars(p), "warnings": warn, "criteria": crit})
    return crit + ([_crit("resolution", False, w, None)] if warn and args.strict else [])


def cmd_symbol_q(sc: Scenario, out: Output, args) -> List[dict]:
    fz, p, lat = acceptance._renorm_q(sc)
    qs, r = build_q(fz, p, lattice=lat)
    rep = positive_commutator_check_q(qs, r, lat)
    qs0, r0 = build_q(fz, p, K_prime=0.0, lattice=lat)
    sab = positive_commutator_check_q(qs0, r0, lat)
    crit = [_crit("commutator_q", rep.passed, rep.minimum, -rep.tol),
            _crit("sabotage_detected", not sab.passed, sab.minimum, -sab.tol)]
    warn = [rep.resolution_warning] if rep.resolution_warning else []
    out.json("symbol-q.json", {"report": json.loads(rep.to_json()), "sabotage": json.loads(sab.to_json()),
                               "params": vars(p), "warnings": warn, "criteria": crit})
    return crit + ([_crit("resolution", False, w, None)] if warn and args.strict else [])


def cmd_psdo_probe(sc: Scenario, out: Output, args) -> List[dict]:
    pr = sc["probe"]
    grid = Grid(1, int(pr["n"]), 2 * np.pi)
    crit, rows, reports = [], [], {}
    for i, (name, a1, a2) in enumerate(acceptance.calculus_pairs()):
        rep = calculus_remainder_probe(a1, a2, grid, list(pr["shells"]), trials=int(pr["trials"]),
                                       iters=int(pr["iters"]), seed=sc.seed)
        reports[name] = rep.extra
        for kind, v in rep.extra.items():
            for k, val in zip(pr["shells"], v["norms"]):
                rows.append([i, kind, k, val])
        crit.append(_crit(f"pair{i}:{name}", rep.passed, rep.measured, rep.reference))
    out.csv("psdo-probe.csv", ["pair", "remainder", "shell", "norm"], rows)
    out.json("psdo-probe.json", {"pairs": reports, "criteria": crit})
    return crit


def _solve(sc: Scenario, out: Output, args, para: bool) -> List[dict]:
    cs = sc.coefficients()
    v0 = sc.initial_data()
    cfg = sc.solver_config()
    run = (evolve_paradifferential(cs, v0, cfg, compare=True) if para else evolve_linear(cs, v0, cfg))
    tag = "solve-para" if para else "solve-linear"
    finite = bool(np.all(np.isfinite(run.field.data)))
    crit = [_crit("finite", finite, finite, True)]
    if args.strict:
        crit.append(_crit("no_warnings", not run.report.warnings, run.report.warnings, []))
    extra = {}
    if para and run.remainder is not None:
        extra["remainder_max"] = float(np.abs(run.remainder.data).max())
        if run.difference is not None:
            extra["difference_max"] = float(np.abs(run.difference.data).max())
    out.csv(f"{tag}.csv", ["t", "quantity", "value"], run.report.to_csv_rows())
    data = np.abs(run.field.data)
    if sc.d == 2:
        out.heatmap(f"{tag}_final.ppm", data[-1])
    elif sc.d == 1:
        out.heatmap(f"{tag}_spacetime.ppm", data)
    out.json(f"{tag}.json", {"report": json.loads(run.report.to_json()), "extra": extra, "criteria": crit})
    return crit


def cmd_solve_linear(sc, out, args):
    return _solve(sc, out, args, para=False)


def cmd_solve_para(sc, out, args):
    return _solve(sc, out, args, para=True)


def cmd_solve_nonlinear(sc: Scenario, out: Output, args) -> List[dict]:
    g = sc.grid()
    g_of_u, F_of_u = acceptance.quasilinear_terms(sc)
    res = evolve_nonlinear(g_of_u, F_of_u, acceptance.nonlinear_data(sc), sc.nonlinear_config(), g, sc.g_inf())
    worst = max(res.ratios) if res.ratios else 0.0
    crit = [_crit("contraction", worst <= 0.5, worst, 0.5),
            _crit("nontrapping_growth", res.L_final <= 2 * res.L_initial, res.L_final / res.L_initial, 2.0)]
    out.csv("iterations.csv", ["iteration", "increment"], [[i, h] for i, h in enumerate(res.history)])
    out.json("solve-nonlinear.json", {"history": res.history, "ratios": res.ratios, "L_initial": res.L_initial,
                                      "L_final": res.L_final, "s_norm": res.s_norm, "criteria": crit})
    return crit


def _mizohata_curve(sc: Scenario, out: Output) -> List[dict]:
    cs = sc.coefficients()
    if cs.b is None or cs.g is not None or cs.b_tilde is not None:
        raise UsageError("verify --kind mizohata needs a flat scenario with constant real b only")
    beta = np.real(np.asarray(cs.b)[(slice(None),) + (0,) * sc.d])
    v0 = sc.initial_data()
    cfg = sc.solver_config()
    run = evolve_linear(cs, v0, cfg)
    g = sc.grid()
    rows, worst = [], 0.0
    for t, u, l2 in zip(run.field.times, run.field.data, run.report.l2):
        ex = mizohata_oracle(g, beta, v0, float(t))
        err = float(np.abs(u - ex).max() / np.abs(ex).max())
        worst = max(worst, err)
        rows.append([float(t), l2 / run.report.l2[0], err])
    out.csv("growth_curve.csv", ["t", "l2_ratio", "oracle_error"], rows)
    crit = [_crit("oracle_match", worst <= 1e-6, worst, 1e-6)]
    out.json("verify.json", {"kind": "mizohata", "beta": beta, "curve": rows, "criteria": crit})
    return crit


def cmd_verify(sc: Scenario, out: Output, args) -> List[dict]:
    ver = sc["verify"]
    kind = args.kind or ver["kind"]
    if kind not in KINDS:
        raise UsageError(f"--kind must be one of {KINDS}")
    if kind == "mizohata":
        return _mizohata_curve(sc, out)
    run = evolve_linear(sc.coefficients(), sc.initial_data(), sc.solver_config())
    res = verify_estimate(run, kind, sigma=float(ver["sigma"]), R=float(ver["R"]))
    crit = []
    if ver.get("max_ratio") is not None:
        crit.append(_crit(f"{kind}_ratio", res["ratio"] <= ver["max_ratio"], res["ratio"], ver["max_ratio"]))
    out.json("verify.json", {"result": res, "criteria": crit})
    return crit


def cmd_mizohata(sc: Scenario, out: Output, args) -> List[dict]:
    mz = sc["mizohata"]
    beta = mz["beta"]
    if beta is None:
        beta = sc["coefficients"]["b"]["amplitude"]
    if beta is None:
        raise UsageError("mizohata needs mizohata.beta or a constant coefficients.b")
    res = mizohata_run(sc.grid(), beta, mz["k_list"], float(mz["T"]), float(mz["dt"]))
    rows = [[r["k"], r["growth"], r["predicted"], r["oracle_error"]] for r in res["rows"]]
    worst = max(max(abs(r["growth"] / r["predicted"] - 1), r["oracle_error"]) for r in res["rows"])
    crit = [_crit("growth_match", worst <= 1e-6, worst, 1e-6)]
    out.csv("mizohata.csv", ["k", "growth", "predicted", "oracle_error"], rows)
    out.json("mizohata.json", {"result": res, "criteria": crit})
    return crit


def cmd_regress(sc: Optional[Scenario], out: Output, args) -> List[dict]:
    numbers = None
    if args.only:
        try:
            numbers = sorted({int(s) for s in args.only.split(",")})
        except ValueError as exc:
            raise UsageError(f"--only expects comma-separated criterion numbers: {exc}") from exc
        bad = [n for n in numbers if n not in acceptance.CRITERIA]
        if bad:
            raise UsageError(f"unknown criteria {bad}")
    seed = args.seed if args.seed is not None else 0
    results = acceptance.run_all(numbers, seed=seed, workers=args.workers)
    width = max(len(r.title) for r in results)
    print(f"{'#':>3}  {'result':6}  {'criterion':{width}}  seconds")
    for r in results:
        print(f"{r.number:>3}  {'PASS' if r.passed else 'FAIL':6}  {r.title:{width}}  {r.seconds:7.1f}")
    out.csv("regress.csv", ["criterion", "title", "passed", "summary"],
            [[r.number, r.title, int(r.passed), r.summary] for r in results])
    crit = [_crit(f"C{r.number:02d} {r.title}", r.passed, r.summary, r.tolerance) for r in results]
    out.json("regress.json", {"results": [r.to_dict() for r in results], "criteria": crit})
    return crit


COMMANDS = {
    "rays": cmd_rays, "trap": cmd_trap, "flatcheck": cmd_flatcheck, "symbol-O": cmd_symbol_O,
    "symbol-q": cmd_symbol_q, "psdo-probe": cmd_psdo_probe, "solve-linear": cmd_solve_linear,
    "solve-para": cmd_solve_para, "solve-nonlinear": cmd_solve_nonlinear, "verify": cmd_verify,
    "mizohata": cmd_mizohata, "regress": cmd_regress,
}


# ------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ultrahyp", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"ultrahyp {__version__}")
    ap.add_argument("command", choices=SUBCOMMANDS, metavar="subcommand",
                    help="one of: " + ", ".join(SUBCOMMANDS))
    ap.add_argument("--scenario", help="scenario TOML path or shipped name (" + ", ".join(shipped_names()) + ")")
    ap.add_argument("--out", default="ultrahyp-out", help="output directory (default: ultrahyp-out)")
    ap.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    ap.add_argument("--workers", type=int, default=1, help="worker processes for regress")
    ap.add_argument("--strict", action="store_true", help="treat warnings as criterion failures")
    ap.add_argument("--kind", choices=KINDS, default=None, help="estimate for verify")
    ap.add_argument("--only", default=None, help="regress: comma-separated criterion numbers")
    return ap


def _resolve_scenario(spec: str, seed: Optional[int]) -> Scenario:
    p = Path(spec)
    if p.exists():
        return Scenario.load(p, seed=seed)
    if spec in shipped_names():
        return Scenario.shipped(spec, environ=dict(os.environ), seed=seed)
    raise ScenarioError(f"scenario {spec!r} is neither a file nor a shipped name")


def _suite_fingerprint() -> str:
    fps = "".join(Scenario.shipped(n).fingerprint() for n in shipped_names())
    return hashlib.sha256(fps.encode()).hexdigest()[:16]


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    if args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return 2
    try:
        if args.command == "regress" and args.scenario is None:
            sc, name, fp, seed = None, "shipped-suite", _suite_fingerprint(), args.seed or 0
        else:
            if args.scenario is None:
                raise UsageError(f"{args.command} needs --scenario")
            sc = _resolve_scenario(args.scenario, args.seed)
            name, fp, seed = sc.name, sc.fingerprint(), sc.seed
        out = Output(Path(args.out), args.command, name, fp, seed)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            crit = COMMANDS[args.command](sc, out, args)
    except (UsageError, ScenarioError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    failed = [c for c in crit if not c["passed"]]
    for c in crit:
        print(f"{'PASS' if c['passed'] else 'FAIL'} {c['name']}: {c['value']} (threshold {c['threshold']})")
    if failed:
        out.json("failures.json", {"failures": failed})
        print(f"{len(failed)} criterion failure(s); see {out.dir / 'failures.json'}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
