"""The acceptance suite: one function per criterion, shared by the tests and ``ultrahyp regress``.

Each criterion returns a :class:`CriterionResult` with a pass flag, the
tolerance it was held to and the measured numbers.  Nothing here loosens a
threshold: a criterion that cannot be met reports FAIL with its evidence.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field as dc_field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .grid_core import Field, Grid, field_from_function, random_bandlimited
from .hamilton_flow import (BumpMetric, ConstantMetric, SamplerSpec, flat_asymptotics_check, flow_many,
                            nontrapping_parameter, perturbation_stability_check)
from .littlewood_paley import (envelope, norm as lp_norm, paraproduct, resonant, shell_multiplier, shells,
                               top_shell, ys_norm)
from .psdo import QuantizedOperator, Symbol, calculus_remainder_probe, japanese, quantize_apply
from .renorm_symbols import (CheckLattice, FrozenCoefficients, RenormParams, approx_inverse_check, build_q,
                             calibrate_O, linf_uniformity_scan, materialize_O, positive_commutator_check_O,
                             positive_commutator_check_q)
from .scenario import Scenario
from .solver import (CoefficientSet, SolverConfig, evolve_linear, evolve_nonlinear, evolve_paradifferential,
                     mizohata_run, plane_wave, plane_wave_exact, self_convergence, stable_dt, verify_estimate,
                     wave_packet, weak_lipschitz_check)


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    tolerance: str
    summary: str
    measured: Dict[str, object] = dc_field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        return f"C{self.number:02d} {'PASS' if self.passed else 'FAIL'} {self.title}: {self.summary} [{self.tolerance}]"

    def to_dict(self, timing: bool = False) -> Dict[str, object]:
        d = {"number": self.number, "title": self.title, "passed": self.passed, "tolerance": self.tolerance,
             "summary": self.summary, "measured": self.measured}
        if timing:
            d["seconds"] = self.seconds
        return d


# ------------------------------------------------------------- helpers

def scenario_lattice(sc: Scenario, params: RenormParams) -> CheckLattice:
    lat = sc["lattice"]
    radii = [tuple(r) for r in lat["radii"]] if lat["radii"] else [(5 * params.R, 40)]
    return CheckLattice.build(sc.d, [(float(r), int(n)) for r, n in radii], n_phi=int(lat["n_phi"]),
                              n_dir=int(lat["n_dir"]), k1=params.k1)


def quasilinear_terms(sc: Scenario):
    """``g(u) = (1 + kappa |u|^2) g_inf`` and ``F(u) = mu |u|^2 u`` from the nonlinear section."""
    nl = sc["nonlinear"]
    G = sc.g_inf()
    d = sc.d
    kap, mu = float(nl["kappa"]), float(nl["mu"])

    def g_of_u(u):
        return (1.0 + kap * np.abs(u) ** 2)[None, None] * G.reshape((d, d) + (1,) * d)

    def F_of_u(u):
        return mu * np.abs(u) ** 2 * u

    return g_of_u, F_of_u


def nonlinear_data(sc: Scenario, amplitude: Optional[float] = None) -> np.ndarray:
    nl = sc["nonlinear"]
    grid = sc.grid()
    amp = float(nl["amplitude"] if amplitude is None else amplitude)
    r2 = sum(x ** 2 for x in grid.coords())
    return amp * np.exp(-r2) * np.exp(1j * float(nl["xi0"]) * grid.coords()[0])


# ----------------------------------------------------------- criteria

def c01_hamiltonian(seed: int = 0) -> CriterionResult:
    rng = np.random.default_rng(seed)
    worst, rows = 0.0, {}
    t0 = time.perf_counter()
    for name in ("flat", "elliptic-bump", "ultrahyperbolic-bump", "trapping-annulus"):
        m = Scenario.shipped(name).metric()
        n = 128
        d = m.d
        X = rng.standard_normal((n, d))
        X *= (3.0 * rng.uniform(0, 1, (n, 1)) ** (1 / d)) / np.linalg.norm(X, axis=1, keepdims=True)
        XI = rng.standard_normal((n, d))
        XI *= rng.uniform(0.5, 2.0, (n, 1)) / np.linalg.norm(XI, axis=1, keepdims=True)
        T = rng.uniform(1.0, 4.0, n) * rng.choice([-1.0, 1.0], n)
        res = flow_many(m, X, XI, T, tol=1e-10)
        a0 = m.hamiltonian(X, XI)
        a1 = m.hamiltonian(res.y[:, :d], res.y[:, d:])
        rel = float((np.abs(a1 - a0) / np.maximum(1.0, np.abs(a0))).max())
        rows[name] = rel
        worst = max(worst, rel)
    secs = time.perf_counter() - t0
    ok = worst <= 1e-8 and secs <= 120.0
    return CriterionResult(1, "Hamiltonian conservation", ok, "drift <= 1e-8 max(1,|a0|), <= 120 s",
                           f"worst relative drift {worst:.2e} over 512 rays in {secs:.1f} s",
                           {"per_metric": rows, "worst": worst, "runtime": secs})


def c02_flat_nontrapping(seed: int = 0) -> CriterionResult:
    rows = {}
    ok = True
    for name in ("flat", "flat-ultrahyperbolic"):
        sc = Scenario.shipped(name)
        R = float(sc["flow"]["R"])
        rep = nontrapping_parameter(sc.metric(), R, SamplerSpec(int(sc["flow"]["n_samples"]), seed))
        err = abs(rep.L - R) / R
        rows[name] = {"L": rep.L, "R": R, "rel_error": err, "verdict": rep.verdict}
        ok &= err <= 0.05 and rep.verdict == "nontrapping-estimate"
    sc = Scenario.shipped("trapping-annulus")
    fl = sc["flow"]
    rep = nontrapping_parameter(sc.metric(), float(fl["R"]), SamplerSpec(int(fl["n_samples"]), seed),
                                T_cap=fl["T_cap"])
    rows["trapping-annulus"] = {"verdict": rep.verdict, "n_uncertified": rep.n_uncertified}
    ok &= rep.verdict == "trapped-suspect"
    errs = ", ".join(f"{k} {v['rel_error']:.2%}" for k, v in rows.items() if "rel_error" in v)
    return CriterionResult(2, "flat nontrapping parameter", ok, "|L - R|/R <= 5%; annulus trapped-suspect",
                           f"{errs}; annulus {rep.verdict}", rows)


def c03_flat_asymptotics(seed: int = 0) -> CriterionResult:
    rows, ok = {}, True
    for name in ("elliptic-bump", "ultrahyperbolic-bump"):
        sc = Scenario.shipped(name)
        rep = flat_asymptotics_check(sc.metric(), float(sc["metric"]["R0"]), eps0=0.1, seed=seed)
        rows[name] = {"dev_x": rep.dev_x, "dev_xi": rep.dev_xi, "uncertified": rep.n_uncertified}
        ok &= rep.passed
    worst = max(max(r["dev_x"], r["dev_xi"]) for r in rows.values())
    return CriterionResult(3, "flat-flow asymptotics", ok, "both deviations <= eps0 = 0.1",
                           f"worst deviation {worst:.3f}", rows)


def c04_perturbation_stability(seed: int = 0) -> CriterionResult:
    rows, ok = {}, True
    for name in ("elliptic-bump", "ultrahyperbolic-bump"):
        sc = Scenario.shipped(name)
        m0 = sc.metric()
        R0 = float(sc["metric"]["R0"])
        spec = SamplerSpec(1024, seed)
        L0 = nontrapping_parameter(m0, R0, spec).L
        budget = 0.5 * math.exp(-10.0 * L0)
        m1 = m0.with_amplitude(m0.amplitude + 0.9 * budget)
        rep = perturbation_stability_check(m0, m1, R0, budget, sampler_spec=spec)
        rows[name] = {"ratio": rep.ratio, "divergence": rep.divergence, "budget": budget, "distance": rep.distance}
        ok &= rep.passed and rep.divergence <= 1e-3
    return CriterionResult(4, "perturbation stability", ok, "L-ratio in [1/2, 2], divergence <= 1e-3",
                           ", ".join(f"{k}: ratio {v['ratio']:.4f} div {v['divergence']:.1e}"
                                     for k, v in rows.items()), rows)


def c05_littlewood_paley(seed: int = 0) -> CriterionResult:
    rng = np.random.default_rng(seed)
    grid = Grid(2, 64, 2 * np.pi)
    bony = pou = recon = 0.0
    for _ in range(4):
        f = random_bandlimited(grid, 28.0, rng)
        g = random_bandlimited(grid, 28.0, rng)
        lhs = f.values * g.values
        rhs = paraproduct(f, g).values + paraproduct(g, f).values + resonant(f, g).values
        bony = max(bony, float(np.abs(lhs - rhs).max() / np.abs(lhs).max()))
        recon = max(recon, float(np.abs(shells(f).sum(axis=0) - f.values).max() / np.abs(f.values).max()))
    total = sum(shell_multiplier(grid, k) for k in range(top_shell(grid) + 1))
    pou = float(np.abs(total - 1.0).max())
    env_fail = 0
    for i in range(100):
        kmax = rng.uniform(2.0, 30.0)
        u = random_bandlimited(grid, kmax, rng)
        chk = envelope(u).check()
        env_fail += not all(chk.values())
    ok = bony <= 1e-12 and pou <= 1e-12 and recon <= 1e-12 and env_fail == 0
    return CriterionResult(5, "Bony identity, partition of unity, envelopes", ok,
                           "1e-12; 100/100 envelope suites",
                           f"Bony {bony:.1e}, partition {pou:.1e}, envelope failures {env_fail}/100",
                           {"bony": bony, "partition": pou, "reconstruction": recon, "envelope_failures": env_fail})


def calculus_pairs() -> List[Tuple[str, Symbol, Symbol]]:
    """The six-pair regression set for the symbol calculus."""
    m1 = lambda x: np.cos(x[..., 0])
    m2 = lambda x: 1 + 0.5 * np.sin(2 * x[..., 0])
    J = lambda s: (lambda xi: japanese(xi) ** s)
    return [
        ("d/dx . m2", Symbol.multiplier(lambda xi: 1j * xi[..., 0], 1, 1), Symbol.function(m2, 1)),
        ("m1<xi>^2 . m2", Symbol.separable([(m1, J(2))], 2, 1), Symbol.function(m2, 1)),
        ("m1<xi>^.5 . m2<xi>^.5", Symbol.separable([(m1, J(.5))], .5, 1), Symbol.separable([(m2, J(.5))], .5, 1)),
        ("m1<xi>^1.5 . m2<xi>^-.5", Symbol.separable([(m1, J(1.5))], 1.5, 1),
         Symbol.separable([(m2, J(-.5))], -.5, 1)),
        ("<xi>^2 . <xi>^.5", Symbol.multiplier(J(2), 2, 1), Symbol.multiplier(J(.5), .5, 1)),
        ("m1<xi>^2 . m2<xi>^2", Symbol.separable([(m1, J(2))], 2, 1), Symbol.separable([(m2, J(2))], 2, 1)),
    ]


def c06_quantization(seed: int = 0, n: int = 2048, shells_: Sequence[int] = range(3, 9)) -> CriterionResult:
    g = Grid(1, 256, 2 * np.pi)
    x = g.axis()
    u = field_from_function(g, lambda x: np.sin(x) + 0.5 * np.cos(3 * x))
    errs = {
        "identity": np.abs(quantize_apply(Symbol.constant(1.0, 1), u).values - u.values).max(),
        "derivative": np.abs(quantize_apply(Symbol.multiplier(lambda xi: 1j * xi[..., 0], 1, 1), u).values
                             - (np.cos(x) - 1.5 * np.sin(3 * x))).max(),
        "multiplication": np.abs(quantize_apply(Symbol.function(lambda y: np.cos(y[..., 0]), 1), u).values
                                 - np.cos(x) * u.values).max(),
    }
    errs = {k: float(v) for k, v in errs.items()}
    gB = Grid(1, n, 2 * np.pi)
    pairs = {}
    ok = max(errs.values()) <= 1e-10
    for name, a1, a2 in calculus_pairs():
        rep = calculus_remainder_probe(a1, a2, gB, list(shells_), seed=seed)
        pairs[name] = {k: {"slope": v["slope"], "expected": v["expected"]} for k, v in rep.extra.items()}
        ok &= rep.passed
    n_ok = sum(all(abs((v["slope"] if v["slope"] is not None else v["expected"]) - v["expected"]) <= 0.3
                   for v in p.values()) for p in pairs.values())
    return CriterionResult(6, "quantization oracles and calculus remainders", ok, "oracles 1e-10; slopes +-0.3",
                           f"oracle error {max(errs.values()):.1e}, {n_ok}/6 pairs within slope tolerance",
                           {"oracles": errs, "pairs": pairs})


def c07_linf_uniformity(seed: int = 0) -> CriterionResult:
    sc = Scenario.shipped("renorm-1d")
    base = sc.frozen()
    make = lambda R: base
    rep = linf_uniformity_scan(make, [4.0, 8.0, 16.0], sc.renorm_params(), lambda R: (int(512 * R), 20 * R),
                               [3, 4, 5, 6], trials=8, iters=12)
    grads = [r["sup_dxO"] for r in rep["rows"]]
    plates = [r["plateau"] for r in rep["rows"]]
    return CriterionResult(7, "R-uniform high-frequency bound", rep["passed"], "plateau ratio <= 2 across R",
                           f"plateaus {', '.join(f'{p:.3f}' for p in plates)} (ratio {rep['plateau_ratio']:.3f}); "
                           f"sup|dO/dx| {', '.join(f'{v:.3f}' for v in grads)}",
                           {"rows": rep["rows"], "plateau_ratio": rep["plateau_ratio"]})


def _renorm_O(sc: Scenario):
    fz = sc.frozen()
    p = calibrate_O(fz, sc.renorm_params())
    return fz, p, scenario_lattice(sc, p)


def _renorm_q(sc: Scenario):
    fz = sc.frozen()
    p = sc.renorm_params()
    if p.L_2Rp is None:
        p = replace(p, L_2Rp=nontrapping_parameter(fz.metric, 2 * p.R_prime, SamplerSpec(512)).L)
    return fz, p, scenario_lattice(sc, p)


def c08_positive_commutators(seed: int = 0) -> CriterionResult:
    fz, p, lat = _renorm_O(Scenario.shipped("renorm-O"))
    rO = positive_commutator_check_O(fz, p, lat)
    sO = positive_commutator_check_O(fz, p, lat, K_prime=0.0)
    fq, pq, latq = _renorm_q(Scenario.shipped("renorm-q"))
    qs, r = build_q(fq, pq, lattice=latq)
    rq = positive_commutator_check_q(qs, r, latq)
    qs0, r0 = build_q(fq, pq, K_prime=0.0, lattice=latq)
    sq = positive_commutator_check_q(qs0, r0, latq)
    ok = rO.passed and rq.passed and not sO.passed and not sq.passed
    return CriterionResult(8, "positive commutator lattices", ok,
                           ">= -1e-3 (1+|xi|) weighted; K'=0 sabotage must fail",
                           f"O min {rO.minimum:.2e} (sabotage {sO.minimum:.3f}), q min {rq.minimum:.2e} "
                           f"(sabotage {sq.minimum:.3f})",
                           {"O": rO.minimum, "O_sabotage": sO.minimum, "O_where_sabotage": sO.where,
                            "q": rq.minimum, "q_sabotage": sq.minimum, "q_ellipticity": rq.extra["ellipticity_margin"],
                            "K_prime_O": p.K_prime, "K_prime_q": qs.weight.K_prime})


def c09_approx_inverse(seed: int = 0) -> CriterionResult:
    sc = Scenario.shipped("renorm-1d")
    fz = sc.frozen()
    p = calibrate_O(fz, sc.renorm_params())
    sym = materialize_O(fz, p, sc.grid())
    rep = approx_inverse_check(sym, list(range(4, 10)), iters=15)
    return CriterionResult(9, "approximate inverse", rep["passed"], "log-log slope -1 +- 0.3 over shells 4-9",
                           f"slope {rep['slope']:.3f}", {"norms": rep["norms"], "slope": rep["slope"]})


def c10_solver_oracles(seed: int = 0) -> CriterionResult:
    g = Grid(2, 64, 2 * np.pi)
    pw = 0.0
    for G in (np.eye(2), np.diag([1.0, -1.0])):
        cs = CoefficientSet.from_metric(g, None, g_inf=G)
        r = evolve_linear(cs, plane_wave(g, [3, 2]), SolverConfig(dt=1e-3, T=0.1, snapshot_every=100))
        pw = max(pw, float(np.abs(r.field.data[-1] - plane_wave_exact(g, G, [3, 2], 0.1)).max()))
    rng = np.random.default_rng(seed)
    v0 = random_bandlimited(g, 15.0, rng).values
    cs = CoefficientSet.from_metric(g, None, g_inf=np.diag([1.0, -1.0]))
    r = evolve_linear(cs, v0, SolverConfig(dt=1e-3, T=0.1, snapshot_every=10))
    mass = float((max(r.report.l2) - min(r.report.l2)) / r.report.l2[0])
    sm = Scenario.shipped("mizohata")["mizohata"]
    miz = mizohata_run(g, sm["beta"], sm["k_list"], sm["T"], sm["dt"])
    miz_err = max(max(abs(row["growth"] / row["predicted"] - 1.0), row["oracle_error"]) for row in miz["rows"])
    sc = Scenario.shipped("solver-2d")
    cs = sc.coefficients()
    v0 = sc.initial_data()
    cfg = sc.solver_config()
    conv = self_convergence(cs, v0, cfg.dt, cfg.T)
    conv_p = self_convergence(cs, v0, cfg.dt, cfg.T, para=True)
    ok = pw <= 1e-8 and mass <= 1e-10 and miz_err <= 1e-6 and conv["ratio"] >= 3.5 and conv_p["ratio"] >= 3.5
    return CriterionResult(10, "solver oracles", ok, "plane wave 1e-8, mass 1e-10, Mizohata 1e-6, ratio >= 3.5",
                           f"plane wave {pw:.1e}, mass {mass:.1e}, Mizohata {miz_err:.1e}, "
                           f"ratios {conv['ratio']:.2f}/{conv_p['ratio']:.2f}",
                           {"plane_wave": pw, "mass": mass, "mizohata": miz_err, "mizohata_rows": miz["rows"],
                            "self_convergence": conv, "self_convergence_para": conv_p})


def c11_local_smoothing(seed: int = 0, k_list: Sequence[int] = range(4, 9)) -> CriterionResult:
    sc = Scenario.shipped("local-smoothing")
    g = sc.grid()
    ini = sc["initial"]
    R = float(sc["verify"]["R"])
    cs = CoefficientSet.from_metric(g, None, g_inf=sc.g_inf())
    half, one, wrap = [], [], []
    for k in k_list:
        xi0 = 1.5 * 2 ** k
        T = 12.0 / (2 * xi0)
        run = evolve_linear(cs, wave_packet(g, [xi0], ini["width"], ini["center"]),
                            SolverConfig(dt=T / 400, T=T, snapshot_every=1))
        half.append(verify_estimate(run, "local-smoothing", R=R)["ratio"])
        one.append(verify_estimate(run, "local-smoothing-H1", R=R)["ratio"])
        wrap.append(run.report.wrap_fraction)
    spread = (max(half) - min(half)) / min(half)
    mono = all(b > a for a, b in zip(one, one[1:]))
    ok = spread <= 0.3 and mono
    return CriterionResult(11, "local smoothing signature", ok, "H^1/2 spread <= 30%, H^1 increasing",
                           f"H^1/2 ratios {min(half):.4f}..{max(half):.4f} (spread {spread:.2%}); "
                           f"H^1 ratios {one[0]:.2f} -> {one[-1]:.2f}",
                           {"k": list(k_list), "half": half, "one": one, "spread": spread, "wrap": wrap})


def c12_paradiff_remainder(seed: int = 0, k1_list: Sequence[int] = (5, 7, 9)) -> CriterionResult:
    sc = Scenario.shipped("paradiff-1d")
    g = sc.grid()
    cs = sc.coefficients()
    width = sc["initial"]["width"]
    h = stable_dt(cs)
    ratios, horizons = [], []
    for k1 in k1_list:
        xi0 = 1.5 * 2 ** k1
        # group speed 2*xi0, so T = 1/(2 xi0) moves the packet one unit and never wraps
        T = 1.0 / (2 * xi0)
        n = int(math.ceil(T / h))
        cfg = SolverConfig(dt=T / n, T=T, snapshot_every=max(1, n // 20), k1=k1)
        run = evolve_paradifferential(cs, wave_packet(g, [xi0], width), cfg, compare=False)
        y = ys_norm(run.remainder, s=0).value
        x = lp_norm(run.field, "Xs", s=0).value
        ratios.append(y / x)
        horizons.append((T, n))
    mono = all(b < a for a, b in zip(ratios, ratios[1:]))
    return CriterionResult(12, "paradifferential remainder", mono, "Y/X^s decreasing in k1",
                           "ratios " + ", ".join(f"k1={k}: {r:.3g}" for k, r in zip(k1_list, ratios)),
                           {"k1": list(k1_list), "ratios": ratios, "horizons": horizons})


def c13_nonlinear(seed: int = 0) -> CriterionResult:
    sc = Scenario.shipped("nonlinear")
    g = sc.grid()
    g_of_u, F_of_u = quasilinear_terms(sc)
    cfg = sc.nonlinear_config()
    u0 = nonlinear_data(sc)
    res = evolve_nonlinear(g_of_u, F_of_u, u0, cfg, g, sc.g_inf())
    x = g.coords()[0]
    bump = np.exp(-4 * (x - 0.5) ** 2)
    eps = float(sc["nonlinear"]["perturbation"])
    w1 = weak_lipschitz_check(u0, u0 + eps * bump, g_of_u, F_of_u, cfg, g, sc.g_inf())["ratio"]
    w2 = weak_lipschitz_check(u0, u0 + 0.5 * eps * bump, g_of_u, F_of_u, cfg, g, sc.g_inf())["ratio"]
    stab = abs(w2 / w1 - 1.0)
    worst_ratio = max(res.ratios) if res.ratios else 0.0
    ok = res.converged and worst_ratio <= 0.5 and res.L_final <= 2 * res.L_initial and stab <= 0.5
    return CriterionResult(13, "nonlinear iteration", ok,
                           "ratio <= 1/2, L_final <= 2 L(u0), weak-Lipschitz within +-50%",
                           f"max ratio {worst_ratio:.2e}, L {res.L_initial:.4f} -> {res.L_final:.4f}, "
                           f"weak-Lipschitz {w1:.4f}/{w2:.4f}",
                           {"history": res.history, "ratios": res.ratios, "L_initial": res.L_initial,
                            "L_final": res.L_final, "weak_lipschitz": [w1, w2], "stability": stab})


CRITERIA: Dict[int, Callable[..., CriterionResult]] = {
    1: c01_hamiltonian, 2: c02_flat_nontrapping, 3: c03_flat_asymptotics, 4: c04_perturbation_stability,
    5: c05_littlewood_paley, 6: c06_quantization, 7: c07_linf_uniformity, 8: c08_positive_commutators,
    9: c09_approx_inverse, 10: c10_solver_oracles, 11: c11_local_smoothing, 12: c12_paradiff_remainder,
    13: c13_nonlinear,
}


def run_criterion(number: int, seed: int = 0) -> CriterionResult:
    t0 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = CRITERIA[number](seed=seed)
    res.seconds = time.perf_counter() - t0
    return res


def run_all(numbers: Optional[Sequence[int]] = None, seed: int = 0, workers: int = 1) -> List[CriterionResult]:
    numbers = sorted(CRITERIA) if numbers is None else list(numbers)
    if workers <= 1:
        return [run_criterion(n, seed) for n in numbers]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(run_criterion, numbers, [seed] * len(numbers)))
