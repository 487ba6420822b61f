"""Batch command line: generate fields, run experiments, write CSV/JSON.

Exit status: 0 when every assertion passed, 2 when some assertion failed
(files are still written and the summary marks the failures), 1 on usage
or I/O errors.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import asdict, dataclass, field
from math import pi
from pathlib import Path

import numpy as np

from . import __version__, fieldio
from .errors import DetLabError, NewtonStall, PositivityLoss
from .experiments import (check_quasiconcavity, proof_terms, usc_probe,
                          young_measure_estimate)
from .generators import (AnalyticCounterexample, SequenceSpec, ball_volume,
                         cofactor_hessian_field, counterexample_field,
                         epsilon_shift, oscillation_sequence,
                         parse_key_values, separable_diag_field)
from .monge_ampere import MAProblem, select_reference_matrix, solve_periodic_ma
from .torus import (MatrixField, ScalarField, TorusGrid, divergence,
                    functional_D, lp_norm, mean_matrix)

log = logging.getLogger("detlab")

COMMANDS = ("gen", "functional", "quasiconcavity", "ma-solve", "probe-usc",
            "counterexample", "proof-terms", "young")

DEFAULT_TOLERANCES = {
    "qc_gap": 1e-8,
    "ma_residual": 1e-9,
    "slack": 1e-6,
    "gamma": 1e-8,
    "young": 1e-8,
    "usc_gap": 1e-8,
    "consistency": 1e-10,
    "quadrature": 0.02,
    "div_free": 1e-6,
}

EXAMPLE_STANZA = """\
# example config (key = value, command line wins)
n = 2
m = 64
k = 1..5
p = 2
out = runs/example
seed = 0
tol-override = slack=1e-6"""


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    n: int = 2
    m: int = 64
    k: list = field(default_factory=lambda: [1])
    p: float = 2.0
    margin: float = 0.1
    R: list = field(default_factory=lambda: [0.5, 0.25, 0.125])
    amplitude: float = 0.01
    out: str = "out"
    seed: int = 0
    tolerances: dict = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    input: str | None = None
    family: str | None = None
    modes: list = field(default_factory=lambda: [[1, 1]])
    eps: float = 0.5
    a: list | None = None

    def echo(self) -> dict:
        d = asdict(self)
        d["p"] = None if np.isinf(self.p) else self.p
        return d


# --------------------------------------------------------------------------
# parsing


def _int_list(key, text):
    text = str(text).strip()
    try:
        if ".." in text:
            lo, hi = text.split("..")
            return list(range(int(lo), int(hi) + 1))
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"bad value for '{key}': {text!r} (expected e.g. 1..5 or 1,2,3)")


def _float_list(key, text):
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"bad value for '{key}': {text!r} (expected e.g. 0.5,0.25)")


def _modes(key, text):
    try:
        return [[int(c) for c in grp.split(",")] for grp in str(text).split(";") if grp.strip()]
    except ValueError:
        raise UsageError(f"bad value for '{key}': {text!r} (expected e.g. 1,1;1,2)")


def _scalar(key, text, typ):
    try:
        if typ is float and str(text).strip().lower() in ("inf", "infinity"):
            return float("inf")
        return typ(text)
    except ValueError:
        raise UsageError(f"bad value for '{key}': {text!r} (expected {typ.__name__})")


CONVERTERS = {
    "n": lambda k, v: _scalar(k, v, int),
    "m": lambda k, v: _scalar(k, v, int),
    "k": _int_list,
    "p": lambda k, v: _scalar(k, v, float),
    "margin": lambda k, v: _scalar(k, v, float),
    "R": _float_list,
    "amplitude": lambda k, v: _scalar(k, v, float),
    "out": lambda k, v: str(v),
    "seed": lambda k, v: _scalar(k, v, int),
    "input": lambda k, v: str(v),
    "family": lambda k, v: str(v),
    "modes": _modes,
    "eps": lambda k, v: _scalar(k, v, float),
    "a": _float_list,
}


def _apply_tol(tols, item):
    if "=" not in item:
        raise UsageError(f"bad value for 'tol-override': {item!r} (expected KEY=VAL)")
    key, val = (s.strip() for s in item.split("=", 1))
    if key not in DEFAULT_TOLERANCES:
        raise UsageError(f"unknown tolerance key '{key}' (known: {', '.join(DEFAULT_TOLERANCES)})")
    v = _scalar(f"tol-override {key}", val, float)
    if not v >= np.finfo(float).eps:
        raise UsageError(f"tolerance '{key}' = {v} is below machine epsilon")
    tols[key] = v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="detlab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("command", choices=COMMANDS)
    for key in ("n", "m", "k", "p", "margin", "R", "amplitude", "out", "seed",
                "input", "family", "modes", "eps", "a"):
        ap.add_argument(f"--{key}", dest=key, default=None)
    ap.add_argument("--tol-override", dest="tol", action="append", default=[],
                    metavar="KEY=VAL")
    ap.add_argument("--config", default=None, metavar="FILE")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def make_config(argv) -> tuple[RunConfig, bool]:
    args = build_parser().parse_args(argv)
    cfg = RunConfig(args.command)
    if args.command == "counterexample":
        cfg.k = [1, 2, 3, 4, 5]
        cfg.m = 0  # chosen from the k range below
    settings = {}
    if args.config:
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as exc:
            raise UsageError(f"cannot read config file: {exc}")
        try:
            settings.update(parse_key_values(text))
        except ValueError as exc:
            raise UsageError(f"config file {args.config}: {exc}")
    for key in CONVERTERS:
        val = getattr(args, key)
        if val is not None:
            settings[key] = val
    tol_items = []
    for key in list(settings):
        if key in ("tol-override", "tol_override"):
            tol_items.extend(s for s in str(settings.pop(key)).split(",") if s.strip())
        elif key.startswith("tol."):
            tol_items.append(f"{key[4:]}={settings.pop(key)}")
        elif key not in CONVERTERS:
            raise UsageError(f"unknown configuration key '{key}'")
    for key, val in settings.items():
        setattr(cfg, key, CONVERTERS[key](key, val))
    for item in tol_items + list(args.tol):
        _apply_tol(cfg.tolerances, item)
    return cfg, args.verbose


# --------------------------------------------------------------------------
# helpers


class Assertions:
    def __init__(self):
        self.items = {}

    def check(self, name, passed, value=None, tolerance=None):
        self.items[name] = {"passed": bool(passed), "value": value, "tolerance": tolerance}
        if not passed:
            log.warning("assertion failed: %s (value=%r, tol=%r)", name, value, tolerance)

    @property
    def ok(self) -> bool:
        return all(v["passed"] for v in self.items.values())


def _grid(cfg) -> TorusGrid:
    try:
        return TorusGrid(cfg.n, cfg.m)
    except ValueError as exc:
        raise UsageError(f"bad grid (n={cfg.n}, m={cfg.m}): {exc}")


def _rng(cfg):
    return np.random.default_rng(cfg.seed)


def _read_input(cfg, kinds=("matrix",)):
    if cfg.input is None:
        return None
    try:
        F = fieldio.read_field(cfg.input)
    except OSError as exc:
        raise UsageError(f"cannot read input file: {exc}")
    except ValueError as exc:
        raise UsageError(f"input file {cfg.input}: {exc}")
    if F.kind not in kinds:
        raise UsageError(f"input file {cfg.input} holds a {F.kind} field, need {'/'.join(kinds)}")
    return F


def _cof_hessian(cfg, grid):
    for mode in cfg.modes:
        if len(mode) != cfg.n:
            raise UsageError(f"bad value for 'modes': {mode} is not an {cfg.n}-vector")
    return cofactor_hessian_field(cfg.n, cfg.amplitude, cfg.modes, grid)


def _matrix_input_or_generated(cfg):
    F = _read_input(cfg)
    if F is not None:
        cfg.n, cfg.m = F.grid.n, F.grid.m
        return F
    grid = _grid(cfg)
    fam = cfg.family or "cofactor-hessian"
    return _generate(cfg, fam, grid)[0]


def _manufactured_f(grid, amplitude):
    x = grid.coords()
    w = 2 * pi
    s1, s2 = np.sin(w * x[..., 0]), np.sin(w * x[..., 1])
    c1, c2 = np.cos(w * x[..., 0]), np.cos(w * x[..., 1])
    pxx = -amplitude * w * w * s1 * s2
    pxy = amplitude * w * w * c1 * c2
    return ScalarField(grid, (1 + pxx) ** 2 - pxy**2), amplitude * s1 * s2


def _generate(cfg, fam, grid):
    """Returns (field, extra summary dict)."""
    if fam == "constant":
        return MatrixField.constant(grid, np.eye(cfg.n), psd=True), {}
    if fam == "cofactor-hessian":
        return _cof_hessian(cfg, grid), {"modes": cfg.modes, "amplitude": cfg.amplitude}
    if fam == "separable":
        if cfg.n != 2:
            raise UsageError("bad value for 'n': separable fields need n = 2")
        rng = _rng(cfg)
        a = [1.0] + list(rng.uniform(-0.3, 0.3, 2))
        b = [1.0] + list(rng.uniform(-0.3, 0.3, 2))
        return separable_diag_field(a, b, grid), {"a_coef": a, "b_coef": b}
    if fam == "counterexample":
        A, rec = counterexample_field(cfg.n, None, cfg.k[0], grid)
        return A, {"exact_D": rec.exact_D, "exact_div_tv": rec.exact_div_tv}
    if fam == "oscillation":
        return oscillation_sequence(_cof_hessian(cfg, grid), cfg.k[0]), {"k": cfg.k[0]}
    raise UsageError(f"bad value for 'family': {fam!r} "
                     "(expected constant, cofactor-hessian, separable, counterexample, "
                     "oscillation, manufactured-ma)")


# --------------------------------------------------------------------------
# commands


def cmd_gen(cfg, out, A):
    grid = _grid(cfg)
    fam = cfg.family or "cofactor-hessian"
    if fam == "manufactured-ma":
        if cfg.n != 2:
            raise UsageError("bad value for 'n': manufactured-ma needs n = 2")
        f, star = _manufactured_f(grid, cfg.amplitude)
        fieldio.write_field(out / "f.json", f)
        fieldio.write_field(out / "phi_star.json", ScalarField(grid, star))
        return {"family": fam, "files": ["f.json", "phi_star.json"]}
    F, extra = _generate(cfg, fam, grid)
    fieldio.write_field(out / "field.json", F)
    return {"family": fam, "files": ["field.json"], **extra}


def cmd_functional(cfg, out, A):
    F = _matrix_input_or_generated(cfg)
    D = functional_D(F)
    row = [D, lp_norm(F, cfg.p), divergence(F).tv_estimate]
    fieldio.write_csv(out / "functional.csv", ["D", "lp", "div_tv"], [row])
    return {"D": row[0], "lp": row[1], "div_tv": row[2]}


def cmd_quasiconcavity(cfg, out, A):
    F = _matrix_input_or_generated(cfg)
    q = check_quasiconcavity(F)
    tol = cfg.tolerances["qc_gap"] * (1 + lp_norm(F, np.inf) ** F.grid.n)
    div_free = q.div_tv <= cfg.tolerances["div_free"]
    if div_free:
        A.check("quasiconcavity_gap_nonnegative", q.gap >= -tol, q.gap, -tol)
    fieldio.write_csv(out / "quasiconcavity.csv", ["gap", "mean_D", "det_mean_root", "div_tv"],
                      [[q.gap, q.mean_D, q.det_mean_root, q.div_tv]])
    return {"gap": q.gap, "mean_D": q.mean_D, "det_mean_root": q.det_mean_root,
            "div_tv": q.div_tv, "divergence_free": div_free}


def cmd_ma_solve(cfg, out, A):
    if cfg.input is not None:
        f = _read_input(cfg, kinds=("scalar",))
        cfg.n, cfg.m = f.grid.n, f.grid.m
        star = None
    else:
        cfg.n = 2
        f, star = _manufactured_f(_grid(cfg), cfg.amplitude)
    S, _ = select_reference_matrix(f, "isotropic")
    norm = ("vanish_at", tuple(cfg.a)) if cfg.a else ("mean_zero", None)
    res = solve_periodic_ma(MAProblem(f, S, norm[0], norm[1]))
    tol = cfg.tolerances["ma_residual"] if f.grid.n == 2 else max(cfg.tolerances["ma_residual"], 1e-7)
    A.check("residual_inf", res.residual_inf <= tol, res.residual_inf, tol)
    A.check("min_hessian_eig_positive", res.min_hessian_eig > 0, res.min_hessian_eig, 0.0)
    fieldio.write_ma_result(out, res)
    summary = res.summary()
    if star is not None:
        summary["error_inf"] = float(np.abs(res.phi.values - star).max())
    return summary


def cmd_counterexample(cfg, out, A):
    n = cfg.n
    kmax = max(cfg.k)
    m = cfg.m or (512 if n == 2 else min(max(64, 8 * 2**kmax), 256))
    pc = n / (n - 1)
    rows = []
    omega = ball_volume(n)
    for k in cfg.k:
        rec = AnalyticCounterexample(n, (0.5,) * n, k)
        try:
            Ak, _ = counterexample_field(n, None, k, TorusGrid(n, m))
            Ds, lps = functional_D(Ak), lp_norm(Ak, cfg.p)
        except DetLabError:
            Ds = lps = None
        rows.append([k, rec.exact_D, Ds, rec.exact_lp(cfg.p), lps, rec.exact_lp(pc),
                     rec.exact_div_tv, rec.support_radius])
        A.check(f"D_exact_k{k}", rec.exact_D == omega, rec.exact_D, omega)
        if Ds is not None and m >= 512:
            err = abs(Ds - omega) / omega
            A.check(f"D_sampled_k{k}", err <= cfg.tolerances["quadrature"], err,
                    cfg.tolerances["quadrature"])
    cols = ["k", "D", "D_sampled", "lp_p", "lp_p_sampled", "lp_crit", "div_tv", "support_radius"]
    fieldio.write_csv(out / "counterexample.csv", cols, rows)
    return {"m": m, "omega_n": omega, "div_tv": n * omega}


def cmd_probe_usc(cfg, out, A):
    fam = cfg.family or "counterexample"
    if fam == "counterexample":
        m = cfg.m if cfg.m >= 8 * 2 ** max(cfg.k) else 8 * 2 ** max(cfg.k)
        spec = SequenceSpec("counterexample", {"n": cfg.n, "m": m}, cfg.k)
    elif fam in ("oscillation", "mollified", "constant"):
        saved = cfg.family
        cfg.family = None
        base = _matrix_input_or_generated(cfg)
        cfg.family = saved
        params = {"base": base}
        if fam == "mollified":
            params["eps0"] = 0.25
        spec = SequenceSpec(fam, params, cfg.k)
    else:
        raise UsageError(f"bad value for 'family': {fam!r} "
                         "(expected counterexample, oscillation, mollified, constant)")
    rep = usc_probe(spec, cfg.p)
    fieldio.write_csv(out / "probe.csv", rep.CSV_COLUMNS, rep.csv_rows())
    if rep.D_limit_alt is not None:
        d = abs(rep.D_limit - rep.D_limit_alt)
        A.check("limit_consistency", d <= cfg.tolerances["consistency"], d,
                cfg.tolerances["consistency"])
    if fam == "oscillation" and rep.rows[0].div_tv <= cfg.tolerances["div_free"]:
        A.check("usc_gap", rep.gap <= cfg.tolerances["usc_gap"], rep.gap, cfg.tolerances["usc_gap"])
    if fam == "constant":
        A.check("usc_gap_zero", abs(rep.gap) <= cfg.tolerances["consistency"], rep.gap,
                cfg.tolerances["consistency"])
    return {"family": fam, "k_range": list(rep.k_range), "D_limit": rep.D_limit,
            "gap": rep.gap, "limsup_D": max(r.D for r in rep.rows),
            "limit_mean": list(rep.limit_mean.upper)}


def cmd_proof_terms(cfg, out, A):
    base = _matrix_input_or_generated(cfg)
    base = epsilon_shift(base, max(0.0, cfg.eps - base.min_eigenvalue()))
    Aconst = mean_matrix(base)
    a = tuple(cfg.a) if cfg.a else (0.3,) * cfg.n
    rows, reports = [], []
    for k in cfg.k:
        Ak = oscillation_sequence(base, k) if cfg.input is None else base
        for R in cfg.R:
            rep = proof_terms(Ak, Aconst, a, R, cfg.margin, eps=cfg.eps, k=k)
            rows.append(rep.csv_row())
            reports.append(rep)
            A.check(f"slack_k{k}_R{R}", rep.checks["slack_nonnegative"], rep.slack,
                    -cfg.tolerances["slack"] * (1 + rep.II))
            A.check(f"gamma_k{k}_R{R}", rep.checks["gamma_bound"], rep.gamma,
                    cfg.eps ** (1 / (cfg.n - 1)))
    fieldio.write_csv(out / "proof_terms.csv", reports[0].CSV_COLUMNS, rows)
    return {"a": list(a), "Aconst": list(Aconst.upper), "eps": cfg.eps,
            "min_slack": min(r.slack for r in reports),
            "max_S_norm": max(r.S_norm for r in reports),
            "max_lambda": max(r.lam for r in reports),
            "max_phi_c0": max(r.phi_c0 for r in reports)}


def cmd_young(cfg, out, A):
    B = _matrix_input_or_generated(cfg)
    est = young_measure_estimate(B, test_moments=True)
    if est.divergence_free:
        A.check("fm_inequality", est.det_moment <= est.det_mean_root + cfg.tolerances["young"],
                est.fm_slack, -cfg.tolerances["young"])
    A.check("weights_sum_to_one", abs(est.weights.sum() - 1) <= 1e-12, float(est.weights.sum()), 1.0)
    fieldio.write_csv(out / "young.csv", ["i", "moment"], [[i, v] for i, v in enumerate(est.moments)])
    return {"det_moment": est.det_moment, "det_mean_root": est.det_mean_root,
            "div_tv": est.div_tv, "divergence_free": est.divergence_free,
            "support_size": int(est.samples.shape[0])}


HANDLERS = {
    "gen": cmd_gen,
    "functional": cmd_functional,
    "quasiconcavity": cmd_quasiconcavity,
    "ma-solve": cmd_ma_solve,
    "probe-usc": cmd_probe_usc,
    "counterexample": cmd_counterexample,
    "proof-terms": cmd_proof_terms,
    "young": cmd_young,
}


def run(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory: {exc}")
    A = Assertions()
    t0 = time.perf_counter()
    try:
        results = HANDLERS[cfg.command](cfg, out, A)
    except (NewtonStall, PositivityLoss) as exc:
        # a failed solve is a failed run, not a usage error: keep the best iterate
        if cfg.command == "ma-solve":
            fieldio.write_ma_result(out, exc.best)
        results = {"error": f"{type(exc).__name__}: {exc}", "best": exc.best.summary()}
        A.check("solver_converged", False, exc.best.residual_inf)
    summary = {
        "command": cfg.command,
        "version": __version__,
        "config": cfg.echo(),
        "seed": cfg.seed,
        "tolerances": cfg.tolerances,
        "results": results,
        "assertions": A.items,
        "all_passed": A.ok,
        "wall_time_s": time.perf_counter() - t0,
    }
    fieldio.write_json(out / "summary.json", summary)
    return 0 if A.ok else 2


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        cfg, verbose = make_config(argv)
        logging.basicConfig(level=logging.DEBUG if verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return run(cfg)
    except SystemExit as exc:  # argparse
        return 1 if exc.code else 0
    except (UsageError, DetLabError) as exc:
        print(f"detlab: error: {exc}", file=sys.stderr)
        print(EXAMPLE_STANZA, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
