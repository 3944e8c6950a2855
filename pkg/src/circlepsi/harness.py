"""Batch suites, configuration and report emission.

A suite is a list of tasks; each task returns check records.  Tasks run on a
bounded thread pool and records are sorted by name, so reports do not depend
on execution order.  Config precedence: defaults < file < ``CIRCLEPSI_*``
environment variables < explicit overrides (CLI flags).
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import json
import os
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import mpmath
import numpy as np
import scipy
from scipy.stats import unitary_group

from . import derivations as dv
from . import extension as ext
from . import fio, gerbe, spectral
from .symbols import ClassicalSymbol, LogSymbol, log_derivation, residue_trace

ENV_PREFIX = "CIRCLEPSI_"
SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    suite: str = "trace-defect"
    modes: int = 2048
    depth: int = 5
    grid: tuple = (24,)
    overlap: float = 0.6
    a: int = 1
    b: int = 1
    tolerance: float = 1e-6
    pairs: int = 10
    seed: int = 0
    workers: int = 2
    cache_dir: str | None = None
    out: str | None = None
    csv_dir: str | None = None

    def validate(self) -> RunConfig:
        names = [s.strip() for s in self.suite.split(",")]
        unknown = [s for s in names if s != "all" and s not in SUITES]
        if unknown:
            raise ConfigError(f"unknown suite(s): {', '.join(unknown)}")
        for key in ("modes", "depth", "pairs", "workers"):
            if getattr(self, key) <= 0:
                raise ConfigError(f"{key} must be positive")
        if not self.grid or any(g <= 0 for g in self.grid):
            raise ConfigError("grid resolutions must be positive")
        if self.a < 0 or self.b < 0:
            raise ConfigError("class integers must be non-negative")
        if not 0 < self.overlap < 1:
            raise ConfigError("overlap must lie in (0, 1)")
        if not 0 < self.tolerance < 1:
            raise ConfigError("tolerance must lie in (0, 1)")
        if self.depth < 2:
            raise ConfigError("depth must be at least 2")
        return self

    def suites(self) -> list:
        names = [s.strip() for s in self.suite.split(",")]
        return sorted(SUITES) if "all" in names else sorted(set(names))

    def to_json(self) -> dict:
        d = dataclasses.asdict(self)
        d["grid"] = list(self.grid)
        return d


def _coerce(key: str, raw):
    fields = {f.name: f for f in dataclasses.fields(RunConfig)}
    if key not in fields:
        raise ConfigError(f"unknown config key {key!r}")
    if raw is None:
        return None
    default = fields[key].default
    try:
        if key == "grid":
            items = raw if isinstance(raw, (list, tuple)) else str(raw).replace(" ", "").split(",")
            return tuple(int(g) for g in items if g != "")
        if key in ("cache_dir", "out", "csv_dir", "suite"):
            return str(raw)
        if isinstance(default, bool):
            return str(raw).lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return raw


def read_config_file(path: str) -> dict:
    """Flat ``key = value`` file; ``#`` comments; an optional section header is ignored."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    try:
        if not text.lstrip().startswith("["):
            text = "[circlepsi]\n" + text
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    out = {}
    for section in parser.sections():
        for k, v in parser.items(section):
            out[k.replace("-", "_")] = v
    return out


def load_config(path: str | None = None, overrides: dict | None = None, environ=None) -> RunConfig:
    environ = os.environ if environ is None else environ
    values = {}
    if path:
        values.update(read_config_file(path))
    for f in dataclasses.fields(RunConfig):
        env = environ.get(ENV_PREFIX + f.name.upper())
        if env is not None:
            values[f.name] = env
    for k, v in (overrides or {}).items():
        if v is not None:
            values[k] = v
    return RunConfig(**{k: _coerce(k, v) for k, v in values.items()}).validate()


# -- records and reports -------------------------------------------------------------


def _num(z):
    if isinstance(z, (bool, np.bool_)):
        return bool(z)
    if isinstance(z, (int, np.integer)):
        return int(z)
    z = complex(z)
    return z.real if z.imag == 0 else [z.real, z.imag]


@dataclass
class Record:
    name: str
    anchor: str
    lhs: complex
    rhs: complex
    gap: float
    tolerance: float
    passed: bool | None = None

    def __post_init__(self):
        if self.passed is None:
            self.passed = bool(self.gap <= self.tolerance)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "anchor": self.anchor,
            "lhs": _num(self.lhs),
            "rhs": _num(self.rhs),
            "gap": float(self.gap),
            "tolerance": float(self.tolerance),
            "pass": bool(self.passed),
        }


def compare(name: str, anchor: str, lhs, rhs, tol: float) -> Record:
    return Record(name, anchor, lhs, rhs, float(abs(complex(lhs) - complex(rhs))), tol)


@dataclass
class SuiteReport:
    config: RunConfig
    records: list
    series: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.records)

    def failures(self) -> list:
        return [r for r in self.records if not r.passed]

    def to_json(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "config": self.config.to_json(),
            "conventions": conventions(),
            "environment": environment(),
            "pass": self.passed,
            "records": [r.to_json() for r in sorted(self.records, key=lambda r: r.name)],
            "series": {k: self.series[k] for k in sorted(self.series)},
            "timing": self.timing,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)


def conventions() -> dict:
    return {
        "sigma": spectral.SIGMA,
        "curvatureFactor": ext.CURVATURE_FACTOR,
        "ddOrientation": gerbe.DD_ORIENTATION,
    }


def environment() -> dict:
    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "mpmath": mpmath.__version__,
        "machine": platform.machine(),
    }


# -- suites ----------------------------------------------------------------------------


def _rng(cfg: RunConfig, tag: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, tag])


def _cache(cfg: RunConfig):
    return spectral.FitCache(cfg.cache_dir) if cfg.cache_dir else None


def suite_residue(cfg: RunConfig):
    def task():
        sym = residue_trace(ClassicalSymbol.japanese_power(-1, cfg.depth))
        spectral_value = spectral.regularized_trace(spectral.q_power_diagonal(-1, cfg.modes), -1, cache=_cache(cfg)).residue
        return [
            compare("residue/japanese-inverse", "residue trace of <D>^{-1} vs residue of its zeta function at s=0",
                    spectral_value, sym, 1e-8),
            compare("residue/japanese-inverse-value", "residue trace of <D>^{-1} equals 2", sym, 2, 1e-12),
        ]

    return [task], {}


def suite_zeta(cfg: RunConfig):
    def ident():
        d = np.ones(2 * cfg.modes + 1)
        q1 = spectral.normalize_q()
        return [
            compare("zeta/identity-standard", "regularized trace of Id with weight <D>", spectral.regularized_trace(d, 0).finite_part, 0, 1e-8),
            compare("zeta/identity-normalized", "regularized trace of Id after normalization", spectral.regularized_trace(d, 0, q1).finite_part, 1, 1e-8),
        ]

    def shift(k):
        def run():
            a = ClassicalSymbol.random(_rng(cfg, 200 + k), 0, cfg.depth + 1, rank=2, K=2)
            lhs, rhs = spectral.shift_check(a, spectral.STANDARD_Q, spectral.normalize_q(), cfg.modes)
            return [compare(f"zeta/shift-{k:02d}", "change of weight: Tr_Q'(A) - Tr_Q(A) = rTr(A (log Q' - log Q))", lhs, rhs, cfg.tolerance)]

        return run

    return [ident] + [shift(k) for k in range(cfg.pairs)], {}


def _defect_pair(cfg: RunConfig, k: int):
    rng = _rng(cfg, 300 + k)
    oa, ob = (1, 0) if k % 3 == 0 else (0, 1) if k % 3 == 1 else (1, -1)
    return ClassicalSymbol.random(rng, oa, cfg.depth, K=2), ClassicalSymbol.random(rng, ob, cfg.depth, K=2)


def suite_trace_defect(cfg: RunConfig):
    cache = _cache(cfg)

    def pair(k):
        def run():
            a, b = _defect_pair(cfg, k)
            rep = spectral.trace_defect_check(a, b, M=cfg.modes, cache=cache)
            rec = compare(f"trace-defect/pair-{k:02d}", "trace defect: Tr_Q([A,B]) = sigma rTr(delta_Q(A) B)", rep.lhs, rep.rhs, cfg.tolerance)
            # the opposite sign must fail, otherwise the pair does not pin sigma
            flipped = abs(rep.lhs + rep.rhs)
            sig = Record(f"trace-defect/sigma-{k:02d}", "sign of the trace defect is pinned by the pair",
                         flipped, 0, 0.0, 0.0, passed=bool(rec.passed and (flipped > 100 * rec.gap or abs(rep.rhs) < 1e-12)))
            return [rec, sig]

        return run

    return [pair(k) for k in range(cfg.pairs)], {}


def suite_curvature(cfg: RunConfig):
    q = spectral.normalize_q()

    def pair(k):
        def run():
            rng = _rng(cfg, 400 + k)
            p1, p2 = (ClassicalSymbol.random(rng, 0, cfg.depth + 1, rank=2, K=2) for _ in range(2))
            rep = ext.curvature_omega_q(p1, p2, q, M=cfg.modes)
            return [compare(f"curvature/pair-{k:02d}", "curvature: residue form vs -Tr_Q([psi1, psi2])", rep.residue_value, rep.trace_value, cfg.tolerance)]

        return run

    return [pair(k) for k in range(cfg.pairs)], {}


def _gens(cfg: RunConfig, tag: int, count: int, space, scale=0.5):
    rng = _rng(cfg, tag)
    return [space.quantize(ClassicalSymbol.random(rng, 0, 6, rank=space.N, K=1, scale=scale)) for _ in range(count)]


def suite_convergence(cfg: RunConfig):
    space = ext.Space(M=64, N=2)
    series = {}

    def stokes():
        fam = ext.exp_sum_family(_gens(cfg, 500, 2, space, scale=0.7))
        cells = (1, 2, 4)
        gaps = [ext.stokes_check(fam, (0.0, 0.0, 1.0), space, cells=c).gap for c in cells]
        series["stokes"] = {"header": ["h", "gap"], "rows": [[1.0 / c, g] for c, g in zip(cells, gaps)]}
        return [
            Record(f"convergence/stokes-ratio-{i}", "Stokes: boundary integral of A_Q vs area integral of Omega_Q, second order",
                   gaps[i] / gaps[i + 1], 4, abs(gaps[i] / gaps[i + 1] - 4), 0.7)
            for i in range(2)
        ]

    def d_alpha():
        Bs = _gens(cfg, 501, 4, space)
        F1, F2 = ext.exp_sum_family(Bs[:2]), ext.exp_sum_family(Bs[2:])
        t = np.array([0.2, 0.3])

        def omega(fams, t, v1, v2, sp):
            return ext.curvature_at(fams[0], t, v1, v2, sp)

        dO = ext.simplicial_delta(omega)([F1, F2], t, [1, 0], [0, 1], space)
        hs = (0.1, 0.05)
        gaps = [abs(ext.d_alpha(F1, F2, t, space, h) - dO) for h in hs]
        series["d-alpha"] = {"header": ["h", "gap"], "rows": [[h, g] for h, g in zip(hs, gaps)]}
        return [Record("convergence/d-alpha-ratio", "d alpha_Q = delta Omega_Q, second order in the step", gaps[0] / gaps[1], 4, abs(gaps[0] / gaps[1] - 4), 0.6)]

    def delta_alpha():
        G = [ext.exp_family(B) for B in _gens(cfg, 502, 3, space)]
        hs = (0.1, 0.05)
        res = [abs(ext.simplicial_delta(ext.alpha_form)([g.numeric(h) for g in G], [0.4], [1.0], space)) for h in hs]
        series["delta-alpha"] = {"header": ["h", "residual"], "rows": [[h, r] for h, r in zip(hs, res)]}
        return [Record("convergence/delta-alpha-ratio", "delta alpha_Q = 0, second order in the step", res[0] / res[1], 4, abs(res[0] / res[1] - 4), 0.6)]

    return [stokes, d_alpha, delta_alpha], series


def suite_dd_class(cfg: RunConfig):
    series = {}
    ab = cfg.a * cfg.b

    def cech():
        out = []
        for L in (3, 4):
            bundle = gerbe.build_decomposable_bundle(cfg.a, cfg.b, gerbe.CubicalCover(L, cfg.overlap))
            val = gerbe.cech_dd_class(bundle)
            out.append(compare(f"dd-class/cech-L{L}", "Dixmier-Douady class of the decomposable gerbe equals a b", val, ab, 0.0))
        out.append(compare("dd-class/cech-oracle", "cup product of the two integral classes",
                           gerbe.cup_product_oracle(gerbe.build_decomposable_bundle(cfg.a, cfg.b)), ab, 0.0))
        return out

    def integral(g):
        def run():
            bundle = gerbe.build_decomposable_bundle(cfg.a, cfg.b, gerbe.CubicalCover(3, cfg.overlap))
            rep = gerbe.compute_h(bundle, grid=g)
            val = gerbe.DD_ORIENTATION * rep.integral
            return [
                compare(f"dd-class/integral-H-grid{g:03d}", "integral of H over the torus reproduces the class", val, ab, 0.05 * max(ab, 1)),
                Record(f"dd-class/patch-spread-grid{g:03d}", "local H_i agree on overlaps", rep.patch_spread, 0, rep.patch_spread, 1e-8),
                Record(f"dd-class/dB-grid{g:03d}", "dB_i = H on each patch", rep.dB_residual, 0, rep.dB_residual, 1e-8),
            ]

        return run

    def slice_():
        bundle = gerbe.build_decomposable_bundle(cfg.a, cfg.b, gerbe.CubicalCover(3, cfg.overlap))
        g = min(cfg.grid)
        x, vals = gerbe.h_slice(bundle, g, 0)
        rows = [[float(x[i]), float(x[j]), float(vals[i, j].real)] for i in range(g) for j in range(g)]
        series["h-slice"] = {"header": ["x1", "x2", "H123"], "rows": rows}
        return []

    return [cech, slice_] + [integral(g) for g in cfg.grid], series


def suite_transgression(cfg: RunConfig):
    def run():
        bundle = gerbe.build_decomposable_bundle(cfg.a, cfg.b, gerbe.CubicalCover(3, cfg.overlap))
        out = []
        for r in gerbe.transgression_checks(bundle, grid=min(cfg.grid)):
            out.append(Record(f"transgression/{r.variant}-pointwise", f"variation of {r.variant}: Delta H equals the exact form", r.pointwise, 0, r.pointwise, 1e-4))
            out.append(Record(f"transgression/{r.variant}-integral", f"variation of {r.variant}: integral of Delta H vanishes", abs(r.integral), 0, abs(r.integral), 1e-3))
        v = gerbe.b_shift_residual(bundle, grid=min(cfg.grid))
        out.append(Record("transgression/b-shift", "B shifts by rTr(phi W) under a Higgs change", v, 0, v, 1e-10))
        return out

    return [run], {}


def suite_egorov(cfg: RunConfig):
    series = {}
    sine = fio.PhaseFunction.sine(0.1)

    def rotation():
        rep = fio.egorov_check(fio.build_kernel(fio.PhaseFunction.rotation(0.7), 128), ClassicalSymbol.exponential(1, 4))
        return [Record("egorov/rotation", "Egorov for a rotation is exact", rep.error, 0, rep.error, 1e-12)]

    def halving():
        a = ClassicalSymbol.random(_rng(cfg, 600), 0, 4, K=2)
        Ms = (256, 512)
        errs = [fio.egorov_check(fio.build_kernel(sine, M), a).error for M in Ms]
        series["egorov"] = {"header": ["M", "error"], "rows": [[M, e] for M, e in zip(Ms, errs)]}
        return [
            Record("egorov/nonlinear-bound", "principal symbol of K A K^{-1} is the pulled-back symbol, error <= C/M",
                   errs[0] * Ms[0], 0, errs[0] * Ms[0], 1.0),
            Record("egorov/nonlinear-halving", "Egorov error decreases when M doubles", errs[1], errs[0] / 2, errs[1], errs[0] / 2),
        ]

    def pseudo():
        k = fio.build_kernel(sine, 256)
        rep = fio.pseudo_check(k.matrix, 256)
        x = np.linspace(0, 2 * np.pi, 64, endpoint=False)
        got = fio.principal_values(rep.symbol, x)
        ref = fio.kk_leading_oracle(sine, x)
        gap = max(float(np.abs(got[r] - ref[r]).max()) for r in ref)
        return [
            Record("egorov/kk-classical", "K* K is classical of order 0 with invertible leading symbol", rep.min_leading, 0, 0.0 if rep.elliptic else 1.0, 0.5),
            Record("egorov/kk-leading", "leading symbol of K* K matches 1/(1 - f'(g(y)))", gap, 0, gap, 1e-8),
        ]

    return [rotation, halving, pseudo], series


def suite_derivations(cfg: RunConfig):
    def eidelheit(k):
        def run():
            rng = _rng(cfg, 700 + k)
            n = int(rng.integers(16, 65))
            L0 = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
            w = rng.standard_normal(n) + 1j * rng.standard_normal(n)
            res = dv.eidelheit_reconstruct(dv.MatrixDerivation.inner(L0), w / np.linalg.norm(w))
            gap = float(np.abs(dv.remove_scalar(res.L - L0)).max())
            return [Record(f"derivations/eidelheit-{k:02d}", "derivation recovered from rank-ones: L u = D(u w*) w", gap, 0, max(gap, res.residual), 1e-10)]

        return run

    def conjugator(k):
        def run():
            rng = _rng(cfg, 800 + k)
            n = int(rng.integers(4, 17))
            U = unitary_group.rvs(n, random_state=rng)
            res = dv.conjugator_reconstruct(lambda A: U @ A @ U.conj().T, n)
            lam = dv.align_scalar(res.G, U)
            gap = float(np.abs(res.G / lam - U).max())
            return [Record(f"derivations/conjugator-{k:02d}", "automorphism preserving rank one is conjugation by G", gap, 0, max(gap, res.residual, abs(abs(lam) - 1)), 1e-8)]

        return run

    def classify():
        out = []
        for name, D, want in (
            ("japanese", lambda a: log_derivation(a, LogSymbol.of_japanese(5)), (1, 1)),
            ("inner", dv.log_bracket_derivation(0, 0, ClassicalSymbol.zero(0, 5)), (0, 0)),
            ("plus-only", dv.log_bracket_derivation(1, 0), (1, 0)),
        ):
            d = dv.decompose_derivation(D)
            gap = max(abs(d.log_plus - want[0]), abs(d.log_minus - want[1]))
            out.append(Record(f"derivations/decompose-{name}", "outer derivations of the circle symbol algebra: per-ray log brackets",
                              complex(d.log_plus), complex(want[0]), gap, 1e-10))
        rng = _rng(cfg, 900)
        pairs = [(ClassicalSymbol.random(rng, 1, 8, K=2), ClassicalSymbol.random(rng, 0, 8, K=2)) for _ in range(2)]
        winding = dv.FormalOneFormClass(1, 0)
        lr = dv.symbol_leibniz_residual(dv.formal_derivation_from_one_form(winding, 8), pairs)
        out.append(Record("derivations/formal-leibniz", "derivation from a closed one-form satisfies Leibniz", lr, 0, lr, 1e-10))
        _, res, _ = dv.fit_inner(dv.formal_derivation_from_one_form(winding, 5))
        out.append(Record("derivations/winding-not-inner", "winding class gives a non-inner derivation", res, 0, 0.0, 1.0, passed=res > 1e-3))
        return out

    return [eidelheit(k) for k in range(cfg.pairs)] + [conjugator(k) for k in range(cfg.pairs)] + [classify], {}


SUITES = {
    "residue": (suite_residue, "symbolic residue trace vs spectral zeta residue"),
    "zeta": (suite_zeta, "zeta normalization and the change-of-weight formula"),
    "trace-defect": (suite_trace_defect, "regularized trace of commutators vs residue of delta_Q"),
    "curvature": (suite_curvature, "curvature of the central extension via two pipelines"),
    "convergence": (suite_convergence, "Stokes and simplicial identities under step refinement"),
    "dd-class": (suite_dd_class, "Cech and de Rham Dixmier-Douady class of the decomposable gerbe"),
    "transgression": (suite_transgression, "variation of H under changes of Q, connection and Higgs field"),
    "egorov": (suite_egorov, "Fourier integral operators on the circle: Egorov and K* K"),
    "derivations": (suite_derivations, "rank-one reconstruction and derivation classification"),
}


def _guard(fn, suite: str):
    def run():
        try:
            return fn()
        except Exception as exc:  # a crashing task is a failing record, not a crashed run
            return [Record(f"{suite}/error-{fn.__name__}", f"task raised {type(exc).__name__}: {exc}", 0, 0, float("inf"), 0.0, passed=False)]

    return run


def run_suite(cfg: RunConfig) -> SuiteReport:
    cfg.validate()
    records, series, timing = [], {}, {}
    t_all = time.perf_counter()
    for name in cfg.suites():
        t0 = time.perf_counter()
        tasks, suite_series = SUITES[name][0](cfg)
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            for recs in pool.map(lambda f: _guard(f, name)(), tasks):
                records.extend(recs or [])
        series.update(suite_series)
        timing[name] = round(time.perf_counter() - t0, 3)
    timing["total"] = round(time.perf_counter() - t_all, 3)
    records.sort(key=lambda r: r.name)
    report = SuiteReport(cfg, records, series, timing)
    if cfg.out:
        write_report(report, cfg.out)
    if cfg.csv_dir:
        emit_plot_data(report.to_json(), cfg.csv_dir)
    return report


def write_report(report: SuiteReport, path: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        fh.write(report.dumps())
        fh.write("\n")


RECORD_HEADER = ["name", "anchor", "lhs", "rhs", "gap", "tolerance", "pass"]


def emit_plot_data(report: dict, directory: str) -> list:
    """CSV tables: ``records.csv`` plus one file per data series; returns the written paths."""
    os.makedirs(directory, exist_ok=True)
    paths = []
    path = os.path.join(directory, "records.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RECORD_HEADER)
        for r in report.get("records", []):
            w.writerow([json.dumps(r[k]) if isinstance(r[k], list) else r[k] for k in RECORD_HEADER])
    paths.append(path)
    for name, data in sorted(report.get("series", {}).items()):
        path = os.path.join(directory, f"{name}.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(data["header"])
            w.writerows(data["rows"])
        paths.append(path)
    return paths


def load_report(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read report {path}: {exc}") from exc


def summary_lines(report: SuiteReport) -> list:
    lines = []
    for r in report.records:
        status = "PASS" if r.passed else "FAIL"
        line = f"{status} {r.name} gap={r.gap:.3e} tol={r.tolerance:.1e}"
        if not r.passed:
            line += f"  [{r.anchor}]"
        lines.append(line)
    lines.append(f"{'PASS' if report.passed else 'FAIL'} overall ({len(report.records)} records)")
    return lines
