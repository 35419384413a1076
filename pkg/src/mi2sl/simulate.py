"""Monte Carlo experiments on the SAR(1)/SAR(2) design with an endogenous regressor.

Data are generated from

    y  = rho W y + b1 x1 + b2 x2 + omega W x1 + omega W x2 + u
    x2 = z1 x1 + z2 z + (z31 W + z32 W^2) x2 + omega W x1 + omega W z + v

with (u, v) bivariate normal, unit variances and covariance ``sigma_vu``.
"""

from __future__ import annotations

import itertools
import logging
import math
from collections.abc import Callable, Iterable, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from decimal import ROUND_HALF_EVEN, Decimal

import numpy as np

from .algorithm import Mi2SLConfig, RegressionData, Variant, fit_mi2sl
from .errors import InvalidParameterError, Mi2SLError, NumericalError
from .estim import ols, tsls, tsls_sar
from .swm import EigenBasis, SpatialWeights, generate_small_world, normalize_max_row_sum, spectral_decompose

log = logging.getLogger(__name__)

ESTIMATORS = ("SimpOLS", "SimpIV", "2SLS-SAR", "Mi-2SLl", "Mi-2SLpl")
MI2SL_ESTIMATORS = ("Mi-2SLl", "Mi-2SLpl")
CSV_COLUMNS = ("estimator", "bias", "mse", "aase", "sel_first", "sel_second", "sel_union", "reps", "failures")
_Z95 = 1.959963984540054


@dataclass(frozen=True)
class DGPConfig:
    n: int
    rho: float = 0.4
    zeta31: float = 0.4
    zeta32: float = 0.0
    omega: float = 0.4
    beta1: float = 1.0
    beta2: float = 1.0
    zeta1: float = 1.0
    zeta2: float = 1.0
    sigma_vu: float = 0.9
    k_neighbors: int = 10
    rewire_prob: float = 0.4
    swm_seed: int = 0
    redraw_swm: bool = False

    def __post_init__(self) -> None:
        if self.n <= self.k_neighbors:
            raise InvalidParameterError(f"n ({self.n}) must exceed k_neighbors ({self.k_neighbors})")
        if not abs(self.sigma_vu) < 1:
            raise InvalidParameterError(f"|sigma_vu| must be < 1, got {self.sigma_vu}")


@dataclass(frozen=True, eq=False)
class SimDraw:
    data: RegressionData
    w: SpatialWeights
    u: np.ndarray
    v: np.ndarray


@dataclass(frozen=True)
class MonteCarloRow:
    estimator_name: str
    bias: float
    mse: float
    aase: float
    mean_selected_first: float | None = None
    mean_selected_second: float | None = None
    mean_selected_union: float | None = None
    reps: int = 0
    failures: int = 0
    coverage: float = math.nan
    mc_se: float = math.nan


@dataclass(frozen=True, eq=False)
class Experiment:
    """A DGP configuration together with its fixed, normalised weights and eigenbasis."""

    cfg: DGPConfig
    w: SpatialWeights
    basis: EigenBasis
    extras: dict = field(default_factory=dict)


def build_weights(cfg: DGPConfig, seed: int | None = None) -> SpatialWeights:
    """Normalised small-world weights for ``cfg``, checked for invertibility of both SAR filters."""
    raw = generate_small_world(cfg.n, cfg.k_neighbors, cfg.rewire_prob, cfg.swm_seed if seed is None else seed)
    w = normalize_max_row_sum(raw)
    check_stationarity(cfg, w)
    return w


def check_stationarity(cfg: DGPConfig, w: SpatialWeights, eigenvalues: np.ndarray | None = None) -> None:
    lam = np.linalg.eigvalsh(w.weights) if eigenvalues is None else eigenvalues
    r1 = np.max(np.abs(cfg.rho * lam))
    r2 = np.max(np.abs(cfg.zeta31 * lam + cfg.zeta32 * lam**2))
    if r1 >= 1 or r2 >= 1:
        raise InvalidParameterError(
            f"spatial filters not invertible: spectral radius {r1:.3f} (y), {r2:.3f} (x2); both must be < 1"
        )


def make_experiment(cfg: DGPConfig) -> Experiment:
    w = build_weights(cfg)
    return Experiment(cfg, w, spectral_decompose(w))


def gen_draw(cfg: DGPConfig, rep_seed: int, w: SpatialWeights | None = None) -> SimDraw:
    """One sample from the DGP. Deterministic in ``(cfg, rep_seed, w)``."""
    if w is None:
        w = build_weights(cfg, rep_seed if cfg.redraw_swm else None)
    n = cfg.n
    if w.n != n:
        raise InvalidParameterError(f"weights are {w.n}x{w.n}, config has n={n}")
    rng = np.random.default_rng(rep_seed)
    x1 = rng.standard_normal(n)
    z2 = rng.standard_normal(n)
    e = rng.standard_normal((n, 2))
    chol = np.linalg.cholesky(np.array([[1.0, cfg.sigma_vu], [cfg.sigma_vu, 1.0]]))
    uv = e @ chol.T
    u, v = uv[:, 0].copy(), uv[:, 1].copy()

    W = w.weights
    eye = np.eye(n)
    wx1 = W @ x1
    try:
        s2 = eye - cfg.zeta31 * W - cfg.zeta32 * (W @ W)
        x2 = np.linalg.solve(s2, cfg.zeta1 * x1 + cfg.zeta2 * z2 + cfg.omega * wx1 + cfg.omega * (W @ z2) + v)
        s1 = eye - cfg.rho * W
        y = np.linalg.solve(s1, cfg.beta1 * x1 + cfg.beta2 * x2 + cfg.omega * wx1 + cfg.omega * (W @ x2) + u)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"spatial filter is singular: {exc}") from exc
    return SimDraw(RegressionData(y, x1, x2, z2), w, u, v)


def _estimate(name: str, draw: SimDraw, basis: EigenBasis, mi_cfg: Mi2SLConfig) -> tuple[float, float, tuple[int, int, int] | None]:
    d = draw.data
    one = np.ones(d.n)
    if name == "SimpOLS":
        fit = ols(d.y, np.column_stack([one, d.X1, d.x2]))
        return float(fit.coefs[-1]), float(fit.se()[-1]), None
    if name == "SimpIV":
        fit = tsls(d.y, np.column_stack([one, d.X1, d.x2]), np.column_stack([one, d.X1, d.Z2]))
        return float(fit.coefs[-1]), float(fit.se()[-1]), None
    if name == "2SLS-SAR":
        fit = tsls_sar(d.y, d.X1, d.x2, d.Z2, draw.w)
        i = fit.index("x2")
        return float(fit.coefs[i]), float(fit.se()[i]), None
    if name in MI2SL_ESTIMATORS:
        variant = Variant.LASSO if name == "Mi-2SLl" else Variant.POST_LASSO
        fit = fit_mi2sl(d, basis, draw.w, replace(mi_cfg, variant=variant))
        counts = (len(fit.selected_first), len(fit.selected_second), len(fit.selected_union))
        return fit.beta2, fit.beta2_se(), counts
    raise InvalidParameterError(f"unknown estimator {name!r}; choose from {', '.join(ESTIMATORS)}")


def rep_seed(base_seed: int, rep: int) -> int:
    return int(base_seed) ^ int(rep)


def _run_reps(args) -> list[list[tuple]]:
    exp, estimators, reps, base_seed, mi_cfg = args
    out = []
    for r in reps:
        seed = rep_seed(base_seed, r)
        if exp.cfg.redraw_swm:
            w = build_weights(exp.cfg, seed)
            basis = spectral_decompose(w)
        else:
            w, basis = exp.w, exp.basis
        draw = gen_draw(exp.cfg, seed, w)
        row = []
        for name in estimators:
            try:
                row.append(_estimate(name, draw, basis, mi_cfg))
            except Mi2SLError as exc:
                log.debug("rep %d, %s failed: %s", r, name, exc)
                row.append(None)
        out.append(row)
    return out


@dataclass(frozen=True, eq=False)
class ExperimentResult:
    rows: list[MonteCarloRow]
    estimates: dict[str, np.ndarray]
    std_errors: dict[str, np.ndarray]
    counts: dict[str, np.ndarray]


def run_experiment_detailed(
    cfg: DGPConfig,
    estimators: Sequence[str] = ESTIMATORS,
    reps: int = 1000,
    base_seed: int = 0,
    n_jobs: int = 1,
    mi_cfg: Mi2SLConfig | None = None,
    experiment: Experiment | None = None,
) -> ExperimentResult:
    """Like :func:`run_experiment` but also returns the per-replication estimates.

    Failed fits are stored as NaN.
    """
    if reps < 1:
        raise InvalidParameterError("reps must be at least 1")
    estimators = list(estimators)
    for name in estimators:
        if name not in ESTIMATORS:
            raise InvalidParameterError(f"unknown estimator {name!r}; choose from {', '.join(ESTIMATORS)}")
    mi_cfg = mi_cfg or Mi2SLConfig()
    exp = experiment or make_experiment(cfg)

    if n_jobs > 1:
        chunks = [list(c) for c in np.array_split(np.arange(reps), n_jobs) if c.size]
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            parts = pool.map(_run_reps, [(exp, estimators, c, base_seed, mi_cfg) for c in chunks])
            per_rep = list(itertools.chain.from_iterable(parts))
    else:
        per_rep = _run_reps((exp, estimators, range(reps), base_seed, mi_cfg))

    est, ses, cnt = {}, {}, {}
    for k, name in enumerate(estimators):
        vals = [rep[k] for rep in per_rep]
        est[name] = np.array([np.nan if v is None else v[0] for v in vals])
        ses[name] = np.array([np.nan if v is None else v[1] for v in vals])
        if name in MI2SL_ESTIMATORS:
            cnt[name] = np.array([[np.nan] * 3 if v is None else v[2] for v in vals], dtype=float)
    rows = [_aggregate(name, est[name], ses[name], cnt.get(name), cfg.beta2) for name in estimators]
    return ExperimentResult(rows, est, ses, cnt)


def run_experiment(
    cfg: DGPConfig,
    estimators: Sequence[str] = ESTIMATORS,
    reps: int = 1000,
    base_seed: int = 0,
    n_jobs: int = 1,
    mi_cfg: Mi2SLConfig | None = None,
) -> list[MonteCarloRow]:
    """Bias, MSE and average classical SE of the coefficient on x2 for each estimator.

    Replication ``r`` uses seed ``base_seed ^ r``; every estimator sees the
    same draw. Failed fits are excluded from the moments and counted.
    """
    return run_experiment_detailed(cfg, estimators, reps, base_seed, n_jobs, mi_cfg).rows


def _aggregate(name: str, b: np.ndarray, se: np.ndarray, counts: np.ndarray | None, beta2: float) -> MonteCarloRow:
    ok = np.isfinite(b) & np.isfinite(se)
    failures = int(b.size - ok.sum())
    if not ok.any():
        return MonteCarloRow(name, math.nan, math.nan, math.nan, reps=int(b.size), failures=failures)
    bo, so = b[ok], se[ok]
    err = bo - beta2
    sel = (None, None, None)
    if counts is not None:
        sel = tuple(float(x) for x in counts[ok].mean(axis=0))
    covered = np.abs(err) <= _Z95 * so
    return MonteCarloRow(
        estimator_name=name,
        bias=float(np.mean(err)),
        mse=float(np.mean(err**2)),
        aase=float(np.mean(so)),
        mean_selected_first=sel[0],
        mean_selected_second=sel[1],
        mean_selected_union=sel[2],
        reps=int(b.size),
        failures=failures,
        coverage=float(np.mean(covered)),
        mc_se=float(np.std(err, ddof=1) / math.sqrt(err.size)) if err.size > 1 else math.nan,
    )


def main_grid(n: int = 100, omega: float = 0.4, rewire: Iterable[float] = (0.4, 0.8), **kw) -> list[DGPConfig]:
    """Every combination of rho, zeta31, zeta32 and rewiring probability in the main design."""
    return [
        DGPConfig(n=n, rho=rho, zeta31=z31, zeta32=z32, omega=omega, rewire_prob=p, **kw)
        for rho, z31, z32 in itertools.product((0.4, 0.8), (0.4, 0.8), (0.0, 0.4))
        for p in rewire
    ]


def run_grid(
    configs: Sequence[DGPConfig],
    estimators: Sequence[str] = ESTIMATORS,
    reps: int = 1000,
    base_seed: int = 0,
    n_jobs: int = 1,
    progress: Callable[[DGPConfig], None] | None = None,
    mi_cfg: Mi2SLConfig | None = None,
) -> list[tuple[DGPConfig, list[MonteCarloRow]]]:
    out = []
    for cfg in configs:
        if progress:
            progress(cfg)
        out.append((cfg, run_experiment(cfg, estimators, reps, base_seed, n_jobs, mi_cfg)))
    return out


def fmt3(x: float | None) -> str:
    """Three decimals, round-half-even on the decimal representation."""
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    d = Decimal(repr(float(x))).quantize(Decimal("0.001"), rounding=ROUND_HALF_EVEN)
    s = f"{d:.3f}"
    return "0.000" if s == "-0.000" else s


def _vecs(row: MonteCarloRow) -> str:
    if row.mean_selected_union is None:
        return "-"
    a, b, c = (int(Decimal(repr(v)).quantize(Decimal(1), rounding=ROUND_HALF_EVEN)) for v in
               (row.mean_selected_first, row.mean_selected_second, row.mean_selected_union))
    return f"[{a},{b}] {c}"


def emit_table(rows: Sequence[MonteCarloRow], format: str = "csv", header: str | None = None) -> str:
    """Render rows as CSV or as an aligned text table; text shows counts as "[first,second] union"."""
    if not rows:
        raise InvalidParameterError("no rows to emit")
    if format == "csv":
        lines = [",".join(CSV_COLUMNS)]
        for r in rows:
            lines.append(",".join([
                r.estimator_name, fmt3(r.bias), fmt3(r.mse), fmt3(r.aase),
                fmt3(r.mean_selected_first), fmt3(r.mean_selected_second), fmt3(r.mean_selected_union),
                str(r.reps), str(r.failures),
            ]))
        return "\n".join(lines) + "\n"
    if format == "aligned_text":
        lines = []
        if header:
            lines.append(header)
        lines.append(f"{'Estimator':>10}  {'bias':>7}  {'MSE':>7}  {'AASE':>7}  {'Vecs':<12}  {'fail':>4}")
        for r in rows:
            lines.append(
                f"{r.estimator_name:>10}  {fmt3(r.bias):>7}  {fmt3(r.mse):>7}  {fmt3(r.aase):>7}  {_vecs(r):<12}  {r.failures:>4}"
            )
        return "\n".join(lines) + "\n"
    raise InvalidParameterError(f"unknown table format {format!r}")


def experiment_label(cfg: DGPConfig) -> str:
    return (
        f"n={cfg.n} rho={cfg.rho:g} zeta31={cfg.zeta31:g} zeta32={cfg.zeta32:g} "
        f"omega={cfg.omega:g} p={cfg.rewire_prob:g}"
    )
