"""Command-line interface: ``swm``, ``moran``, ``estimate`` and ``simulate``.

Exit codes: 0 success, 2 validation error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .algorithm import DEFAULT_PENALTY_SCALE, Mi2SLConfig, RegressionData, Variant, fit_mi2sl, format_counts, plain_tsls
from .errors import Mi2SLError, NumericalError, ValidationError
from .io import Dataset, EstimationSpec, SwmSource, check_alignment, ingest_csv, read_coords, read_swm, write_swm
from .moran import MoranResult, annihilator_residuals, moran_of_regression
from .simulate import (
    ESTIMATORS,
    DGPConfig,
    emit_table,
    experiment_label,
    run_experiment,
    main_grid,
)
from .swm import (
    SpatialWeights,
    build_distance_cutoff,
    generate_small_world,
    normalize_max_row_sum,
    spectral_decompose,
)

log = logging.getLogger("mi2sl")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3
SCHEMA_VERSION = 1
VARIANTS = {"lasso": Variant.LASSO, "post-lasso": Variant.POST_LASSO}


def sig6(x):
    """Round floats (recursively) to 6 significant digits for JSON output."""
    if isinstance(x, dict):
        return {k: sig6(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [sig6(v) for v in x]
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if not math.isfinite(x):
            return None
        return float(f"{x:.6g}")
    if isinstance(x, np.integer):
        return int(x)
    return x


def stars(p: float) -> str:
    return "***" if p < 0.01 else "**" if p < 0.05 else "*" if p < 0.1 else ""


def format_z(z: float, p: float) -> str:
    """z rounded to two decimals with significance stars, e.g. ``10.1***``."""
    r = round(z, 2)
    return f"{r:.10g}{stars(p)}" if r != 0 else f"0{stars(p)}"


def load_weights(source: SwmSource, ds: Dataset | None = None) -> SpatialWeights:
    """Raw weights from a matrix file or from coordinates with a distance cutoff."""
    if source.kind == "matrix_file":
        return read_swm(source.path)
    coords = read_coords(source.path)
    return build_distance_cutoff(coords, source.cutoff_km)


def regression_data(spec: EstimationSpec, ds: Dataset) -> RegressionData:
    return RegressionData(
        y=ds.column(spec.outcome),
        X1=ds.matrix(spec.exogenous),
        x2=ds.column(spec.endogenous),
        Z2=ds.matrix(spec.instruments),
        x1_names=list(spec.exogenous),
        x2_name=spec.endogenous,
        z2_names=list(spec.instruments),
    )


def _moran_dict(r: MoranResult) -> dict:
    return {"m": r.m, "expected_m": r.expected_m, "variance_m": r.variance_m, "z": r.z, "p_value": r.p_value, "k": r.k}


def moran_report(spec: EstimationSpec, ds: Dataset, w: SpatialWeights) -> dict:
    """Moran statistics of the naive first-stage and second-stage residuals."""
    check_alignment(ds, w)
    d = regression_data(spec, ds)
    one = np.ones((d.n, 1))
    H = np.hstack([one, d.X1, d.Z2])
    first = moran_of_regression(d.x2, H, w)
    r, _ = annihilator_residuals(d.x2, H)
    x2_hat = d.x2 - r
    second = moran_of_regression(d.y, np.hstack([one, d.X1, x2_hat[:, None]]), w)
    return {"first_stage": _moran_dict(first), "second_stage": _moran_dict(second)}


def format_moran(rep: dict, as_csv: bool = False) -> str:
    keys = ("m", "expected_m", "variance_m", "z", "p_value")
    if as_csv:
        lines = ["stage," + ",".join(keys)]
        for stage in ("first_stage", "second_stage"):
            lines.append(stage + "," + ",".join(f"{rep[stage][k]:.4g}" for k in keys))
        return "\n".join(lines) + "\n"
    out = []
    for stage, label in (("first_stage", "First stage"), ("second_stage", "Second stage")):
        s = rep[stage]
        out.append(
            f"{label:<13} m={s['m']:.4g}  E[m]={s['expected_m']:.4g}  Var(m)={s['variance_m']:.4g}  "
            f"z={format_z(s['z'], s['p_value'])}  p={s['p_value']:.4g}"
        )
    return "\n".join(out) + "\n"


def estimate_report(spec: EstimationSpec, ds: Dataset, w: SpatialWeights, cfg: Mi2SLConfig, robust_f: bool = True) -> dict:
    """Mi-2SL fit and plain 2SLS side by side, as a JSON-ready dict."""
    check_alignment(ds, w)
    d = regression_data(spec, ds)
    basis = spectral_decompose(w)
    fit = fit_mi2sl(d, basis, w, cfg)
    plain, plain_diag = plain_tsls(d, cfg.include_intercept)
    if not robust_f:
        from .estim import first_stage_f

        const = np.ones((d.n, 1)) if cfg.include_intercept else np.zeros((d.n, 0))
        e_sel = basis.eigenvectors[:, fit.selected_union]
        mi_diag = first_stage_f(d.x2, np.hstack([const, d.X1, e_sel]), d.Z2, d.z2_names, robust=False)
        plain_diag = first_stage_f(d.x2, np.hstack([const, d.X1]), d.Z2, d.z2_names, robust=False)
    else:
        mi_diag = fit.first_stage

    def coef_table(f):
        se_c, se_r = f.se(False), f.se(True)
        return {nm: {"coef": float(f.coefs[i]), "se_classical": float(se_c[i]), "se_robust": float(se_r[i])}
                for i, nm in enumerate(f.coef_names) if not nm.startswith("ev")}

    x2 = spec.endogenous
    return {
        "schema_version": SCHEMA_VERSION,
        "estimator": cfg.variant.label,
        "variant": cfg.variant.value,
        "n": d.n,
        "endogenous": x2,
        "instruments": list(spec.instruments),
        "penalty_scale": cfg.penalty_scale,
        "mi2sl": {
            "coef": fit.final.coef(x2),
            "se_robust": fit.final.stderr(x2, robust=True),
            "se_classical": fit.final.stderr(x2, robust=False),
            "coefficients": coef_table(fit.final),
            "z_first": fit.z_first,
            "z_second": fit.z_second,
            "p_first": fit.moran_first.p_value if fit.moran_first else None,
            "p_second": fit.moran_second.p_value if fit.moran_second else None,
            "lambda_first": fit.lambda_first,
            "lambda_second": fit.lambda_second,
            "selected_first": fit.selected_first,
            "selected_second": fit.selected_second,
            "selected_union": fit.selected_union,
            "counts": format_counts(fit),
            "f_full": mi_diag.f_full,
            "f_partial": mi_diag.f_partial,
            "f_robust": mi_diag.robust,
        },
        "tsls": {
            "coef": plain.coef(x2),
            "se_robust": plain.stderr(x2, robust=True),
            "se_classical": plain.stderr(x2, robust=False),
            "coefficients": coef_table(plain),
            "f_full": plain_diag.f_full,
            "f_partial": plain_diag.f_partial,
        },
    }


def format_estimate(rep: dict) -> str:
    m, t = rep["mi2sl"], rep["tsls"]
    partial = "Partial F (" + ", ".join(rep["instruments"]) + ")"
    rows = [
        ("", "2SLS", rep["estimator"]),
        (rep["endogenous"], f"{t['coef']:.3f}", f"{m['coef']:.3f}"),
        ("", f"({t['se_robust']:.3f})", f"({m['se_robust']:.3f})"),
        ("First stage F", f"{t['f_full']:.2f}", f"{m['f_full']:.2f}"),
        (partial, f"{t['f_partial']:.2f}", f"{m['f_partial']:.2f}"),
        ("Eigenvectors", "-", m["counts"]),
        ("Moran z (1st, 2nd)", "", f"{m['z_first']:.2f}, {m['z_second']:.2f}"),
    ]
    width = max(len(r[0]) for r in rows) + 2
    lines = [f"{a:<{width}}{b:>12}  {c:>14}" for a, b, c in rows]
    lines.append("Robust standard errors in parentheses; counts are union[first,second].")
    return "\n".join(lines) + "\n"


def _spec_from_args(args) -> EstimationSpec:
    if args.swm:
        source = SwmSource("matrix_file", args.swm)
    elif args.coords:
        source = SwmSource("coords", args.coords, args.cutoff)
    else:
        raise ValidationError("one of --swm or --coords is required")
    return EstimationSpec(
        outcome=args.outcome,
        endogenous=args.endogenous,
        instruments=list(args.instruments or []),
        exogenous=list(args.exogenous or []),
        swm_source=source,
        variant=VARIANTS[args.variant].value if hasattr(args, "variant") else Variant.LASSO.value,
    )


def _prepare(args) -> tuple[EstimationSpec, Dataset, SpatialWeights]:
    spec = _spec_from_args(args)
    ds, _ = ingest_csv(args.data, spec)
    w = normalize_max_row_sum(load_weights(spec.swm_source, ds))
    check_alignment(ds, w)
    return spec, ds, w


def cmd_swm(args) -> int:
    if args.action == "small-world":
        w = generate_small_world(args.n, args.k_neighbors, args.rewire, args.seed)
    elif args.action == "distance":
        if args.coords is None or args.cutoff is None:
            raise ValidationError("distance needs --coords and --cutoff")
        w = build_distance_cutoff(read_coords(args.coords), args.cutoff)
    else:
        if args.matrix is None:
            raise ValidationError(f"{args.action} needs --matrix")
        w = read_swm(args.matrix)
    if args.normalize or args.action == "normalize":
        w = normalize_max_row_sum(w)

    if args.action == "decompose":
        basis = spectral_decompose(w)
        if args.out:
            prefix = Path(args.out)
            np.savetxt(prefix.with_suffix(".eigenvalues.csv"), basis.eigenvalues[None, :], delimiter=",", fmt="%.17g")
            np.savetxt(prefix.with_suffix(".eigenvectors.csv"), basis.eigenvectors, delimiter=",", fmt="%.17g")
        print(f"n={w.n} checksum={basis.source_checksum} lambda_max={basis.eigenvalues[0]:.6g} "
              f"lambda_min={basis.eigenvalues[-1]:.6g}")
        return EXIT_OK

    if args.out:
        write_swm(w, args.out)
    rs = w.row_sums()
    print(f"n={w.n} normalization={w.normalization.value} checksum={w.checksum} links={int(np.count_nonzero(w.weights))} "
          f"row_sum_min={rs.min():.6g} row_sum_max={rs.max():.6g}")
    return EXIT_OK


def cmd_moran(args) -> int:
    spec, ds, w = _prepare(args)
    rep = moran_report(spec, ds, w)
    sys.stdout.write(format_moran(rep, args.csv))
    return EXIT_OK


def cmd_estimate(args) -> int:
    spec, ds, w = _prepare(args)
    cfg = Mi2SLConfig(variant=VARIANTS[args.variant], penalty_scale=args.penalty_scale,
                      standardize_eigenvectors=args.standardize)
    rep = estimate_report(spec, ds, w, cfg, robust_f=not args.classical_f)
    if args.out:
        Path(args.out).write_text(json.dumps(sig6(rep), indent=2) + "\n")
    if args.json:
        sys.stdout.write(json.dumps(sig6(rep), indent=2) + "\n")
    else:
        sys.stdout.write(format_estimate(rep))
    return EXIT_OK


def cmd_simulate(args) -> int:
    estimators = [e.strip() for e in args.estimators.split(",")] if args.estimators else list(ESTIMATORS)
    mi_cfg = Mi2SLConfig(penalty_scale=args.penalty_scale)
    common = dict(omega=args.omega, k_neighbors=args.k_neighbors, sigma_vu=args.sigma_vu,
                  swm_seed=args.seed, redraw_swm=args.redraw_swm)
    if args.grid:
        configs = main_grid(args.n, **common)
    else:
        configs = [DGPConfig(n=args.n, rho=args.rho, zeta31=args.zeta31, zeta32=args.zeta32,
                             rewire_prob=args.rewire, **common)]
    chunks = []
    for cfg in configs:
        log.info("running %s", experiment_label(cfg))
        rows = run_experiment(cfg, estimators, args.reps, args.seed, args.jobs, mi_cfg)
        if args.format == "csv":
            text = emit_table(rows, "csv")
            if args.grid:
                prefix = f"{cfg.rho:g},{cfg.zeta31:g},{cfg.zeta32:g},{cfg.rewire_prob:g},"
                lines = text.splitlines()
                head = "rho,zeta31,zeta32,rewire," + lines[0]
                text = "\n".join(([head] if not chunks else []) + [prefix + ln for ln in lines[1:]]) + "\n"
        else:
            text = emit_table(rows, "aligned_text", header=experiment_label(cfg))
        chunks.append(text)
    out = "".join(chunks) if args.format == "csv" else "\n".join(chunks)
    if args.out:
        Path(args.out).write_text(out)
    sys.stdout.write(out)
    return EXIT_OK


def _add_data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="CSV with a header row; row order must match the SWM")
    p.add_argument("--outcome", required=True)
    p.add_argument("--endogenous", required=True)
    p.add_argument("--exogenous", nargs="*", default=[])
    p.add_argument("--instruments", nargs="*", default=[])
    p.add_argument("--swm", help="headerless n x n weights CSV")
    p.add_argument("--coords", help="CSV with lat,lon columns (id optional)")
    p.add_argument("--cutoff", type=float, help="distance cutoff in km (with --coords)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mi2sl", description="Moran's I two-stage Lasso for spatial IV models")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("swm", help="build, normalise or decompose a spatial weights matrix")
    p.add_argument("action", choices=["small-world", "distance", "normalize", "decompose"])
    p.add_argument("--n", type=int)
    p.add_argument("--k-neighbors", type=int, default=10)
    p.add_argument("--rewire", type=float, default=0.4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--coords")
    p.add_argument("--cutoff", type=float)
    p.add_argument("--matrix", help="existing weights CSV (normalize/decompose)")
    p.add_argument("--normalize", action="store_true", help="divide by the largest row sum")
    p.add_argument("--out", help="output CSV (decompose: path prefix)")
    p.set_defaults(func=cmd_swm)

    p = sub.add_parser("moran", help="standardised Moran's I of first- and second-stage residuals")
    _add_data_args(p)
    p.add_argument("--csv", action="store_true", help="machine-readable CSV output")
    p.set_defaults(func=cmd_moran)

    p = sub.add_parser("estimate", help="Mi-2SL estimation with plain 2SLS for comparison")
    _add_data_args(p)
    p.add_argument("--variant", choices=sorted(VARIANTS), default="lasso")
    p.add_argument("--penalty-scale", type=float, default=DEFAULT_PENALTY_SCALE)
    p.add_argument("--standardize", action="store_true", help="standardise eigenvectors before penalising")
    p.add_argument("--classical-f", action="store_true", help="classical instead of HC1 F statistics")
    p.add_argument("--out", help="write the JSON report here")
    p.add_argument("--json", action="store_true", help="print JSON instead of the text table")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("simulate", help="Monte Carlo comparison of the estimators")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--rho", type=float, default=0.4)
    p.add_argument("--zeta31", type=float, default=0.4)
    p.add_argument("--zeta32", type=float, default=0.0)
    p.add_argument("--omega", type=float, default=0.4)
    p.add_argument("--rewire", type=float, default=0.4)
    p.add_argument("--k-neighbors", type=int, default=10)
    p.add_argument("--sigma-vu", type=float, default=0.9)
    p.add_argument("--reps", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--estimators", help=f"comma-separated subset of {','.join(ESTIMATORS)}")
    p.add_argument("--penalty-scale", type=float, default=DEFAULT_PENALTY_SCALE)
    p.add_argument("--grid", action="store_true", help="run the full rho x zeta31 x zeta32 x rewiring grid")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--redraw-swm", action="store_true", help="draw a new SWM for every replication")
    p.add_argument("--format", choices=["csv", "aligned_text"], default="aligned_text")
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except Mi2SLError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    raise SystemExit(main())
