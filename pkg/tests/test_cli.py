from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from mi2sl.algorithm import Mi2SLConfig, Variant, fit_mi2sl
from mi2sl.cli import estimate_report, format_z, main, moran_report, sig6
from mi2sl.errors import DimensionMismatchError, ValidationError
from mi2sl.io import (
    EstimationSpec,
    ParseError,
    SwmSource,
    check_alignment,
    ingest_csv,
    read_coords,
    read_dataset,
    read_swm,
    write_swm,
)
from mi2sl.moran import moran_of_regression
from mi2sl.simulate import DGPConfig, gen_draw, make_experiment
from mi2sl.swm import generate_small_world, normalize_max_row_sum, spectral_decompose

SPEC = EstimationSpec("y", "x2", ["z2"], ["x1"])


def write_data(path: Path, d, ids: bool = True) -> Path:
    rows = ["id,y,x1,x2,z2" if ids else "y,x1,x2,z2"]
    for i in range(d.n):
        vals = [repr(float(v)) for v in (d.y[i], d.X1[i, 0], d.x2[i], d.Z2[i, 0])]
        rows.append(",".join(([f"u{i}"] if ids else []) + vals))
    path.write_text("\n".join(rows) + "\n")
    return path


@pytest.fixture(scope="module")
def fixture200(tmp_path_factory):
    cfg = DGPConfig(n=200)
    exp = make_experiment(cfg)
    draw = gen_draw(cfg, 2024, exp.w)
    root = tmp_path_factory.mktemp("fx")
    data = write_data(root / "data.csv", draw.data)
    swm = root / "w.csv"
    write_swm(exp.w, swm)
    return draw, exp, data, swm


def args(data, swm, *extra):
    return ["--data", str(data), "--outcome", "y", "--endogenous", "x2", "--exogenous", "x1",
            "--instruments", "z2", "--swm", str(swm), *extra]


class TestIngest:
    def test_three_rows(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("id,y,x2,z2\na,1,2,3\nb,4,5,6\nc,7,8,9\n")
        ds, coords = ingest_csv(p, EstimationSpec("y", "x2", ["z2"]))
        assert ds.n == 3 and ds.ids == ["a", "b", "c"]
        assert coords is None
        assert np.array_equal(ds.column("x2"), [2, 5, 8])

    def test_non_numeric_lat(self, tmp_path):
        p = tmp_path / "c.csv"
        p.write_text("id,lat,lon\n1,10,20\n2,abc,21\n")
        with pytest.raises(ParseError, match=r"row 2, column 'lat'"):
            read_coords(p)

    def test_missing_values_listed(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("y,x2,z2\n1,,3\n4,5,6\n7,8,NA\n")
        with pytest.raises(ParseError, match=r"row\(s\) 1, 3"):
            read_dataset(p)

    def test_missing_column(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("y,x2\n1,2\n3,4\n")
        with pytest.raises(ParseError, match="z2"):
            ingest_csv(p, EstimationSpec("y", "x2", ["z2"]))

    def test_row_count_mismatch(self, tmp_path):
        rng = np.random.default_rng(0)
        p = tmp_path / "d.csv"
        p.write_text("y,x2,z2\n" + "\n".join(",".join(map(str, r)) for r in rng.normal(size=(95, 3))) + "\n")
        ds, _ = ingest_csv(p, EstimationSpec("y", "x2", ["z2"]))
        w = generate_small_world(94, 4, 0.1, 0)
        with pytest.raises(DimensionMismatchError):
            check_alignment(ds, w)

    def test_empty_instruments(self):
        with pytest.raises(ValidationError):
            EstimationSpec("y", "x2", [])

    def test_duplicate_roles(self):
        with pytest.raises(ValidationError):
            EstimationSpec("y", "x2", ["x2"])

    def test_coords_source_needs_cutoff(self):
        with pytest.raises(ValidationError):
            SwmSource("coords", "c.csv")

    def test_swm_round_trip(self, tmp_path):
        w = normalize_max_row_sum(generate_small_world(30, 4, 0.5, 1))
        write_swm(w, tmp_path / "w.csv")
        back = read_swm(tmp_path / "w.csv")
        assert np.array_equal(back.weights, w.weights)
        assert back.checksum == w.checksum


class TestEstimate:
    def test_self_consistency(self, fixture200):
        draw, exp, data, swm = fixture200
        ds, _ = ingest_csv(data, SPEC)
        rep = estimate_report(SPEC, ds, normalize_max_row_sum(read_swm(swm)), Mi2SLConfig())
        assert abs(rep["mi2sl"]["coef"] - 1.0) < 3 * rep["mi2sl"]["se_robust"]
        assert rep["schema_version"] == 1

    def test_round_trip_bit_identical(self, fixture200, tmp_path):
        draw, exp, data, swm = fixture200
        direct = fit_mi2sl(draw.data, exp.basis, exp.w)
        w2 = read_swm(swm)
        ds, _ = ingest_csv(data, SPEC)
        d2 = type(draw.data)(ds.column("y"), ds.matrix(["x1"]), ds.column("x2"), ds.matrix(["z2"]))
        again = fit_mi2sl(d2, spectral_decompose(w2), w2)
        assert np.array_equal(direct.final.coefs, again.final.coefs)
        assert direct.selected_union == again.selected_union

    def test_variants_agree_when_second_step_selects_nothing(self, tmp_path):
        cfg = DGPConfig(n=200, rho=0.0, omega=0.0)
        exp = make_experiment(cfg)
        draw = gen_draw(cfg, 11, exp.w)
        fits = {v: fit_mi2sl(draw.data, exp.basis, exp.w, Mi2SLConfig(v)) for v in Variant}
        assert all(f.selected_second == [] for f in fits.values())
        data = write_data(tmp_path / "d.csv", draw.data)
        swm = tmp_path / "w.csv"
        write_swm(exp.w, swm)
        outs = []
        for v in ("lasso", "post-lasso"):
            out = tmp_path / f"{v}.json"
            assert main(["estimate", *args(data, swm, "--variant", v, "--out", str(out))]) == 0
            outs.append(json.loads(out.read_text())["mi2sl"])
        assert outs[0]["coef"] == outs[1]["coef"]
        assert outs[0]["se_robust"] == outs[1]["se_robust"]

    def test_text_and_json_output(self, fixture200, capsys, tmp_path):
        _, _, data, swm = fixture200
        out = tmp_path / "r.json"
        assert main(["estimate", *args(data, swm, "--out", str(out))]) == 0
        text = capsys.readouterr().out
        assert "2SLS" in text and "Mi-2SLl" in text and "Partial F (z2)" in text
        rep = json.loads(out.read_text())
        assert rep["mi2sl"]["counts"] in text
        assert rep["tsls"]["coef"] != 0
        # six significant digits
        assert len(repr(rep["mi2sl"]["coef"]).replace("-", "").replace(".", "").lstrip("0")) <= 6

    def test_classical_f_flag(self, fixture200, capsys):
        _, _, data, swm = fixture200
        assert main(["estimate", *args(data, swm, "--classical-f", "--json")]) == 0
        rep = json.loads(capsys.readouterr().out)
        assert rep["mi2sl"]["f_robust"] is False

    def test_validation_exit_code(self, fixture200, capsys):
        _, _, data, swm = fixture200
        argv = ["estimate", "--data", str(data), "--outcome", "y", "--endogenous", "x2", "--swm", str(swm)]
        assert main(argv) == 2
        assert "instrument" in capsys.readouterr().err

    def test_mismatch_exit_code(self, fixture200, tmp_path, capsys):
        _, _, data, _ = fixture200
        small = tmp_path / "w.csv"
        write_swm(generate_small_world(94, 4, 0.1, 0), small)
        assert main(["estimate", *args(data, small)]) == 2

    def test_numerical_exit_code(self, tmp_path, capsys):
        cfg = DGPConfig(n=60)
        exp = make_experiment(cfg)
        d = gen_draw(cfg, 1, exp.w).data
        bad = type(d)(d.y, d.X1, 2 * d.Z2[:, 0], d.Z2)
        data = write_data(tmp_path / "d.csv", bad)
        swm = tmp_path / "w.csv"
        write_swm(exp.w, swm)
        assert main(["estimate", *args(data, swm)]) == 3
        assert "numerical failure" in capsys.readouterr().err

    def test_coords_source(self, tmp_path, capsys):
        rng = np.random.default_rng(3)
        n = 80
        coords = np.column_stack([rng.uniform(30, 45, n), rng.uniform(-110, -80, n)])
        (tmp_path / "c.csv").write_text("id,lat,lon\n" + "\n".join(f"{i},{a:.17g},{b:.17g}" for i, (a, b) in enumerate(coords)) + "\n")
        d = gen_draw(DGPConfig(n=n, rho=0, omega=0), 5).data
        data = write_data(tmp_path / "d.csv", d)
        argv = ["moran", "--data", str(data), "--outcome", "y", "--endogenous", "x2", "--exogenous", "x1",
                "--instruments", "z2", "--coords", str(tmp_path / "c.csv"), "--cutoff", "800", "--csv"]
        assert main(argv) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "stage,m,expected_m,variance_m,z,p_value"
        assert [ln.split(",")[0] for ln in lines[1:]] == ["first_stage", "second_stage"]


class TestMoranCommand:
    @pytest.mark.parametrize("z,p,expected", [(10.1, 1e-20, "10.1***"), (2.2, 0.03, "2.2**"), (-1.7, 0.09, "-1.7*"),
                                              (0.5, 0.6, "0.5"), (3.456, 0.0005, "3.46***")])
    def test_format_z(self, z, p, expected):
        assert format_z(z, p) == expected

    def test_report_matches_module(self, fixture200):
        draw, exp, data, swm = fixture200
        ds, _ = ingest_csv(data, SPEC)
        rep = moran_report(SPEC, ds, exp.w)
        d = draw.data
        H = np.column_stack([np.ones(d.n), d.X1, d.Z2])
        assert rep["first_stage"]["z"] == pytest.approx(moran_of_regression(d.x2, H, exp.w).z, rel=1e-12)

    def test_text_output(self, fixture200, capsys):
        _, _, data, swm = fixture200
        assert main(["moran", *args(data, swm)]) == 0
        out = capsys.readouterr().out.splitlines()
        assert out[0].startswith("First stage") and out[1].startswith("Second stage")
        assert "E[m]=" in out[0] and "p=" in out[0]


class TestSwmAndSimulateCommands:
    def test_swm_small_world(self, tmp_path, capsys):
        out = tmp_path / "w.csv"
        assert main(["swm", "small-world", "--n", "40", "--k-neighbors", "4", "--seed", "2", "--normalize",
                     "--out", str(out)]) == 0
        w = read_swm(out)
        assert w.row_sums().max() == pytest.approx(1.0)
        assert w.checksum in capsys.readouterr().out

    def test_swm_decompose(self, tmp_path, capsys):
        src = tmp_path / "w.csv"
        write_swm(generate_small_world(20, 4, 0.3, 1), src)
        assert main(["swm", "decompose", "--matrix", str(src), "--normalize", "--out", str(tmp_path / "b")]) == 0
        vals = np.loadtxt(tmp_path / "b.eigenvalues.csv", delimiter=",")
        assert vals.shape == (20,) and np.all(np.diff(vals) <= 0)

    def test_swm_bad_params(self, capsys):
        assert main(["swm", "small-world", "--n", "10", "--k-neighbors", "3"]) == 2

    def test_simulate_csv(self, tmp_path, capsys):
        out = tmp_path / "sim.csv"
        rc = main(["simulate", "--n", "60", "--reps", "3", "--estimators", "SimpOLS,Mi-2SLl", "--format", "csv",
                   "--out", str(out)])
        assert rc == 0
        lines = out.read_text().splitlines()
        assert lines[0].startswith("estimator,bias")
        assert [ln.split(",")[0] for ln in lines[1:]] == ["SimpOLS", "Mi-2SLl"]

    def test_simulate_unknown_estimator(self, capsys):
        assert main(["simulate", "--n", "60", "--reps", "1", "--estimators", "GMM"]) == 2

    def test_sig6(self):
        assert sig6({"a": [1.23456789, np.float64(2.0)], "b": float("nan"), "c": np.int64(3)}) == {
            "a": [1.23457, 2.0], "b": None, "c": 3}
