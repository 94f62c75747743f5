import json
import math
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from convextest.cli import main
from convextest.io import (
    ProblemFormatError,
    csv_text,
    discrete_scheme_to_dict,
    dumps,
    gaussian_problem_to_dict,
    parse_discrete_scheme,
    parse_gaussian_problem,
)

FIX = Path(__file__).parent / "fixtures"


def fx(name):
    return str(FIX / name)


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


class TestIO:
    def test_float_round_trip(self):
        rng = np.random.default_rng(0)
        vals = list(rng.normal(size=200) * 10.0 ** rng.integers(-300, 300, 200))
        assert json.loads(dumps(vals)) == vals

    def test_problem_round_trip(self):
        scheme = parse_gaussian_problem(json.loads(Path(fx("mixed3d.json")).read_text()))
        again = parse_gaussian_problem(json.loads(dumps(gaussian_problem_to_dict(scheme))))
        np.testing.assert_array_equal(again.sigma, scheme.sigma)
        np.testing.assert_array_equal(again.theta1.vertices, scheme.theta1.vertices)

    def test_scheme_round_trip(self):
        s = parse_discrete_scheme(json.loads(Path(fx("two_outcome.json")).read_text()))
        again = parse_discrete_scheme(json.loads(dumps(discrete_scheme_to_dict(s))))
        np.testing.assert_array_equal(again.pmfs, s.pmfs)

    @pytest.mark.parametrize("data, field", [
        ({"sigma": [[1.0]]}, "dimension"),
        ({"dimension": 1, "sigma": [[1.0, 0.0]]}, "sigma"),
        ({"dimension": 1, "sigma": [[1.0]], "theta0": {"type": "blob"}}, "theta0.type"),
        ({"dimension": 1, "sigma": [[1.0]], "theta0": {"type": "ball", "center": [0.0], "radius": "x"}},
         "theta0.radius"),
        ({"dimension": 1, "sigma": [[1.0]], "theta0": {"type": "box", "lower": [0.0], "upper": [1.0]},
          "theta1": {"type": "box", "lower": [0.0, 0.0], "upper": [1.0, 1.0]}}, "theta1"),
    ])
    def test_problem_errors_name_field(self, data, field):
        with pytest.raises(ProblemFormatError) as exc:
            parse_gaussian_problem(data)
        assert exc.value.field == field

    def test_scheme_errors_name_field(self):
        with pytest.raises(ProblemFormatError) as exc:
            parse_discrete_scheme({"outcomes": 2, "params": [{"pmf": [0.5, 0.6], "label": -1}]})
        assert exc.value.field == "params[0].pmf"
        with pytest.raises(ProblemFormatError) as exc:
            parse_discrete_scheme({"outcomes": 2, "params": [{"pmf": [0.5, 0.5], "label": 0}]})
        assert exc.value.field == "params[0].label"

    def test_csv_cells(self):
        text = csv_text(["a", "b", "c"], [{"a": 0.1, "b": True, "c": None}])
        assert text == "a,b,c\n0.10000000000000001,true,\n"


class TestSolve:
    def test_box_example(self, tmp_path, capsys):
        out = tmp_path / "sol.json"
        code, _, _ = run(["solve", "--problem", fx("box1d.json"), "--out", str(out)], capsys)
        assert code == 0
        rep = json.loads(out.read_text())
        assert rep["rho"] == pytest.approx(2.0, abs=1e-8)
        assert rep["epsilon_star"] == pytest.approx(0.1586553, abs=1e-7)
        assert [p.name for p in tmp_path.iterdir()] == ["sol.json"]

    def test_stdout(self, capsys):
        code, out, _ = run(["solve", "--problem", fx("balls2d.json")], capsys)
        assert code == 0 and json.loads(out)["rho"] == pytest.approx(2.0, abs=1e-8)

    @pytest.mark.parametrize("name, code, needle", [
        ("touching.json", 2, "intersect"),
        ("not_pd.json", 1, "sigma"),
        ("missing.json", 1, "file"),
    ])
    def test_exit_codes(self, name, code, needle, capsys):
        got, _, err = run(["solve", "--problem", fx(name)], capsys)
        assert got == code and needle in err

    def test_nonconvergence_exit(self, capsys):
        code, _, err = run(["solve", "--problem", fx("mixed3d.json"), "--max-iters", "1", "--tol", "1e-15"], capsys)
        assert code == 3 and "max_iters" in err

    def test_usage_error_is_input_error(self, capsys):
        assert run(["campaign", "--kind", "sandwich"], capsys)[0] == 1
        assert run(["solve"], capsys)[0] == 1
        assert run(["--help"], capsys)[0] == 0


class TestCertify:
    def test_perturbed_pair(self, capsys):
        code, out, _ = run(["certify", "--problem", fx("box1d.json"), "--pair", fx("pair_perturbed.json")], capsys)
        rep = json.loads(out)
        assert code == 0
        assert rep["delta_raw"] == pytest.approx(1.25, abs=1e-9)
        assert all(rep["sandwich"].values())

    def test_degenerate_pair(self, capsys):
        code, _, _ = run(["certify", "--problem", fx("touching.json"), "--pair", fx("pair_degenerate.json")], capsys)
        assert code == 2

    def test_infeasible_pair(self, capsys):
        code, _, err = run(["certify", "--problem", fx("box1d.json"), "--pair", fx("pair_degenerate.json")], capsys)
        assert code == 1 and "pair" in err

    @pytest.mark.parametrize("name", ["box1d.json", "balls2d.json", "mixed3d.json"])
    def test_round_trip(self, name, tmp_path, capsys):
        sol = tmp_path / "sol.json"
        assert run(["solve", "--problem", fx(name), "--out", str(sol)], capsys)[0] == 0
        code, out, _ = run(["certify", "--problem", fx(name), "--pair", str(sol)], capsys)
        assert code == 0
        assert json.loads(out)["delta_norm"] == pytest.approx(json.loads(sol.read_text())["delta_norm"], abs=1e-10)
        assert json.loads(out)["delta_norm"] <= 1e-8


class TestSimulate:
    def test_within_three_stderr(self, capsys):
        code, out, _ = run(["simulate", "--problem", fx("box1d.json"), "--samples", "200000", "--seed", "42"], capsys)
        rep = json.loads(out)
        assert code == 0 and rep["h0"]["within_3se"] and rep["h1"]["within_3se"]

    def test_byte_identical(self, tmp_path, capsys):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        for p in (a, b):
            run(["simulate", "--problem", fx("mixed3d.json"), "--samples", "100000", "--seed", "3", "--out", str(p)],
                capsys)
        assert a.read_bytes() == b.read_bytes()

    def test_bad_samples(self, capsys):
        assert run(["simulate", "--problem", fx("box1d.json"), "--samples", "0"], capsys)[0] == 1


class TestDiscrete:
    def test_product_single_pair(self, capsys):
        code, out, _ = run(["discrete", "--scheme", fx("two_outcome.json")], capsys)
        rep = json.loads(out)
        assert code == 0
        assert rep["value"] == pytest.approx(2 * math.log(0.8), abs=1e-7)
        assert rep["worst_case_error"] == pytest.approx(0.2, abs=1e-15)

    def test_reduction(self, capsys):
        code, out, _ = run(["discrete", "--scheme", fx("two_outcome.json"), "--mode", "reduction"], capsys)
        rep = json.loads(out)
        assert code == 0 and rep["equivalence_residual"] <= 1e-6 and rep["hull_closest"]

    def test_direct(self, capsys):
        code, out, _ = run(["discrete", "--scheme", fx("two_outcome.json"), "--mode", "direct"], capsys)
        assert code == 0 and json.loads(out)["value"] == pytest.approx(math.log(0.8), abs=1e-7)

    def test_surrogates_identical(self, capsys):
        code, out, _ = run(["discrete", "--scheme", fx("identical.json"), "--mode", "surrogates"], capsys)
        lines = out.strip().splitlines()
        assert code == 0 and lines[0] == "loss,value,worst_case_error,converged"
        assert len(lines) == 4
        assert all(float(l.split(",")[2]) >= 0.5 for l in lines[1:])

    def test_single_loss(self, capsys):
        code, out, _ = run(["discrete", "--scheme", fx("two_outcome.json"), "--mode", "surrogates",
                            "--loss", "hinge"], capsys)
        assert code == 0 and out.splitlines()[1].startswith("hinge,")

    def test_malformed(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text('{"outcomes": 2, "params": [{"pmf": [0.5, 0.5], "label": -1}]}')
        code, _, err = run(["discrete", "--scheme", str(bad)], capsys)
        assert code == 1 and "params" in err


class TestCampaign:
    def test_byte_identical(self, tmp_path, capsys):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        for p in (a, b):
            assert run(["campaign", "--kind", "sandwich", "--n", "30", "--seed", "4", "--dims", "2", "5",
                        "--out", str(p)], capsys)[0] == 0
        assert a.read_bytes() == b.read_bytes()
        summary = json.loads(Path(f"{a}.summary.json").read_text())
        assert summary["pass_rate"] == 1.0

    def test_invalid_kind(self, capsys):
        code, _, err = run(["campaign", "--kind", "bogus", "--n", "3"], capsys)
        assert code == 1 and "kind" in err

    def test_thread_count_does_not_change_bytes(self, tmp_path):
        outs = []
        for threads in ("1", "3"):
            p = tmp_path / f"t{threads}.csv"
            env = dict(os.environ, CONVEXTEST_THREADS=threads)
            subprocess.run([sys.executable, "-m", "convextest.cli", "campaign", "--kind", "gaussian_bounds",
                            "--n", "4", "--seed", "1", "--dims", "1", "4", "--mc-samples", "5000",
                            "--out", str(p)], env=env, check=True, capture_output=True)
            outs.append(p.read_bytes())
        assert outs[0] == outs[1]
