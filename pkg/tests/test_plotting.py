import numpy as np
import pytest
from hypothesis import given, strategies as st

from ofnet.evaluation import f1
from ofnet.exceptions import DataError, UsageError
from ofnet.plotting import Curve, csv_mode, iso_f1_points, load_curves, plot_reports, render_svg


@given(st.sampled_from([0.1, 0.3, 0.5, 0.7, 0.9]))
def test_iso_f1_points_have_constant_f1(f):
    r, p = iso_f1_points(f)
    assert len(r) > 10 and (p <= 1).all()
    np.testing.assert_allclose(f1(p, r), f, atol=1e-12)


def test_best_f1():
    c = Curve("x", np.array([1.0, 0.5]), np.array([0.5, 1.0]))
    assert c.best_f1 == pytest.approx(2 / 3)


def test_render_deterministic_and_escaped():
    c = Curve("a<b", np.array([0.9, 0.6]), np.array([0.2, 0.8]))
    s = render_svg([c], "t")
    assert s == render_svg([c], "t")
    assert s.startswith("<svg") and "a&lt;b" in s and "[F=0.686]" in s


def test_render_empty():
    with pytest.raises(UsageError):
        render_svg([], "t")


def test_csv_mode():
    assert csv_mode("run/pr_opr.csv") == "OPR" and csv_mode("EPR_curve.csv") == "EPR"
    assert csv_mode("curve.csv") is None


def test_plot_csv_inputs(tmp_path):
    (tmp_path / "pr_epr.csv").write_text("threshold,precision,recall\n0.1,0.5,0.9\n0.5,0.9,0.4\n")
    (tmp_path / "mine.csv").write_text("threshold,precision,recall\n0.1,0.4,0.9\n")
    written = plot_reports([tmp_path / "pr_epr.csv", tmp_path / "mine.csv"], tmp_path / "out")
    assert sorted(p.name for p in written) == ["pr_epr.svg", "pr_opr.svg"]
    epr = (tmp_path / "out" / "pr_epr.svg").read_text()
    opr = (tmp_path / "out" / "pr_opr.svg").read_text()
    assert "pr_epr" in epr and "mine" in epr
    assert "pr_epr" not in opr and "mine" in opr


def test_missing_report(tmp_path):
    (tmp_path / "run").mkdir()
    with pytest.raises(DataError):
        load_curves([tmp_path / "run"], "OPR")
