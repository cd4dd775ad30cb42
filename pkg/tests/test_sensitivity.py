from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oddownscale.features import VARIABLES
from oddownscale.models import FnnConfig, ForestConfig, LinearModel, fit_fnn, fit_forest
from oddownscale.sensitivity import (
    DEFAULT_DELTA,
    SensitivityError,
    perturb_one,
    pseudo_coefficients,
    rank_by_magnitude,
)


class Analytic:
    """Minimal predict-only model built from a row function."""

    def __init__(self, fn, kind: str = "analytic"):
        self.fn, self.kind = fn, kind

    def predict(self, x):
        return self.fn(np.atleast_2d(x))


class TestPerturbOne:
    def test_linear_coefficient(self, rng):
        coef = np.zeros(60)
        coef[4] = 0.7
        model = LinearModel(coef, 1.0)
        for delta in (1e-3, 0.1, 2.0):
            assert perturb_one(model, rng.normal(size=(10, 60)), 4, delta) == pytest.approx(0.7, abs=1e-12)

    def test_ignored_variable(self, rng):
        model = Analytic(lambda x: x[:, 0] ** 3)
        assert perturb_one(model, rng.normal(size=(10, 3)), 2, 0.01) == 0.0

    def test_symmetric_square(self):
        rows = np.array([[-2.0], [-0.5], [0.5], [2.0]])
        assert perturb_one(Analytic(lambda x: x[:, 0] ** 2), rows, 0, 0.1) == pytest.approx(0.0, abs=1e-12)

    def test_forward_mode_reads_one_sided_change(self):
        rows = np.array([[1.0]])
        model = Analytic(lambda x: x[:, 0] ** 2)
        assert perturb_one(model, rows, 0, 0.5, mode="forward") == pytest.approx(2.5)
        assert perturb_one(model, rows, 0, 0.5) == pytest.approx(2.0)

    @pytest.mark.parametrize("delta", [0.0, -0.1, float("nan")])
    def test_bad_delta(self, delta):
        with pytest.raises(SensitivityError):
            perturb_one(LinearModel([1.0], 0.0), [[1.0]], 0, delta)

    def test_bad_inputs(self):
        model = LinearModel([1.0, 1.0], 0.0)
        with pytest.raises(SensitivityError):
            perturb_one(model, np.empty((0, 2)), 0, 0.1)
        with pytest.raises(SensitivityError):
            perturb_one(model, [[1.0, 2.0]], 2, 0.1)
        with pytest.raises(SensitivityError):
            perturb_one(model, [[1.0, 2.0]], 0, 0.1, mode="backward")


class TestPseudoCoefficients:
    def test_two_variable_example(self, rng):
        model = Analytic(lambda x: 3 * x[:, 0] - x[:, 1])
        rep = pseudo_coefficients(model, rng.normal(size=(20, 2)))
        assert rep.coefficients == pytest.approx([3.0, -1.0])
        assert rep.ranks.tolist() == [1, 2]
        assert rep.signs.tolist() == [1, -1]
        assert [r[2] for r in rep.ranked()] == ["x0", "x1"]

    def test_constant_model_ranks_follow_catalog(self, rng):
        rep = pseudo_coefficients(LinearModel(np.zeros(60), 2.0), rng.normal(size=(5, 60)))
        assert np.all(rep.coefficients == 0)
        assert rep.ranks.tolist() == list(range(1, 61))

    def test_names_cover_both_sides(self, rng):
        rep = pseudo_coefficients(LinearModel(np.zeros(60), 0.0), rng.normal(size=(3, 60)))
        assert rep.names[0] == ("origin", VARIABLES[0]) and rep.names[30] == ("destination", VARIABLES[0])

    def test_default_steps(self, rng):
        x = rng.normal(size=(30, 60))
        forest = fit_forest(x, x[:, 0], ForestConfig(n_trees=10))
        rep = pseudo_coefficients(forest, x[:5])
        assert rep.delta == DEFAULT_DELTA["forest"] == 0.5 and "piecewise constant" in rep.note
        assert pseudo_coefficients(LinearModel(np.zeros(60), 0.0), x[:5]).delta == 0.01

    def test_monotone_sign(self, rng):
        model = Analytic(lambda x: np.exp(x[:, 0]) + np.tanh(x[:, 1]) - x[:, 2] ** 3)
        rep = pseudo_coefficients(model, rng.normal(size=(25, 3)), delta=0.05)
        assert rep.signs.tolist() == [1, 1, -1]

    def test_deterministic(self, rng):
        x = rng.normal(size=(30, 60))
        model = fit_fnn(x, x[:, 3] - x[:, 40], FnnConfig(width=50, epochs=40))
        a = pseudo_coefficients(model, x)
        b = pseudo_coefficients(model, x)
        assert np.array_equal(a.coefficients, b.coefficients) and np.array_equal(a.ranks, b.ranks)

    def test_network_step_robustness(self, rng):
        x = rng.normal(size=(200, 60))
        y = np.maximum(x[:, 0], 0) - 0.5 * x[:, 31] + 0.1 * rng.normal(size=200)
        model = fit_fnn(x, y, FnnConfig(width=50, depth=2, epochs=300))
        coarse = pseudo_coefficients(model, x[:50], delta=1e-2).coefficients
        fine = pseudo_coefficients(model, x[:50], delta=1e-3).coefficients
        assert np.max(np.abs(coarse - fine)) < 1e-3

    def test_csv_output(self, rng, tmp_path):
        coef = np.zeros(60)
        coef[[2, 45]] = [0.2, -0.9]
        rep = pseudo_coefficients(LinearModel(coef, 0.0), rng.normal(size=(4, 60)))
        path = tmp_path / "sens.csv"
        rep.to_csv(path)
        lines = [ln for ln in open(path).read().splitlines() if not ln.startswith("#")]
        assert lines[0] == "rank,side,variable,pseudo_coefficient,sign"
        assert lines[1].startswith("1,destination,") and lines[1].endswith(",-")
        assert lines[2].startswith("2,origin,") and lines[2].endswith(",+")
        assert len(lines) == 61

    @settings(max_examples=40)
    @given(st.integers(0, 2**32 - 1), st.floats(1e-4, 10.0), st.integers(1, 30))
    def test_linear_consistency(self, seed, delta, n_rows):
        rng = np.random.default_rng(seed)
        coef = rng.normal(size=60)
        rep = pseudo_coefficients(LinearModel(coef, rng.normal()), rng.normal(size=(n_rows, 60)), delta=delta)
        assert np.max(np.abs(rep.coefficients - coef)) < 1e-9

    @given(st.lists(st.floats(-100, 100), min_size=1, max_size=80))
    def test_ranks_are_a_permutation(self, values):
        ranks = rank_by_magnitude(values)
        assert sorted(ranks.tolist()) == list(range(1, len(values) + 1))
        mags = np.abs(np.asarray(values))[np.argsort(ranks)]
        assert np.all(np.diff(mags) <= 0)
