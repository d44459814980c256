import json

import numpy as np
import pytest
from numpy.testing import assert_allclose

from plspoly.errors import InputError
from plspoly.model import (
    RegressionProblem,
    SyntheticSpec,
    fixture_spec,
    generate,
    load_csv,
    spectral,
)


class TestCsv:
    def test_round_trip(self, csv_pair):
        prob = load_csv(*csv_pair)
        assert_allclose(prob.design, np.diag([np.sqrt(2.0), 1.0]))
        assert_allclose(prob.response, [1.0, 1.0])

    def test_header_row_is_skipped(self, tmp_path):
        x = tmp_path / "x.csv"
        y = tmp_path / "y.csv"
        x.write_text("a,b\n1,2\n3,4\n5,7\n")
        y.write_text("y\n1\n2\n3\n")
        assert load_csv(x, y).design.shape == (3, 2)

    def test_missing_file_names_path(self, tmp_path, csv_pair):
        with pytest.raises(InputError, match="nope.csv"):
            load_csv(csv_pair[0], tmp_path / "nope.csv")

    @pytest.mark.parametrize(
        "content, message",
        [
            ("1,2\n3\n", "row 2 has 1 columns"),
            ("1,2\n3,x\n", "row 2, column 2"),
            ("1,2\n3,nan\n", "non-finite"),
            ("", "no data rows"),
        ],
    )
    def test_malformed_design(self, tmp_path, content, message):
        x = tmp_path / "x.csv"
        y = tmp_path / "y.csv"
        x.write_text(content)
        y.write_text("1\n2\n")
        with pytest.raises(InputError, match=message):
            load_csv(x, y)

    def test_dimension_mismatch(self, tmp_path, csv_pair):
        y = tmp_path / "y3.csv"
        y.write_text("1\n2\n3\n")
        with pytest.raises(InputError, match="dimension mismatch"):
            load_csv(csv_pair[0], y)

    def test_response_must_be_one_column(self, tmp_path, csv_pair):
        y = tmp_path / "y2.csv"
        y.write_text("1,1\n2,2\n")
        with pytest.raises(InputError, match="single column"):
            load_csv(csv_pair[0], y)

    def test_center(self, tmp_path):
        x = tmp_path / "x.csv"
        y = tmp_path / "y.csv"
        x.write_text("1,2\n3,5\n5,11\n")
        y.write_text("1\n2\n6\n")
        prob = load_csv(x, y, center=True)
        assert prob.centered
        assert_allclose(prob.design.mean(axis=0), 0.0, atol=1e-15)
        assert_allclose(prob.response.mean(), 0.0, atol=1e-15)


class TestSpectral:
    def test_fixture(self, fixture_data):
        assert_allclose(fixture_data.lambdas, [2.0, 1.0], rtol=1e-15)
        assert_allclose(np.abs(fixture_data.p_hat), [1.0, 1.0], rtol=1e-15)
        assert fixture_data.r == 2
        assert fixture_data.effective_dimension == 2
        assert not fixture_data.synthetic

    def test_zero_mass_and_duplicates(self):
        x = np.diag([2.0, 2.0, 1.0])
        s = spectral(RegressionProblem(x, np.array([1.0, 1.0, 0.0])))
        assert s.duplicate_eigenvalues
        assert s.zero_mass.tolist() == [False, False, True]
        assert s.effective_dimension == 1

    def test_response_energy_is_preserved(self, geometric_data):
        s = geometric_data
        assert_allclose(np.sum(s.p_hat**2), s.response_sq, rtol=1e-13)

    def test_with_p_hat_keeps_design(self, geometric_data):
        s = geometric_data
        t = s.with_p_hat(2.0 * s.p_hat, 2.0 * s.eps_tilde)
        assert_allclose(t.problem.response, 2.0 * s.problem.response, rtol=1e-13)
        assert t.lambdas is s.lambdas


class TestSyntheticSpec:
    def test_geometric_eigenvalues(self):
        spec = SyntheticSpec(n=5, p=4, rank=3, geometric_rate=0.5, scale=4.0)
        assert_allclose(spec.eigenvalues(), [4.0, 2.0, 1.0])
        s = spectral(generate(spec))
        assert_allclose(s.lambdas, [4.0, 2.0, 1.0], rtol=1e-12)

    def test_signal_plus_noise(self):
        spec = SyntheticSpec(n=6, p=4, rank=4, noise_sd=0.3, seed=5)
        prob = generate(spec)
        assert_allclose(prob.response, prob.design @ prob.truth + prob.noise, rtol=1e-14)

    def test_replications_share_design(self):
        spec = SyntheticSpec(n=6, p=4, rank=4, noise_sd=0.3, seed=5)
        a, b = generate(spec, 0), generate(spec, 1)
        assert_allclose(a.design, b.design)
        assert_allclose(a.truth, b.truth)
        assert not np.allclose(a.noise, b.noise)
        assert_allclose(generate(spec, 1).noise, b.noise)

    def test_aligned_signal(self):
        s = spectral(generate(fixture_spec(noise_sd=0.0)))
        assert_allclose(s.p_signal, [1.0, 1.0], rtol=1e-14)
        assert_allclose(s.lambdas, [2.0, 1.0], rtol=1e-14)

    @pytest.mark.parametrize(
        "kw",
        [
            dict(n=0, p=2),
            dict(n=2, p=2, noise_sd=-1.0),
            dict(n=2, p=2, beta_mode="weird"),
            dict(n=2, p=2, spectrum=[1.0, 1.0, 1.0]),
            dict(n=2, p=2, spectrum=[1.0, -1.0]),
            dict(n=2, p=2, replications=0),
        ],
    )
    def test_invalid(self, kw):
        with pytest.raises(InputError):
            SyntheticSpec(**kw)

    def test_from_json(self, tmp_path):
        path = tmp_path / "s.json"
        path.write_text(json.dumps({"n": 4, "p": 3, "spectrum": [3, 1], "noise_sd": 0.5}))
        spec = SyntheticSpec.from_json(path)
        assert spec.spectrum == (3.0, 1.0)
        path.write_text(json.dumps({"n": 4, "p": 3, "colour": 1}))
        with pytest.raises(InputError, match="unknown"):
            SyntheticSpec.from_json(path)
        with pytest.raises(InputError, match="not found"):
            SyntheticSpec.from_json(tmp_path / "missing.json")


def test_generated_design_recovers_spectrum():
    spec = SyntheticSpec(n=2, p=2, spectrum=(2.0, 1.0), beta_mode="aligned", noise_sd=0.0, seed=7)
    assert_allclose(spectral(generate(spec)).lambdas, [2.0, 1.0], rtol=1e-10)
