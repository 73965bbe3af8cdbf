import numpy as np
import pytest

from proxyrecon import pcselect
from proxyrecon.data import ConfigurationError


def spectrum(*ev):
    return pcselect.Spectrum(np.array(ev, dtype=float))


class TestVarianceThreshold:
    def test_hand_example(self):
        s = spectrum(4, 3, 2, 1)
        assert pcselect.select_k(s, "variance_threshold", 0.8) == 3
        assert pcselect.select_k(s, "variance_threshold_squared_BUG", 0.8) == 2

    def test_threshold_one_keeps_everything(self):
        s = spectrum(5, 3, 1)
        assert pcselect.select_k(s, "variance_threshold", 1.0) == 3

    def test_boundary_share_counts(self):
        # cumulative shares 0.5, 0.75, 1.0: threshold 0.75 stops at K=2
        s = spectrum(2, 1, 1)
        assert pcselect.select_k(s, "variance_threshold", 0.75) == 2

    def test_squared_never_larger(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            ev = np.sort(rng.uniform(0.1, 10, rng.integers(2, 15)))[::-1]
            ev = ev * (1 + 1e-6 * np.arange(ev.size)[::-1])  # strictly decreasing
            s = pcselect.Spectrum(ev)
            for th in (0.7, 0.8, 0.9):
                assert (pcselect.select_k(s, "variance_threshold_squared_BUG", th)
                        <= pcselect.select_k(s, "variance_threshold", th))

    def test_bad_threshold(self):
        with pytest.raises(ConfigurationError):
            pcselect.select_k(spectrum(2, 1), "variance_threshold", 0.0)


class TestOtherCriteria:
    def test_broken_stick_dominant_factor(self):
        s = spectrum(100, 1, 1, 1, 1)
        assert pcselect.select_k(s, "broken_stick") == 1

    def test_scree_gap_at_largest_drop(self):
        s = spectrum(10, 9, 3, 2.5, 2)
        assert pcselect.select_k(s, "scree_gap") == 2

    def test_scree_single_eigenvalue(self):
        assert pcselect.select_k(spectrum(3), "scree_gap") == 1

    def test_unknown_criterion(self):
        with pytest.raises(ConfigurationError):
            pcselect.select_k(spectrum(2, 1), "kaiser")


class TestSpectrumValidation:
    def test_rejects_increasing(self):
        with pytest.raises(ConfigurationError):
            spectrum(1, 2)

    def test_rejects_negative(self):
        with pytest.raises(ConfigurationError):
            spectrum(2, -1)

    def test_rejects_all_zero(self):
        with pytest.raises(ConfigurationError):
            spectrum(0, 0)


class TestCriteriaTable:
    def test_full_grid(self):
        rows = pcselect.criteria_table(spectrum(4, 3, 2, 1), thresholds=(0.8,))
        as_dict = {(c, t): k for c, t, k in rows}
        assert as_dict[("variance_threshold", 0.8)] == 3
        assert as_dict[("variance_threshold_squared_BUG", 0.8)] == 2
        assert ("broken_stick", None) in as_dict
        assert ("scree_gap", None) in as_dict
