"""Cohort sampling: counts, truncation statistics, determinism."""

import numpy as np
import pytest

from qmridesign import (
    AcquisitionProtocol,
    CohortSpec,
    ScannerConfig,
    TissueClass,
    TissueDistribution,
    sample_cohort,
    simulate_dataset,
)
from qmridesign.cohort import MissingDistributionError
from qmridesign.config import default_tissue_path, load_tissue_distributions


@pytest.fixture(scope="module")
def default_distributions():
    return load_tissue_distributions(default_tissue_path())


def test_default_spec_counts(default_distributions):
    cohort = sample_cohort(default_distributions, CohortSpec(), np.random.default_rng(0))
    assert len(cohort) == 62
    counts = {label: 0 for label in TissueClass}
    for label, _ in cohort:
        counts[label] += 1
    assert counts[TissueClass.ACTIVE] == 20
    assert counts[TissueClass.CHRONIC] == 21
    assert counts[TissueClass.HEALTHY] == 21


def test_zero_std_yields_identical_params():
    dist = TissueDistribution(
        TissueClass.ACTIVE, mean_f=0.2, std_f=0.0, mean_d=4e-4, std_d=0.0,
        mean_dstar=2e-2, std_dstar=0.0,
    )
    spec = CohortSpec({TissueClass.ACTIVE: 15})
    cohort = sample_cohort({TissueClass.ACTIVE: dist}, spec, np.random.default_rng(1))
    assert np.all(cohort.params == cohort.params[0])
    np.testing.assert_allclose(cohort.params[0], [1.0, 0.2, 4e-4, 2e-2])


def test_missing_distribution_names_class(default_distributions):
    dists = dict(default_distributions)
    del dists[TissueClass.CHRONIC]
    with pytest.raises(MissingDistributionError, match="chronic"):
        sample_cohort(dists, CohortSpec(), np.random.default_rng(0))


def test_empty_cohort_and_dataset(default_distributions):
    cohort = sample_cohort(default_distributions, CohortSpec({}), np.random.default_rng(0))
    assert len(cohort) == 0
    ds = simulate_dataset(cohort, AcquisitionProtocol.adhoc(), ScannerConfig(), np.random.default_rng(0))
    assert len(ds) == 0
    assert ds.signals.shape == (0, 10)


def test_large_sample_moments(default_distributions):
    """Empirical means within 1% and stds within 2% of configured values."""
    dist = default_distributions[TissueClass.ACTIVE]
    spec = CohortSpec({TissueClass.ACTIVE: 100_000})
    cohort = sample_cohort(default_distributions, spec, np.random.default_rng(2))
    f, d, dstar = cohort.params[:, 1], cohort.params[:, 2], cohort.params[:, 3]
    assert f.mean() == pytest.approx(dist.mean_f, rel=0.01)
    assert d.mean() == pytest.approx(dist.mean_d, rel=0.01)
    assert dstar.mean() == pytest.approx(dist.mean_dstar, rel=0.01)
    assert f.std() == pytest.approx(dist.std_f, rel=0.02)
    assert d.std() == pytest.approx(dist.std_d, rel=0.02)
    assert dstar.std() == pytest.approx(dist.std_dstar, rel=0.02)


def test_truncation_bounds_hold(default_distributions):
    spec = CohortSpec({label: 2000 for label in TissueClass})
    cohort = sample_cohort(default_distributions, spec, np.random.default_rng(3))
    f, d, dstar = cohort.params[:, 1], cohort.params[:, 2], cohort.params[:, 3]
    assert np.all((f >= 0.001) & (f <= 0.999))
    assert np.all(d > 0)
    assert np.all(dstar >= d)
    assert np.all(cohort.params[:, 0] == 1.0)  # s0 pinned


def test_simulated_dataset_shape_and_roundtrip(default_distributions):
    protocol = AcquisitionProtocol.adhoc()
    scanner = ScannerConfig()
    cohort = sample_cohort(default_distributions, CohortSpec(), np.random.default_rng(4))
    ds = simulate_dataset(cohort, protocol, scanner, np.random.default_rng(5))
    assert ds.signals.shape == (62, 10)
    assert ds.te == protocol.echo_time(scanner)
    # ground truth stored is exactly what generated the signals
    np.testing.assert_array_equal(ds.params, cohort.params)
    assert ds.labels == cohort.labels


def test_same_seed_same_dataset(default_distributions):
    protocol = AcquisitionProtocol.adhoc()
    scanner = ScannerConfig()

    def build(seed):
        rng = np.random.default_rng(seed)
        cohort = sample_cohort(default_distributions, CohortSpec(), rng)
        return simulate_dataset(cohort, protocol, scanner, rng)

    a, b = build(11), build(11)
    np.testing.assert_array_equal(a.signals, b.signals)
    np.testing.assert_array_equal(a.params, b.params)
