"""Tests for circular laws, sources, velocity synthesis, correlation models,
and the exact shell-energy statistics."""

import math

import numpy as np
import pytest

from tracerlab import rng as trng
from tracerlab.spectral import BOX_VOLUME, get_lattice, to_grid
from tracerlab.synthesis import (
    CircularLaw,
    CorrelationModel,
    SourceSpec,
    VelocityParams,
    energy_shell_mean_exact,
    energy_shell_var_exact,
    sample_circular,
    synth_source,
    synth_velocity_static,
    velocity_path,
)


class TestCircularLaw:
    def test_unit_law_modulus(self):
        z = sample_circular(CircularLaw.unit(), trng.stream(1), 1000)
        assert np.max(np.abs(np.abs(z) - 1.0)) < 1e-14

    def test_circular_mean_vanishes(self):
        """Empirical mean of 1e5 draws is within the 5-sigma CLT band."""
        z = sample_circular(CircularLaw.unit(), trng.stream(2), 100_000)
        assert abs(z.mean()) < 0.02

    def test_two_point_moments(self):
        law = CircularLaw.two_point_from_fourth_moment(3.0)
        assert law.rho == pytest.approx(3.0, rel=1e-12)
        z = sample_circular(law, trng.stream(3), 100_000)
        m2 = np.mean(np.abs(z) ** 2)
        m4 = np.mean(np.abs(z) ** 4)
        # 5 sigma of the sample standard errors
        se2 = np.std(np.abs(z) ** 2, ddof=1) / math.sqrt(z.size)
        se4 = np.std(np.abs(z) ** 4, ddof=1) / math.sqrt(z.size)
        assert abs(m2 - 1.0) < 5 * se2
        assert abs(m4 - law.rho) < 5 * se4

    def test_two_point_general_normalized(self):
        law = CircularLaw.two_point(0.5, 2.0, 0.25)
        a, b, p = law.params
        assert p * a * a + (1 - p) * b * b == pytest.approx(1.0, rel=1e-14)
        assert law.rho > 1.0
        assert law.xi == max(a, b)

    def test_truncated_rayleigh_moments(self):
        """Closed-form normalization and fourth moment match Monte Carlo."""
        law = CircularLaw.truncated_rayleigh(1.0, 2.0)
        r = law.sample_modulus(trng.stream(4), 200_000)
        assert np.max(r) <= law.xi + 1e-14
        se2 = np.std(r**2, ddof=1) / math.sqrt(r.size)
        se4 = np.std(r**4, ddof=1) / math.sqrt(r.size)
        assert abs(np.mean(r**2) - 1.0) < 5 * se2
        assert abs(np.mean(r**4) - law.rho) < 5 * se4

    def test_fourth_moment_floor(self):
        with pytest.raises(ValueError):
            CircularLaw.two_point_from_fourth_moment(0.9)
        assert CircularLaw.two_point_from_fourth_moment(1.0).kind == "unit"


class TestSourceSpec:
    def test_finite_pair_support(self):
        lat = get_lattice(8)
        src = SourceSpec(explicit=(((0, 2, 0), 1.5 + 0.5j),), kappa_g=3.0)
        field = synth_source(src, lat)
        nz = np.nonzero(field.coeffs)[0]
        assert len(nz) == 1
        assert np.array_equal(lat.kvecs[nz[0]], [0, 2, 0])

    def test_randomized_unit_preserves_moduli(self):
        lat = get_lattice(6)
        src = SourceSpec.band(2, amplitude=0.8, randomized=True)
        field = synth_source(src, lat, trng.stream(5))
        det = synth_source(SourceSpec.band(2, amplitude=0.8), lat)
        assert np.allclose(np.abs(field.coeffs), np.abs(det.coeffs), atol=1e-14)

    def test_tail_modulus_exact(self):
        lat = get_lattice(8)
        src = SourceSpec(cg=0.3, alpha=-8.0, kappa_g=4.0)
        field = synth_source(src, lat)
        idx, _, valid = lat.index_of(np.array([3, 4, 0]))  # |k| = 5
        assert valid
        assert abs(field.coeffs[idx]) == pytest.approx(0.3 * 5.0**-8.0, rel=1e-14)

    def test_tail_phases_seedless(self):
        lat = get_lattice(6)
        src = SourceSpec(cg=1.0, alpha=-8.0, kappa_g=2.0)
        assert np.array_equal(synth_source(src, lat).coeffs, synth_source(src, lat).coeffs)

    def test_explicit_outside_lattice_rejected(self):
        lat = get_lattice(2)
        src = SourceSpec(explicit=(((0, 0, 3), 1.0 + 0j),), kappa_g=8.0)
        with pytest.raises(ValueError):
            synth_source(src, lat)

    def test_explicit_must_be_below_kappa_g(self):
        with pytest.raises(ValueError):
            SourceSpec(explicit=(((0, 0, 3), 1.0 + 0j),), kappa_g=2.0)

    def test_reconstruction_real(self):
        lat = get_lattice(6)
        src = SourceSpec.band(2, randomized=True, law=CircularLaw.two_point_from_fourth_moment(2.0))
        field = synth_source(src, lat, trng.stream(6))
        grid = to_grid(field)
        assert np.max(np.abs(grid.imag)) < 1e-12 * np.max(np.abs(grid.real))


class TestVelocitySynthesis:
    def test_divergence_free(self):
        lat = get_lattice(6)
        params = VelocityParams(beta=-2.5, ue=1.0, uf=0.7)
        u = synth_velocity_static(params, lat, trng.stream(7)).field()
        div = np.einsum("ij,ij->i", u.coeffs, lat.kvecs.astype(float))
        scale = np.abs(u.coeffs).max() * lat.radius
        assert np.max(np.abs(div)) < 1e-14 * scale

    def test_unit_law_mode_energy_forced(self):
        lat = get_lattice(6)
        params = VelocityParams(beta=-2.0, ue=0.8, uf=0.6)
        u = synth_velocity_static(params, lat, trng.stream(8)).field()
        expect = lat.k2.astype(float) ** params.beta * (params.ue**2 + params.uf**2)
        got = np.sum(np.abs(u.coeffs) ** 2, axis=1)
        assert np.allclose(got, expect, rtol=1e-12)

    def test_realization_matches_mean_for_unit_law(self):
        """varsigma = 1 kills the variance: every realization is the mean."""
        lat = get_lattice(16)
        params = VelocityParams(beta=-2.5)
        exact = energy_shell_mean_exact(params, lat, 4.0)
        for s in range(5):
            modes = synth_velocity_static(params, lat, trng.stream(9, s))
            assert modes.shell_energy(4.0) == pytest.approx(exact, rel=1e-12)
        assert energy_shell_var_exact(params, lat, 4.0) == 0.0

    def test_shell_mean_example(self):
        """kappa = 1, beta = -2: multiplicities 6, 12, 8 at |k|^2 = 1, 2, 3."""
        lat = get_lattice(4)
        params = VelocityParams(beta=-2.0, ue=1.0, uf=1.0)
        expect = 8 * math.pi**3 * 2.0 * (6 * 1.0 + 12 * 0.25 + 8 / 9.0)
        assert energy_shell_mean_exact(params, lat, 1.0) == pytest.approx(expect, rel=1e-14)

    def test_shell_doubling_ratio(self):
        """Consecutive exact sums scale like 2^{2 beta + 3} at large kappa."""
        lat = get_lattice(32)
        params = VelocityParams(beta=-2.5)
        lo = energy_shell_mean_exact(params, lat, 8.0)
        hi = energy_shell_mean_exact(params, lat, 16.0)
        assert hi / lo == pytest.approx(2.0 ** (2 * params.beta + 3), rel=0.10)

    def test_shell_bounds_checked(self):
        lat = get_lattice(8)
        with pytest.raises(ValueError):
            energy_shell_mean_exact(VelocityParams(beta=-2.5), lat, 5.0)

    def test_shell_energy_statistics(self):
        """Sampled mean within 4 sigma; sampled variance near the closed form."""
        lat = get_lattice(8)
        law = CircularLaw.two_point_from_fourth_moment(3.0)
        params = VelocityParams(beta=-2.5, ue=1.0, uf=1.0, law=law)
        kappa = 2.0
        m = 600
        vals = np.array(
            [
                synth_velocity_static(params, lat, trng.stream(10, s)).shell_energy(kappa)
                for s in range(m)
            ]
        )
        mean = energy_shell_mean_exact(params, lat, kappa)
        var = energy_shell_var_exact(params, lat, kappa)
        assert abs(vals.mean() - mean) < 4.0 * math.sqrt(var / m)
        assert abs(vals.var(ddof=1) - var) < 5.0 * var * math.sqrt(2.0 / m) * 2.0


class TestCorrelationModels:
    def test_frozen_path_constant(self):
        lat = get_lattice(4)
        path = velocity_path(
            VelocityParams(beta=-2.5), CorrelationModel("frozen"), lat, trng.stream(11)
        )
        v0, _ = path.amplitudes(0.0)
        v1, _ = path.amplitudes(5.0)
        assert np.array_equal(v0, v1)

    def test_drift_unit_modulus(self):
        lat = get_lattice(4)
        corr = CorrelationModel("gaussian_phase_drift", chi_coeff=2.0)
        path = velocity_path(VelocityParams(beta=-2.5), corr, lat, trng.stream(12))
        for t in (0.0, 0.3, 2.7):
            v, w = path.amplitudes(t)
            assert np.max(np.abs(np.abs(v) - 1.0)) < 1e-14
            assert np.max(np.abs(np.abs(w) - 1.0)) < 1e-14

    def test_drift_autocorrelation(self):
        """Empirical autocorrelation at lag h matches exp(-(chi h)^2/2) at 5 sigma."""
        corr = CorrelationModel("gaussian_phase_drift", chi_coeff=1.5)
        rng = trng.stream(13)
        n = 10_000
        zeta = rng.uniform(0, 2 * np.pi, n)
        omega = rng.standard_normal(n)
        h = 0.8
        v0 = np.exp(1j * zeta)
        vh = np.exp(1j * (zeta + corr.chi_coeff * omega * h))
        est = np.mean(v0 * np.conj(vh))
        expect = math.exp(-0.5 * (corr.chi_coeff * h) ** 2)
        assert abs(est - expect) < 5.0 / math.sqrt(n)

    def test_independence_v_w(self):
        lat = get_lattice(8)
        path = velocity_path(
            VelocityParams(beta=-2.5), CorrelationModel("frozen"), lat, trng.stream(14)
        )
        v, w = path.amplitudes(0.0)
        est = np.mean(v * np.conj(w))
        assert abs(est) < 5.0 / math.sqrt(lat.size)

    def test_telegraph_sign_process(self):
        lat = get_lattice(3)
        corr = CorrelationModel("telegraph", chi_coeff=2.0)
        path = velocity_path(
            VelocityParams(beta=-2.5), corr, lat, trng.stream(15), horizon=4.0
        )
        v0, _ = path.amplitudes(0.0)
        v1, _ = path.amplitudes(3.0)
        assert np.max(np.abs(np.abs(v1) - 1.0)) < 1e-14
        # the sign process only flips sign: ratio is +-1
        ratio = v1 / v0
        assert np.allclose(np.abs(ratio.real), 1.0, atol=1e-12)
        with pytest.raises(ValueError):
            path.amplitudes(5.0)

    def test_time_dependence_requires_unit_law(self):
        lat = get_lattice(3)
        params = VelocityParams(beta=-2.5, law=CircularLaw.two_point_from_fourth_moment(2.0))
        with pytest.raises(ValueError):
            velocity_path(params, CorrelationModel("gaussian_phase_drift", chi_coeff=1.0), lat, trng.stream(16))

    def test_phi_bounds_and_derivatives(self):
        corr = CorrelationModel("gaussian_phase_drift", chi_coeff=1.0)
        assert corr.phi(0.0) == 1.0
        assert np.all(np.abs(corr.phi(np.linspace(0, 10, 50))) <= 1.0)
        assert corr.phi_derivative_at_zero(1) == 0.0
        assert corr.phi_derivative_at_zero(2) == -1.0
        assert corr.phi_derivative_at_zero(4) == 3.0

    def test_rate_law_validation(self):
        with pytest.raises(ValueError):
            CorrelationModel("gaussian_phase_drift", chi_coeff=1.0, chi_power=2.0)

    def test_reproducible_streams(self):
        a = sample_circular(CircularLaw.unit(), trng.stream(99, 3, 1), 10)
        b = sample_circular(CircularLaw.unit(), trng.stream(99, 3, 1), 10)
        c = sample_circular(CircularLaw.unit(), trng.stream(99, 4, 1), 10)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)
