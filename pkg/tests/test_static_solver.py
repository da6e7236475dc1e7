"""Tests for the static fixed-point solver, its dense oracle, the first
iterate, and the contraction machinery."""

import math

import numpy as np
import pytest

from tracerlab import rng as trng
from tracerlab.spectral import (
    SpectralField,
    VectorField,
    get_lattice,
    l2_norm,
    l2_norm_sq,
)
from tracerlab.static_solver import (
    FirstIterateOperator,
    contraction_estimate,
    dense_oracle_solve,
    first_iterate,
    fixed_point_solve,
    k_beta_weight,
    remainder_field,
    residual,
)
from tracerlab.synthesis import (
    SourceSpec,
    VelocityModes,
    VelocityParams,
    synth_source,
    synth_velocity_static,
)

PARAMS = VelocityParams(beta=-2.5, ue=1.0, uf=1.0)


def small_setup(seed=0, radius=4, u_scale=None, source=None):
    lat = get_lattice(radius)
    src = source or SourceSpec.band(2)
    gamma = synth_source(src, lat)
    if u_scale is None:
        _, eps1 = contraction_estimate(PARAMS, src.kappa_g, lat)
        u_scale = 0.4 / eps1
    params = PARAMS.scaled(u_scale)
    base = synth_velocity_static(PARAMS, lat, trng.stream(seed, 0, trng.VEL_V))
    modes = VelocityModes(lat, params, base.v, base.w)
    return lat, src, gamma, modes, params


class TestFirstIterate:
    def test_zero_source(self):
        lat, src, gamma, modes, _ = small_setup(1)
        out = first_iterate(modes, SpectralField.zeros(lat))
        assert np.max(np.abs(out.coeffs)) == 0.0

    def test_zero_velocity(self):
        lat, src, gamma, modes, params = small_setup(2)
        zero_u = VelocityModes(lat, params, np.zeros(lat.size, complex), np.zeros(lat.size, complex))
        out = first_iterate(zero_u, gamma)
        assert np.max(np.abs(out.coeffs)) == 0.0

    def test_single_pair_hand_value(self):
        """u at +-(1,0,0), source at +-(0,2,0): four output modes by hand."""
        lat = get_lattice(6)
        src = SourceSpec(explicit=(((0, 2, 0), 0.9 - 0.2j),), kappa_g=3.0)
        gamma = synth_source(src, lat)
        uc = np.array([0.0, 0.25 + 0.1j, -0.3 + 0.05j])  # orthogonal to (1,0,0)
        u = VectorField(lat, np.zeros((lat.size, 3), dtype=complex))
        iu, _, _ = lat.index_of(np.array([1, 0, 0]))
        u.coeffs[iu] = uc

        out = first_iterate(u, gamma, method="operator")
        j0 = np.array([0, 2, 0])
        g0 = 0.9 - 0.2j
        for kvec, coeff in [
            (np.array([1, 2, 0]), 1j / 5.0 * (uc @ j0) * g0),
            (np.array([1, -2, 0]), 1j / 5.0 * (uc @ (-j0)) * np.conj(g0)),
        ]:
            idx, conj, valid = lat.index_of(kvec)
            assert valid
            stored = out.coeffs[idx]
            got = np.conj(stored) if conj else stored
            assert np.allclose(got, coeff, rtol=1e-13)

    def test_paths_agree(self):
        """Operator-composition and direct-support paths match."""
        lat, src, gamma, modes, _ = small_setup(3, radius=8, u_scale=0.7)
        a = first_iterate(modes, gamma, method="operator")
        b = first_iterate(modes, gamma, method="direct")
        assert np.max(np.abs(a.coeffs - b.coeffs)) < 1e-12

    def test_precomputed_operator_matches(self):
        lat, src, gamma, modes, params = small_setup(4, radius=8, u_scale=0.7)
        op = FirstIterateOperator(lat, src, params)
        direct = first_iterate(modes, gamma, method="direct")
        assert np.max(np.abs(op.apply(modes.v, modes.w) - direct.coeffs)) < 1e-13

    def test_operator_row_subset(self):
        lat, src, gamma, modes, params = small_setup(5, radius=8, u_scale=0.7)
        rows = np.array([0, 5, 17, 101])
        op_full = FirstIterateOperator(lat, src, params)
        op_rows = FirstIterateOperator(lat, src, params, output_rows=rows)
        assert np.allclose(
            op_rows.apply(modes.v, modes.w), op_full.apply(modes.v, modes.w)[rows]
        )


class TestFixedPoint:
    def test_zero_velocity_converges_immediately(self):
        lat, src, gamma, modes, params = small_setup(6)
        zero_u = VelocityModes(lat, params, np.zeros(lat.size, complex), np.zeros(lat.size, complex))
        theta, diag = fixed_point_solve(zero_u, gamma)
        assert diag.converged
        assert diag.iterations == 1
        assert np.allclose(theta.coeffs, -gamma.coeffs)
        assert residual(zero_u, gamma, theta) < 1e-14 * l2_norm(gamma)

    def test_geometric_increments(self):
        """Increments decay geometrically with ratio below the estimate."""
        lat, src, gamma, modes, params = small_setup(7)
        _, eps = contraction_estimate(params, src.kappa_g, lat)
        assert eps < 0.5
        theta, diag = fixed_point_solve(modes, gamma)
        assert diag.converged
        inc = diag.increment_norms
        for i in range(1, len(inc) - 1):
            if inc[i + 1] > 0:
                assert inc[i + 1] / inc[i] <= eps * 1.5

    def test_monotone_increments(self):
        lat, src, gamma, modes, params = small_setup(8)
        _, diag = fixed_point_solve(modes, gamma)
        inc = diag.increment_norms
        assert all(inc[i + 1] <= inc[i] for i in range(1, len(inc) - 1))

    def test_residual_certificate(self):
        lat, src, gamma, modes, params = small_setup(9)
        tol = 1e-12 * l2_norm(gamma)
        theta, diag = fixed_point_solve(modes, gamma, tol=tol)
        g_norm = math.sqrt(l2_norm_sq(SpectralField(lat, -lat.k2 * gamma.coeffs)))
        assert diag.converged
        assert diag.residual <= 10.0 * tol * (1.0 + g_norm)

    def test_non_convergence_reported(self):
        lat, src, gamma, modes, params = small_setup(10, u_scale=5.0)
        theta, diag = fixed_point_solve(modes, gamma, max_iter=25)
        assert not diag.converged

    def test_matches_dense_oracle_over_seeds(self):
        """Acceptance-grade agreement between Picard and the dense solve."""
        for seed in range(6):
            lat, src, gamma, modes, params = small_setup(seed + 20)
            theta, diag = fixed_point_solve(modes, gamma)
            oracle = dense_oracle_solve(modes, gamma)
            assert diag.converged
            diff = l2_norm(SpectralField(lat, theta.coeffs - oracle.coeffs))
            assert diff < 1e-10
            assert residual(modes, gamma, oracle) < 1e-10


class TestDenseOracle:
    def test_zero_velocity(self):
        lat, src, gamma, modes, params = small_setup(11)
        zero_u = VelocityModes(lat, params, np.zeros(lat.size, complex), np.zeros(lat.size, complex))
        theta = dense_oracle_solve(zero_u, gamma)
        assert np.allclose(theta.coeffs, -gamma.coeffs, rtol=1e-13)

    def test_mean_zero_structure(self):
        """No zero mode exists anywhere in the solve."""
        lat, *_ = small_setup(12)
        assert np.all(lat.k2 > 0)

    def test_size_guard(self):
        lat = get_lattice(16)
        gamma = synth_source(SourceSpec.band(2), lat)
        u = synth_velocity_static(PARAMS, lat, trng.stream(0))
        with pytest.raises(ValueError):
            dense_oracle_solve(u, gamma)


class TestResidual:
    def test_initial_guess_residual(self):
        """residual(-lap^-1 g) = ||u . grad lap^-1 g||."""
        lat, src, gamma, modes, _ = small_setup(13, u_scale=0.3)
        from tracerlab.spectral import advect

        theta0 = SpectralField(lat, -gamma.coeffs)
        lhs = residual(modes, gamma, theta0)
        rhs = l2_norm(advect(modes.field(), gamma))
        assert lhs == pytest.approx(rhs, rel=1e-12)

    def test_not_homogeneous(self):
        """Scaling theta does not scale the residual (affine equation)."""
        lat, src, gamma, modes, _ = small_setup(14, u_scale=0.3)
        theta, _ = fixed_point_solve(modes, gamma)
        half = SpectralField(lat, 0.5 * theta.coeffs)
        assert residual(modes, gamma, half) > 10 * residual(modes, gamma, theta)


class TestContraction:
    def test_weight_branches_meet(self):
        kg = 3.0
        beta = -2.5
        assert k_beta_weight(2 * kg, beta, kg) == pytest.approx(1.0, rel=1e-14)
        assert k_beta_weight(kg, beta, kg) == 1.0
        assert k_beta_weight(4 * kg, beta, kg) == pytest.approx(
            (2 * kg) ** -beta * (4 * kg) ** beta, rel=1e-14
        )

    def test_monotone_in_radius(self):
        vals = []
        for radius in (4, 6, 8):
            pw, _ = contraction_estimate(PARAMS, 3.0, get_lattice(radius))
            vals.append(pw)
        assert vals[0] <= vals[1] <= vals[2]

    def test_eps_predicts_convergence(self):
        """eps_hat < 1 implies observed geometric convergence over a (U, beta) grid."""
        lat = get_lattice(4)
        src = SourceSpec.band(2)
        gamma = synth_source(src, lat)
        for beta in (-2.25, -2.75):
            raw = VelocityParams(beta=beta, ue=1.0, uf=1.0)
            _, eps1 = contraction_estimate(raw, src.kappa_g, lat)
            for target in (0.3, 0.8):
                params = raw.scaled(target / eps1)
                base = synth_velocity_static(raw, lat, trng.stream(31, int(target * 10)))
                modes = VelocityModes(lat, params, base.v, base.w)
                theta, diag = fixed_point_solve(modes, gamma)
                assert diag.converged
                assert diag.estimated_ratio < target

    def test_matches_direct_sum(self):
        """FFT convolution equals the explicit lattice sum for S_k."""
        lat = get_lattice(4)
        kg = 3.0
        pw, _ = contraction_estimate(PARAMS, kg, lat)
        kfull = lat.full_kvecs().astype(np.float64)
        knf = np.sqrt(np.einsum("ij,ij->i", kfull, kfull))
        ratios = []
        for row in range(lat.size):
            m = lat.kvecs[row].astype(np.float64) - kfull
            mn = np.sqrt(np.einsum("ij,ij->i", m, m))
            ok = (mn > 0) & (mn <= lat.radius)
            s = np.sum(
                np.where(ok, np.where(ok, mn, 1.0) ** PARAMS.beta, 0.0)
                / knf
                * k_beta_weight(knf, PARAMS.beta, kg)
            )
            ratios.append(s / k_beta_weight(lat.knorm[row], PARAMS.beta, kg))
        assert max(ratios) == pytest.approx(pw, rel=1e-10)


class TestRemainder:
    def test_zero_velocity_remainder(self):
        lat, src, gamma, modes, params = small_setup(15)
        zero_u = VelocityModes(lat, params, np.zeros(lat.size, complex), np.zeros(lat.size, complex))
        theta, _ = fixed_point_solve(zero_u, gamma)
        vt = first_iterate(zero_u, gamma)
        delta = remainder_field(theta, vt, gamma)
        assert np.max(np.abs(delta.coeffs)) < 1e-14
        assert np.max(np.abs(vt.coeffs)) == 0.0

    def test_first_iterate_only_gives_zero(self):
        lat, src, gamma, modes, _ = small_setup(16)
        vt = first_iterate(modes, gamma)
        theta1 = SpectralField(lat, -gamma.coeffs + vt.coeffs)
        delta = remainder_field(theta1, vt, gamma)
        assert np.max(np.abs(delta.coeffs)) < 1e-15

    def test_remainder_quadratic_in_u(self):
        """Halving U quarters the remainder amplitude (eps^2 scaling)."""
        lat, src, gamma, modes, params = small_setup(17)
        norms = []
        for scale in (1.0, 0.5):
            scaled = VelocityModes(lat, params.scaled(scale), modes.v, modes.w)
            theta, diag = fixed_point_solve(scaled, gamma)
            vt = first_iterate(scaled, gamma)
            norms.append(l2_norm(remainder_field(theta, vt, gamma)))
        assert norms[0] / norms[1] == pytest.approx(4.0, rel=0.15)
