"""Circular random variables, tracer sources, random velocity synthesis,
time-correlation models, and exact shell-energy statistics.

The velocity model is

    u(x, t) = sum_k |k|^beta [Ue e_k V_k(t) + Uf f_k W_k(t)] e^{i k.x}

over the mean-zero lattice, with (e_k, f_k) the incompressible Craya frame
vectors and V_k, W_k independent circular random amplitudes of unit variance.
Only half-space modes are stored; the full field is defined by conjugate
extension of the whole vector coefficient u_k (not of V_k and W_k
individually -- with e_{-k} = -e_k a componentwise extension would flip the
sign of the e-part, which no second-moment statistic can detect anyway).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .spectral import (
    BOX_VOLUME,
    Lattice,
    SpectralField,
    VectorField,
    craya_ef,
    half_space_mask,
)

TWO_PI = 2.0 * math.pi


# ---------------------------------------------------------------------------
# Circular random variables  Z = R e^{i zeta}
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CircularLaw:
    """Law of a bounded circular complex variable, normalized to E|Z|^2 = 1.

    kind:
      ``unit``                R = 1 identically (fourth moment 1)
      ``two_point``           R in {r1, r2} with P(R = r1) = p
      ``truncated_rayleigh``  R = min(Rayleigh(sigma), cap), rescaled

    ``xi`` is the essential sup of the modulus, ``rho`` the fourth moment
    E|Z|^4 after normalization; rho >= 1 with equality only for the unit law.
    """

    kind: str
    params: tuple = ()
    xi: float = 1.0
    rho: float = 1.0

    @classmethod
    def unit(cls) -> "CircularLaw":
        return cls(kind="unit", params=(), xi=1.0, rho=1.0)

    @classmethod
    def two_point(cls, r1: float, r2: float, p: float) -> "CircularLaw":
        if not (0.0 <= p <= 1.0):
            raise ValueError("p must lie in [0, 1]")
        if r1 < 0.0 or r2 < 0.0 or (r1 == 0.0 and r2 == 0.0):
            raise ValueError("moduli must be nonnegative and not both zero")
        m2 = p * r1 * r1 + (1.0 - p) * r2 * r2
        if m2 <= 0.0:
            raise ValueError("law has zero variance")
        s = math.sqrt(m2)
        a, b = r1 / s, r2 / s
        rho = p * a**4 + (1.0 - p) * b**4
        return cls(kind="two_point", params=(a, b, p), xi=max(a, b), rho=rho)

    @classmethod
    def two_point_from_fourth_moment(cls, rho: float) -> "CircularLaw":
        """Two-point law hitting a requested fourth moment rho >= 1.

        Uses the zero/spike solution R in {0, sqrt(rho)} with
        P(R > 0) = 1/rho, which realizes every rho >= 1.
        """
        if rho < 1.0:
            raise ValueError("fourth moment of a unit-variance law is >= 1")
        if rho == 1.0:
            return cls.unit()
        return cls.two_point(0.0, math.sqrt(rho), 1.0 - 1.0 / rho)

    @classmethod
    def truncated_rayleigh(cls, sigma: float, cap: float) -> "CircularLaw":
        if sigma <= 0.0 or cap <= 0.0:
            raise ValueError("sigma and cap must be positive")
        t = cap * cap / (2.0 * sigma * sigma)
        m2 = 2.0 * sigma * sigma * (-math.expm1(-t))
        m4 = 4.0 * sigma**4 * (2.0 - (2.0 * t + 2.0) * math.exp(-t))
        s = math.sqrt(m2)
        return cls(
            kind="truncated_rayleigh",
            params=(sigma, cap),
            xi=cap / s,
            rho=m4 / (m2 * m2),
        )

    def sample_modulus(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.kind == "unit":
            return np.ones(size)
        if self.kind == "two_point":
            a, b, p = self.params
            return np.where(rng.random(size) < p, a, b)
        if self.kind == "truncated_rayleigh":
            sigma, cap = self.params
            raw = np.minimum(rng.rayleigh(sigma, size), cap)
            return raw / math.sqrt(2.0 * sigma * sigma * (-math.expm1(-cap * cap / (2 * sigma * sigma))))
        raise ValueError(f"unknown circular law {self.kind!r}")


def sample_circular(law: CircularLaw, rng: np.random.Generator, size: int | None = None):
    """Draw Z = R e^{i zeta}, zeta uniform on [0, 2pi), R per the modulus law.

    The phase draw happens first and with a fixed count, so laws with the
    same kind consume the stream identically.
    """
    n = 1 if size is None else size
    zeta = rng.uniform(0.0, TWO_PI, n)
    r = law.sample_modulus(rng, n)
    z = r * np.exp(1j * zeta)
    return z[0] if size is None else z


# ---------------------------------------------------------------------------
# Tracer source
# ---------------------------------------------------------------------------

def _phase_hash(kvecs: np.ndarray) -> np.ndarray:
    """Deterministic, seed-independent phases in [0, 2pi) from wavevectors."""
    kv = np.asarray(kvecs, dtype=np.int64)
    h = (kv[:, 0].astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15))
    h ^= kv[:, 1].astype(np.uint64) * np.uint64(0xBF58476D1CE4E5B9)
    h ^= kv[:, 2].astype(np.uint64) * np.uint64(0x94D049BB133111EB)
    h ^= h >> np.uint64(31)
    h *= np.uint64(0xD6E8FEB86659FD93)
    h ^= h >> np.uint64(27)
    return (h.astype(np.float64) / 2.0**64) * TWO_PI


@dataclass(frozen=True)
class SourceSpec:
    """Description of the tracer source through gamma_k, the modes of the
    inverse-Laplacian potential: (lap^-1 g)(x) = sum_k gamma_k e^{i k.x}.

    ``explicit`` lists low half-space modes with their complex gamma; beyond
    kappa_g a power-law tail applies with |gamma_k| = cg |k|^alpha exactly
    and a deterministic hash phase.  ``randomized`` multiplies each
    half-space coefficient by an independent circular Z_k of law ``law``.
    """

    explicit: tuple = ()
    cg: float = 0.0
    alpha: float = -8.0
    kappa_g: float = 16.0
    randomized: bool = False
    law: CircularLaw = field(default_factory=CircularLaw.unit)

    def __post_init__(self):
        if self.kappa_g <= 1.0:
            raise ValueError("kappa_g must exceed 1")
        if self.cg < 0.0:
            raise ValueError("cg must be nonnegative")
        if self.cg > 0.0 and self.alpha >= 0.0:
            raise ValueError("tail exponent alpha must be negative")
        for kv, _ in self.explicit:
            kvi = np.asarray(kv, dtype=np.int64)
            if not half_space_mask(kvi[None, :])[0]:
                raise ValueError(f"explicit mode {tuple(kv)} is not in the half-space")
            if float(kvi @ kvi) >= self.kappa_g**2:
                raise ValueError(
                    f"explicit mode {tuple(kv)} has |k| >= kappa_g = {self.kappa_g}"
                )

    @classmethod
    def band(cls, radius: int, amplitude: float = 1.0, **kw) -> "SourceSpec":
        """All half-space modes with 0 < |k| <= radius at one real amplitude."""
        modes = []
        r2 = radius * radius
        for kx in range(-radius, radius + 1):
            for ky in range(-radius, radius + 1):
                for kz in range(0, radius + 1):
                    k2 = kx * kx + ky * ky + kz * kz
                    if k2 == 0 or k2 > r2:
                        continue
                    if kz == 0 and not (ky > 0 or (ky == 0 and kx > 0)):
                        continue
                    modes.append(((kx, ky, kz), complex(amplitude)))
        kw.setdefault("kappa_g", float(radius + 1))
        return cls(explicit=tuple(modes), **kw)

    def is_finite_mode(self) -> bool:
        return self.cg == 0.0

    def gamma_half(self, lattice: Lattice) -> np.ndarray:
        """Deterministic gamma_k over the lattice half-space."""
        gamma = np.zeros(lattice.size, dtype=np.complex128)
        if self.explicit:
            kv = np.array([m for m, _ in self.explicit], dtype=np.int64)
            vals = np.array([g for _, g in self.explicit], dtype=np.complex128)
            idx, conj, valid = lattice.index_of(kv)
            if not np.all(valid):
                bad = kv[~valid]
                raise ValueError(f"explicit source mode {bad[0].tolist()} is outside the lattice")
            if np.any(conj):
                raise ValueError("explicit source modes must be half-space representatives")
            gamma[idx] = vals
        if self.cg > 0.0:
            tail = lattice.k2.astype(np.float64) >= self.kappa_g**2
            mag = self.cg * lattice.knorm[tail] ** self.alpha
            gamma[tail] = mag * np.exp(1j * _phase_hash(lattice.kvecs[tail]))
        return gamma

    def support(self, lattice: Lattice):
        """Full-lattice support: (wavevectors (S, 3), gamma values (S,)).

        Half-space rows come first, then their negatives with conjugated
        gamma; the ordering is the canonical lattice order within each half.
        """
        gamma = self.gamma_half(lattice)
        nz = np.nonzero(gamma)[0]
        kv = lattice.kvecs[nz].astype(np.int64)
        gv = gamma[nz]
        return (
            np.concatenate([kv, -kv], axis=0),
            np.concatenate([gv, np.conj(gv)]),
        )


def synth_source(spec: SourceSpec, lattice: Lattice, rng: np.random.Generator | None = None) -> SpectralField:
    """Field of gamma_k coefficients (that is, lap^-1 g); g_k = -|k|^2 gamma_k."""
    gamma = spec.gamma_half(lattice)
    if spec.randomized:
        if rng is None:
            raise ValueError("randomized source needs an rng stream")
        gamma = gamma * sample_circular(spec.law, rng, lattice.size)
    return SpectralField(lattice, gamma)


def source_field(gamma_field: SpectralField) -> SpectralField:
    """Recover g from the gamma field: g = lap(lap^-1 g)."""
    return SpectralField(gamma_field.lattice, -gamma_field.lattice.k2 * gamma_field.coeffs)


# ---------------------------------------------------------------------------
# Velocity parameters and static synthesis
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VelocityParams:
    """Spectral exponent and component amplitudes of the velocity model."""

    beta: float
    ue: float = 1.0
    uf: float = 1.0
    law: CircularLaw = field(default_factory=CircularLaw.unit)

    def __post_init__(self):
        if self.ue < 0.0 or self.uf < 0.0:
            raise ValueError("component amplitudes must be nonnegative")

    @property
    def u_iso(self) -> float:
        """Amplitude entering isotropic bounds; max of the two components."""
        return max(self.ue, self.uf)

    @property
    def varsigma(self) -> float:
        return self.law.rho

    @property
    def xi(self) -> float:
        return self.law.xi

    def scaled(self, factor: float) -> "VelocityParams":
        return VelocityParams(self.beta, self.ue * factor, self.uf * factor, self.law)


@dataclass
class VelocityModes:
    """One velocity realization: per-mode amplitudes V_k, W_k on the half-space."""

    lattice: Lattice
    params: VelocityParams
    v: np.ndarray
    w: np.ndarray

    def field(self) -> VectorField:
        """Assemble the (M, 3) mode coefficients |k|^beta (Ue e V + Uf f W)."""
        e, f = _lattice_frames(self.lattice)
        amp = self.lattice.knorm ** self.params.beta
        coeffs = (
            self.params.ue * self.v[:, None] * e
            + self.params.uf * self.w[:, None] * f
        ) * amp[:, None]
        return VectorField(self.lattice, coeffs)

    def shell_energy(self, kappa: float) -> float:
        """This realization's ||P_{kappa,2kappa} u||_{L2}^2 (exact mode sum)."""
        mask = self.lattice.shell_mask(kappa, 2.0 * kappa)
        amp2 = self.lattice.k2[mask].astype(np.float64) ** self.params.beta
        dens = self.params.ue**2 * np.abs(self.v[mask]) ** 2 + self.params.uf**2 * np.abs(self.w[mask]) ** 2
        return 2.0 * BOX_VOLUME * float(np.sum(amp2 * dens))


_FRAME_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _lattice_frames(lattice: Lattice):
    cached = _FRAME_CACHE.get(lattice.radius)
    if cached is None:
        cached = craya_ef(lattice.kvecs)
        if lattice.radius <= 48:  # frames at large radii are bulky; recompute
            _FRAME_CACHE[lattice.radius] = cached
    return cached


def synth_velocity_static(
    params: VelocityParams, lattice: Lattice, rng: np.random.Generator
) -> VelocityModes:
    """Independent V_k, W_k per half-space mode (V drawn first, then W)."""
    v = sample_circular(params.law, rng, lattice.size)
    w = sample_circular(params.law, rng, lattice.size)
    return VelocityModes(lattice, params, v, w)


# ---------------------------------------------------------------------------
# Exact shell-energy statistics
# ---------------------------------------------------------------------------

def _check_shell(lattice: Lattice, kappa: float):
    if 2.0 * kappa > lattice.radius:
        raise ValueError(
            f"shell [{kappa}, {2*kappa}) exceeds the lattice radius {lattice.radius}"
        )


def energy_shell_mean_exact(params: VelocityParams, lattice: Lattice, kappa: float) -> float:
    """E ||P_{kappa,2kappa} u||^2 = 8 pi^3 (Ue^2+Uf^2) sum_{shell} |k|^{2 beta}."""
    _check_shell(lattice, kappa)
    mask = lattice.shell_mask(kappa, 2.0 * kappa)
    lattice_sum = 2.0 * float(np.sum(lattice.k2[mask].astype(np.float64) ** params.beta))
    return BOX_VOLUME * (params.ue**2 + params.uf**2) * lattice_sum


def energy_shell_var_exact(params: VelocityParams, lattice: Lattice, kappa: float) -> float:
    """Exact variance of ||P_{kappa,2kappa} u||^2 over realizations.

    Conjugate symmetry ties the +-k coefficients together, so the shell sum
    has only one independent term per half-space mode and the variance is

        var = (2pi)^6 (varsigma - 1)(Ue^4 + Uf^4) * 2 * sum_{full shell} |k|^{4 beta},

    i.e. twice the value the full-lattice sum would suggest if all modes were
    independent.
    """
    _check_shell(lattice, kappa)
    mask = lattice.shell_mask(kappa, 2.0 * kappa)
    half_sum = float(np.sum(lattice.k2[mask].astype(np.float64) ** (2.0 * params.beta)))
    return (
        BOX_VOLUME**2
        * (params.varsigma - 1.0)
        * (params.ue**4 + params.uf**4)
        * 4.0
        * half_sum
    )


# ---------------------------------------------------------------------------
# Time correlation models and velocity paths
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CorrelationModel:
    """Stationary per-mode autocorrelation Phi(chi_k |t|) with chi_k = c |k|^p.

    kinds:
      ``frozen``               Phi = 1 (time-independent velocity)
      ``gaussian_phase_drift`` V_k(t) = e^{i(zeta + chi_k Omega t)}, Omega
                               standard normal, giving the smooth
                               Phi(h) = e^{-h^2/2}
      ``telegraph``            unit circular variable times a sign process
                               with flip rate chi_k/2, giving Phi(h) = e^{-h};
                               not C^1 at h = 0, quadrature use only
    """

    kind: str = "frozen"
    chi_coeff: float = 0.0
    chi_power: float = 0.0

    def __post_init__(self):
        if self.kind not in ("frozen", "gaussian_phase_drift", "telegraph"):
            raise ValueError(f"unknown correlation kind {self.kind!r}")
        if self.chi_coeff < 0.0:
            raise ValueError("rate coefficient must be nonnegative")
        if self.chi_power >= 2.0:
            raise ValueError("rate law chi_k = c |k|^p needs p < 2")

    @property
    def smooth(self) -> bool:
        return self.kind in ("frozen", "gaussian_phase_drift")

    def chi(self, knorm) -> np.ndarray | float:
        if self.kind == "frozen":
            return np.zeros_like(np.asarray(knorm, dtype=np.float64)) + 0.0
        return self.chi_coeff * np.asarray(knorm, dtype=np.float64) ** self.chi_power

    def phi(self, h):
        """Phi evaluated at the scaled lag h = chi |t|; Phi(0) = 1, |Phi| <= 1."""
        h = np.abs(h)
        if self.kind == "frozen":
            return np.ones_like(np.asarray(h, dtype=np.float64)) + 0.0
        if self.kind == "gaussian_phase_drift":
            return np.exp(-0.5 * h * h)
        return np.exp(-h)

    def phi_derivative_at_zero(self, m: int) -> float:
        if m == 0:
            return 1.0
        if self.kind == "frozen":
            return 0.0
        if self.kind == "gaussian_phase_drift":
            if m % 2 == 1:
                return 0.0
            # d^m/dh^m e^{-h^2/2} at 0: (-1)^{m/2} (m-1)!!
            return float((-1) ** (m // 2) * math.prod(range(1, m, 2)))
        raise ValueError("telegraph correlation is not differentiable at 0")

    def phi_derivative(self, m: int, s):
        """m-th derivative of Phi on s >= 0 (for remainder quadrature)."""
        s = np.asarray(s, dtype=np.float64)
        if self.kind == "frozen":
            return np.zeros_like(s) if m > 0 else np.ones_like(s)
        if self.kind == "gaussian_phase_drift":
            herm = np.polynomial.hermite_e.hermeval(s, [0.0] * m + [1.0])
            return (-1.0) ** m * herm * np.exp(-0.5 * s * s)
        return (-1.0) ** m * np.exp(-s)


class VelocityPath:
    """Stationary velocity process sampler; evaluate modes at any t >= 0."""

    def __init__(self, params, lattice, correlation, rng, horizon=None):
        if correlation.kind != "frozen" and params.law.kind != "unit":
            raise ValueError(
                "time-dependent amplitudes require the unit-modulus law"
            )
        self.params = params
        self.lattice = lattice
        self.correlation = correlation
        self.chi = np.asarray(correlation.chi(lattice.knorm), dtype=np.float64)
        kind = correlation.kind
        if kind == "frozen":
            self._frozen = synth_velocity_static(params, lattice, rng)
        elif kind == "gaussian_phase_drift":
            m = lattice.size
            self._zeta_v = rng.uniform(0.0, TWO_PI, m)
            self._omega_v = rng.standard_normal(m)
            self._zeta_w = rng.uniform(0.0, TWO_PI, m)
            self._omega_w = rng.standard_normal(m)
        elif kind == "telegraph":
            if horizon is None:
                raise ValueError("telegraph paths need a time horizon")
            self.horizon = float(horizon)
            m = lattice.size
            self._zeta_v = rng.uniform(0.0, TWO_PI, m)
            self._zeta_w = rng.uniform(0.0, TWO_PI, m)
            self._sign0_v = np.where(rng.random(m) < 0.5, -1.0, 1.0)
            self._sign0_w = np.where(rng.random(m) < 0.5, -1.0, 1.0)
            self._flips_v = _draw_flip_times(self.chi * 0.5, self.horizon, rng)
            self._flips_w = _draw_flip_times(self.chi * 0.5, self.horizon, rng)

    def amplitudes(self, t: float):
        """(V_k(t), W_k(t)) over the half-space."""
        kind = self.correlation.kind
        if kind == "frozen":
            return self._frozen.v, self._frozen.w
        if kind == "gaussian_phase_drift":
            v = np.exp(1j * (self._zeta_v + self.chi * self._omega_v * t))
            w = np.exp(1j * (self._zeta_w + self.chi * self._omega_w * t))
            return v, w
        if t > self.horizon:
            raise ValueError(f"t = {t} beyond the sampled horizon {self.horizon}")
        sv = self._sign0_v * _sign_at(self._flips_v, t)
        sw = self._sign0_w * _sign_at(self._flips_w, t)
        return np.exp(1j * self._zeta_v) * sv, np.exp(1j * self._zeta_w) * sw

    def at(self, t: float) -> VelocityModes:
        v, w = self.amplitudes(t)
        return VelocityModes(self.lattice, self.params, v, w)

    def mode_values(self, indices: np.ndarray, times: np.ndarray):
        """V and W for selected half-space modes on a time grid.

        Returns two arrays of shape (len(times), len(indices)); closed-form
        for the frozen and phase-drift kinds.
        """
        t = np.asarray(times, dtype=np.float64)[:, None]
        kind = self.correlation.kind
        if kind == "frozen":
            ones = np.ones((t.size, len(indices)))
            return self._frozen.v[indices] * ones, self._frozen.w[indices] * ones
        if kind == "gaussian_phase_drift":
            rate = self.chi[indices]
            v = np.exp(1j * (self._zeta_v[indices] + rate * self._omega_v[indices] * t))
            w = np.exp(1j * (self._zeta_w[indices] + rate * self._omega_w[indices] * t))
            return v, w
        cols_v = []
        cols_w = []
        for tt in np.asarray(times, dtype=np.float64):
            v, w = self.amplitudes(float(tt))
            cols_v.append(v[indices])
            cols_w.append(w[indices])
        return np.array(cols_v), np.array(cols_w)


def _draw_flip_times(rates: np.ndarray, horizon: float, rng) -> list[np.ndarray]:
    flips = []
    for lam in rates:
        if lam <= 0.0:
            flips.append(np.empty(0))
            continue
        # over-draw exponential gaps in blocks until past the horizon
        times = []
        t = 0.0
        while t <= horizon:
            gaps = rng.exponential(1.0 / lam, 64)
            for g in gaps:
                t += g
                if t > horizon:
                    break
                times.append(t)
        flips.append(np.asarray(times))
    return flips


def _sign_at(flips: list[np.ndarray], t: float) -> np.ndarray:
    counts = np.fromiter(
        (np.searchsorted(fl, t, side="right") for fl in flips),
        dtype=np.int64,
        count=len(flips),
    )
    return np.where(counts % 2 == 0, 1.0, -1.0)


def velocity_path(
    params: VelocityParams,
    correlation: CorrelationModel,
    lattice: Lattice,
    rng: np.random.Generator,
    horizon: float | None = None,
) -> VelocityPath:
    """Sample one stationary velocity path with the prescribed autocorrelation."""
    return VelocityPath(params, lattice, correlation, rng, horizon=horizon)
