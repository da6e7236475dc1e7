"""Truncated 3-d Fourier lattice, Craya frame geometry, and spectral operators.

Fields live on the periodic box [0, 2pi]^3 and are represented by complex
Fourier coefficients on the mean-zero lattice 0 < |k| <= N.  Only the
canonical half-space is stored; the coefficient at -k is implicitly the
complex conjugate, so every field is real in physical space by construction.

The half-space convention for k = (kx, ky, kz) is

    kz > 0,  or  (kz = 0 and ky > 0),  or  (kz = ky = 0 and kx > 0).

All operators here are pure functions; lattices and fields are treated as
immutable after construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

TWO_PI = 2.0 * np.pi
BOX_VOLUME = TWO_PI**3  # (e^{ij.x}, e^{ik.x})_{L2} = (2pi)^3 delta_jk


class LatticeMismatchError(ValueError):
    """Operands live on different lattices."""


def half_space_mask(kvecs: np.ndarray) -> np.ndarray:
    """Boolean mask of which integer wavevectors lie in the canonical half-space."""
    kx, ky, kz = kvecs[..., 0], kvecs[..., 1], kvecs[..., 2]
    return (kz > 0) | ((kz == 0) & (ky > 0)) | ((kz == 0) & (ky == 0) & (kx > 0))


class Lattice:
    """Mean-zero Fourier lattice of integer wavevectors with 0 < |k| <= N.

    Stores the half-space representatives in a fixed deterministic order:
    ascending |k|^2, ties broken lexicographically by (kx, ky, kz).  The
    ordering defines the canonical enumeration used by every sampler and
    reduction, which is what makes runs reproducible.
    """

    def __init__(self, radius: int):
        if radius < 1:
            raise ValueError(f"lattice radius must be a positive integer, got {radius}")
        self.radius = int(radius)
        kvecs, k2 = _enumerate_half_space(self.radius)
        self.kvecs = kvecs          # (M, 3) int32, half-space only
        self.k2 = k2                # (M,) int64, squared norms
        self.knorm = np.sqrt(k2.astype(np.float64))
        self.size = kvecs.shape[0]  # number of stored (half-space) modes
        self._lookup = None

    def __eq__(self, other):
        return isinstance(other, Lattice) and other.radius == self.radius

    def __hash__(self):
        return hash(("Lattice", self.radius))

    def __repr__(self):
        return f"Lattice(radius={self.radius}, modes={self.size})"

    # -- mode lookup -------------------------------------------------------

    def _ensure_lookup(self):
        if self._lookup is None:
            span = 2 * self.radius + 1
            keys = _encode(self.kvecs, self.radius, span)
            order = np.argsort(keys, kind="stable")
            self._lookup = (keys[order], order.astype(np.int64), span)

    def index_of(self, kvecs: np.ndarray):
        """Map arbitrary integer wavevectors to stored half-space slots.

        Returns (idx, conj, valid): row indices into the half-space arrays,
        whether the coefficient must be conjugated (the vector lies in the
        lower half-space), and whether the vector is on the lattice at all
        (nonzero and |k| <= N).  Invalid rows get idx 0 and must be masked
        by the caller.
        """
        self._ensure_lookup()
        sorted_keys, order, span = self._lookup
        kvecs = np.asarray(kvecs)
        single = kvecs.ndim == 1
        kv = np.atleast_2d(kvecs).astype(np.int64)

        k2 = np.einsum("ij,ij->i", kv, kv)
        valid = (k2 > 0) & (k2 <= self.radius**2)
        hs = half_space_mask(kv)
        rep = np.where(hs[:, None], kv, -kv)
        rep = np.clip(rep, -self.radius, self.radius)  # keep encoding in range
        keys = _encode(rep, self.radius, span)
        pos = np.searchsorted(sorted_keys, keys)
        pos = np.clip(pos, 0, sorted_keys.size - 1)
        found = sorted_keys[pos] == keys
        valid &= found
        idx = np.where(valid, order[pos], 0)
        conj = (~hs) & valid
        if single:
            return idx[0], conj[0], valid[0]
        return idx, conj, valid

    # -- derived geometry ----------------------------------------------------

    def full_kvecs(self) -> np.ndarray:
        """All lattice wavevectors: half-space rows followed by their negatives."""
        return np.concatenate([self.kvecs, -self.kvecs], axis=0)

    def shell_mask(self, kappa_lo: float, kappa_hi: float) -> np.ndarray:
        """Half-space mask of kappa_lo <= |k| < kappa_hi, compared on |k|^2."""
        lo2 = kappa_lo * kappa_lo
        k2 = self.k2.astype(np.float64)
        mask = k2 >= lo2
        if np.isfinite(kappa_hi):
            mask &= k2 < kappa_hi * kappa_hi
        return mask

    def grid_size(self) -> int:
        """Zero-padded FFT grid edge: >= 2x the mode span per axis.

        With modes supported on |k| <= N, quadratic products reach |k| <= 2N;
        a grid of 4N+2 points guarantees no aliased product mode wraps back
        into |k| <= N (the exactness requirement, stricter than the 2/3 rule).
        """
        return 4 * self.radius + 2


def _enumerate_half_space(radius: int):
    rng = np.arange(-radius, radius + 1, dtype=np.int32)
    blocks = []
    r2 = radius * radius
    for kz in range(0, radius + 1):
        rem = r2 - kz * kz
        if rem < 0:
            break
        kx, ky = np.meshgrid(rng, rng, indexing="ij")
        kx = kx.ravel()
        ky = ky.ravel()
        keep = (kx * kx + ky * ky).astype(np.int64) <= rem
        if kz == 0:
            keep &= (ky > 0) | ((ky == 0) & (kx > 0))
        kxk, kyk = kx[keep], ky[keep]
        block = np.column_stack(
            [kxk, kyk, np.full(kxk.shape, kz, dtype=np.int32)]
        )
        blocks.append(block)
    kvecs = np.concatenate(blocks, axis=0)
    k2 = np.einsum("ij,ij->i", kvecs.astype(np.int64), kvecs.astype(np.int64))
    order = np.lexsort((kvecs[:, 2], kvecs[:, 1], kvecs[:, 0], k2))
    return np.ascontiguousarray(kvecs[order]), np.ascontiguousarray(k2[order])


def _encode(kvecs: np.ndarray, radius: int, span: int) -> np.ndarray:
    kv = kvecs.astype(np.int64)
    return ((kv[..., 0] + radius) * span + (kv[..., 1] + radius)) * span + (
        kv[..., 2] + radius
    )


@lru_cache(maxsize=8)
def get_lattice(radius: int) -> Lattice:
    """Shared lattice instances; construction is the only expensive step."""
    return Lattice(radius)


# ---------------------------------------------------------------------------
# Craya frame
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CrayaFrame:
    """Orthonormal frame (d, e, f) attached to a wavevector.

    d points along k; e and f span the incompressible plane:
        e = k x z / |k x z|,   f = k x (k x z) / |k x (k x z)|.
    """

    d: np.ndarray
    e: np.ndarray
    f: np.ndarray


def craya_basis(k) -> CrayaFrame:
    """Frame for a single nonzero integer wavevector.

    On the vertical axis (kx = ky = 0) the cross products degenerate; we take
    the azimuth -> 0 limit, which gives e = (0, -1, 0), f = (sign(kz), 0, 0).
    """
    kv = np.asarray(k, dtype=np.float64)
    if kv.shape != (3,):
        raise ValueError("wavevector must have three components")
    norm = np.sqrt(kv @ kv)
    if norm == 0.0:
        raise ValueError("zero wavevector has no Craya frame")
    d = kv / norm
    kh = np.hypot(kv[0], kv[1])
    if kh == 0.0:
        e = np.array([0.0, -1.0, 0.0])
        f = np.array([np.sign(kv[2]), 0.0, 0.0])
    else:
        e = np.array([kv[1], -kv[0], 0.0]) / kh
        f = np.array([kv[0] * kv[2], kv[1] * kv[2], -kh * kh]) / (norm * kh)
    return CrayaFrame(d=d, e=e, f=f)


def craya_ef(kvecs: np.ndarray):
    """Vectorized e and f frame vectors for an array of wavevectors."""
    kv = np.asarray(kvecs, dtype=np.float64)
    kx, ky, kz = kv[:, 0], kv[:, 1], kv[:, 2]
    kh2 = kx * kx + ky * ky
    kh = np.sqrt(kh2)
    norm = np.sqrt(kh2 + kz * kz)
    deg = kh2 == 0.0
    khs = np.where(deg, 1.0, kh)
    ns = np.where(norm == 0.0, 1.0, norm)
    e = np.stack([ky / khs, -kx / khs, np.zeros_like(kx)], axis=1)
    f = np.stack([kx * kz, ky * kz, -kh2], axis=1) / (ns * khs)[:, None]
    e[deg] = (0.0, -1.0, 0.0)
    f[deg] = 0.0
    f[deg, 0] = np.sign(kz[deg])
    return e, f


def craya_dot_products(mvecs: np.ndarray, jvec) -> tuple[np.ndarray, np.ndarray]:
    """(e_m . j, f_m . j) for an array of frame vectors m and one fixed j.

    Avoids materializing the frames; used by the closed-form lattice sums
    where m = k - j runs over entire shells.
    """
    mv = np.asarray(mvecs, dtype=np.float64)
    jx, jy, jz = float(jvec[0]), float(jvec[1]), float(jvec[2])
    mx, my, mz = mv[:, 0], mv[:, 1], mv[:, 2]
    mh2 = mx * mx + my * my
    deg = mh2 == 0.0
    mh = np.sqrt(np.where(deg, 1.0, mh2))
    norm = np.sqrt(mh2 + mz * mz)
    ns = np.where(norm == 0.0, 1.0, norm)
    xi = (my * jx - mx * jy) / mh
    ups = (mx * mz * jx + my * mz * jy - mh2 * jz) / (ns * mh)
    xi = np.where(deg, -jy, xi)
    ups = np.where(deg, np.sign(mz) * jx, ups)
    return xi, ups


# ---------------------------------------------------------------------------
# Fields
# ---------------------------------------------------------------------------

@dataclass
class SpectralField:
    """Scalar field as complex coefficients over the lattice half-space."""

    lattice: Lattice
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.complex128)
        if self.coeffs.shape != (self.lattice.size,):
            raise ValueError(
                f"coefficient array has shape {self.coeffs.shape}, "
                f"lattice holds {self.lattice.size} modes"
            )

    def copy(self) -> "SpectralField":
        return SpectralField(self.lattice, self.coeffs.copy())

    @classmethod
    def zeros(cls, lattice: Lattice) -> "SpectralField":
        return cls(lattice, np.zeros(lattice.size, dtype=np.complex128))


@dataclass
class VectorField:
    """Vector field as (M, 3) complex coefficients over the half-space."""

    lattice: Lattice
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.complex128)
        if self.coeffs.shape != (self.lattice.size, 3):
            raise ValueError("vector coefficients must have shape (modes, 3)")

    def component(self, axis: int) -> SpectralField:
        return SpectralField(self.lattice, self.coeffs[:, axis].copy())


def _require_same_lattice(a, b):
    if a.lattice != b.lattice:
        raise LatticeMismatchError(
            f"lattice mismatch: {a.lattice!r} vs {b.lattice!r}"
        )


# ---------------------------------------------------------------------------
# Norms and projections
# ---------------------------------------------------------------------------

def project_shell(field: SpectralField, kappa_lo: float, kappa_hi: float) -> SpectralField:
    """Keep exactly the modes with kappa_lo <= |k| < kappa_hi."""
    if not (0.0 < kappa_lo < kappa_hi):
        raise ValueError(f"need 0 < kappa_lo < kappa_hi, got ({kappa_lo}, {kappa_hi})")
    mask = field.lattice.shell_mask(kappa_lo, kappa_hi)
    return SpectralField(field.lattice, np.where(mask, field.coeffs, 0.0))


def l2_norm_sq(field: SpectralField) -> float:
    """Squared L2 norm over the box: (2pi)^3 times the full-lattice sum of |f_k|^2."""
    return 2.0 * BOX_VOLUME * float(np.sum(np.abs(field.coeffs) ** 2))


def l2_norm(field: SpectralField) -> float:
    return float(np.sqrt(l2_norm_sq(field)))


def weighted_norm_sq(field: SpectralField, s: float) -> float:
    """(2pi)^3 sum over the full lattice of |k|^{2s} |f_k|^2."""
    w = field.lattice.k2.astype(np.float64) ** s
    return 2.0 * BOX_VOLUME * float(np.sum(w * np.abs(field.coeffs) ** 2))


def abs_sum(field: SpectralField) -> float:
    """Sum over the full lattice of |f_k| (twice the half-space sum)."""
    return 2.0 * float(np.sum(np.abs(field.coeffs)))


def vector_l2_norm_sq(field: VectorField) -> float:
    return 2.0 * BOX_VOLUME * float(np.sum(np.abs(field.coeffs) ** 2))


# ---------------------------------------------------------------------------
# Differential operators
# ---------------------------------------------------------------------------

def inverse_laplacian(field: SpectralField) -> SpectralField:
    """f_k -> -f_k / |k|^2; always defined because the mean mode is absent."""
    return SpectralField(field.lattice, -field.coeffs / field.lattice.k2)


def laplacian(field: SpectralField) -> SpectralField:
    return SpectralField(field.lattice, -field.coeffs * field.lattice.k2)


def gradient(field: SpectralField) -> VectorField:
    """f_k -> i k f_k, componentwise."""
    kv = field.lattice.kvecs.astype(np.float64)
    return VectorField(field.lattice, 1j * kv * field.coeffs[:, None])


# ---------------------------------------------------------------------------
# Physical-space grid transforms (zero-padded, alias-free)
# ---------------------------------------------------------------------------

def _wrap_indices(kvecs: np.ndarray, grid: int):
    kv = np.asarray(kvecs)
    return (kv[:, 0] % grid, kv[:, 1] % grid, kv[:, 2] % grid)


def _spectral_cube(lattice: Lattice, coeffs: np.ndarray, grid: int) -> np.ndarray:
    cube = np.zeros((grid, grid, grid), dtype=np.complex128)
    cube[_wrap_indices(lattice.kvecs, grid)] = coeffs
    cube[_wrap_indices(-lattice.kvecs, grid)] = np.conj(coeffs)
    return cube


def to_grid(field: SpectralField, grid: int | None = None) -> np.ndarray:
    """Values f(x_n) on the padded uniform grid, x_n = 2pi n / G."""
    g = grid or field.lattice.grid_size()
    cube = _spectral_cube(field.lattice, field.coeffs, g)
    return np.fft.ifftn(cube) * g**3


def from_grid(values: np.ndarray, lattice: Lattice) -> SpectralField:
    """Galerkin truncation of grid values back to the lattice half-space."""
    g = values.shape[0]
    cube = np.fft.fftn(values) / g**3
    return SpectralField(lattice, cube[_wrap_indices(lattice.kvecs, g)].copy())


# ---------------------------------------------------------------------------
# Advection
# ---------------------------------------------------------------------------

def advect(u, theta: SpectralField, method: str = "fft") -> SpectralField:
    """Galerkin-truncated advection product (u . grad theta).

    u may be a VectorField or any object exposing ``.field()`` that returns
    one (a velocity realization).  The two methods compute the identical
    truncated convolution

        (u . grad theta)_k = i sum_j (u_{k-j} . j) theta_j,   |k| <= N:

    ``fft``     zero-padded pseudospectral product (alias-free by padding),
    ``direct``  explicit convolution sum, O(M^2), for small lattices/oracles.
    """
    if hasattr(u, "field"):
        u = u.field()
    _require_same_lattice(u, theta)
    if method == "fft":
        return _advect_fft(u, theta)
    if method == "direct":
        return _advect_direct(u, theta)
    raise ValueError(f"unknown advection method {method!r}")


def _advect_fft(u: VectorField, theta: SpectralField) -> SpectralField:
    lat = theta.lattice
    g = lat.grid_size()
    grad = gradient(theta)
    prod = np.zeros((g, g, g), dtype=np.complex128)
    for axis in range(3):
        ugrid = np.fft.ifftn(_spectral_cube(lat, u.coeffs[:, axis], g))
        dgrid = np.fft.ifftn(_spectral_cube(lat, grad.coeffs[:, axis], g))
        prod += ugrid * dgrid
    cube = np.fft.fftn(prod) * g**3  # the two 1/g^3 from ifftn cancel one g^3
    return SpectralField(lat, cube[_wrap_indices(lat.kvecs, g)].copy())


def _advect_direct(u: VectorField, theta: SpectralField) -> SpectralField:
    lat = theta.lattice
    jfull = lat.full_kvecs().astype(np.int64)
    tfull = np.concatenate([theta.coeffs, np.conj(theta.coeffs)])
    out = np.zeros(lat.size, dtype=np.complex128)
    for row in range(lat.size):
        m = lat.kvecs[row].astype(np.int64) - jfull
        idx, conj, valid = lat.index_of(m)
        uc = u.coeffs[idx]
        uc = np.where(conj[:, None], np.conj(uc), uc)
        dots = np.einsum("ij,ij->i", uc, jfull.astype(np.float64))
        out[row] = 1j * np.sum(np.where(valid, dots * tfull, 0.0))
    return SpectralField(lat, out)
