"""Fixed-point solution of the static tracer balance  u . grad theta = lap theta + g.

The iteration is plain Picard:

    theta^(0)   = -lap^-1 g
    theta^(n+1) = lap^-1 (u . grad theta^(n) - g)

whose first increment is the leading response
vartheta = -lap^-1 (u . grad lap^-1 g).  A dense linear solve over the
half-space modes provides an independent oracle, and the contraction
estimate turns the operator-norm machinery into a computable number
eps_hat = 4 U Xi piomega_hat that predicts geometric convergence when < 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .spectral import (
    Lattice,
    LatticeMismatchError,
    SpectralField,
    VectorField,
    advect,
    l2_norm,
    l2_norm_sq,
)
from .synthesis import SourceSpec, VelocityParams


class SingularOperatorError(RuntimeError):
    """Dense operator was numerically singular; carries the smallest singular value."""

    def __init__(self, smallest_sv: float):
        super().__init__(f"static operator is singular (smallest sv {smallest_sv:.3e})")
        self.smallest_sv = smallest_sv


@dataclass
class SolveDiagnostics:
    """Convergence record of one fixed-point solve."""

    iterations: int
    increment_norms: list[float] = field(default_factory=list)
    residual: float = float("nan")
    estimated_ratio: float = float("nan")
    converged: bool = False

    def to_dict(self) -> dict:
        def finite(x):
            return float(x) if np.isfinite(x) else None

        return {
            "iterations": self.iterations,
            "increments": [finite(v) for v in self.increment_norms],
            "residual": finite(self.residual),
            "ratio": finite(self.estimated_ratio),
            "converged": self.converged,
        }


def _as_vector_field(u) -> VectorField:
    return u.field() if hasattr(u, "field") else u


def first_iterate(u, gamma_field: SpectralField, method: str = "operator") -> SpectralField:
    """Leading tracer response vartheta = -lap^-1 (u . grad lap^-1 g).

    ``operator`` composes the spectral operators (any source).
    ``direct``   sums the convolution over the source support only; exact and
                 cheap for finite-mode sources at any lattice size.
    """
    uf = _as_vector_field(u)
    if method == "operator":
        adv = advect(uf, gamma_field)
        return SpectralField(gamma_field.lattice, adv.coeffs / gamma_field.lattice.k2)
    if method == "direct":
        return _first_iterate_direct(uf, gamma_field)
    raise ValueError(f"unknown first-iterate method {method!r}")


def _first_iterate_direct(u: VectorField, gamma_field: SpectralField) -> SpectralField:
    lat = gamma_field.lattice
    if u.lattice != lat:
        raise LatticeMismatchError("velocity and source live on different lattices")
    nz = np.nonzero(gamma_field.coeffs)[0]
    jvecs = np.concatenate([lat.kvecs[nz], -lat.kvecs[nz]]).astype(np.int64)
    gammas = np.concatenate([gamma_field.coeffs[nz], np.conj(gamma_field.coeffs[nz])])
    out = np.zeros(lat.size, dtype=np.complex128)
    kv = lat.kvecs.astype(np.int64)
    for j, gam in zip(jvecs, gammas):
        m = kv - j
        idx, conj, valid = lat.index_of(m)
        uc = u.coeffs[idx]
        uc = np.where(conj[:, None], np.conj(uc), uc)
        dots = uc @ j.astype(np.float64)
        out += np.where(valid, 1j * gam * dots, 0.0)
    return SpectralField(lat, out / lat.k2)


class FirstIterateOperator:
    """Precomputed map (V, W[, Z]) -> vartheta for a finite-mode source.

    Builds the gather indices and geometric weights once, so ensembles pay
    only a few vector operations per realization.  ``output_rows`` restricts
    the computed modes (e.g. a dyad or a handful of probe wavevectors).
    """

    def __init__(
        self,
        lattice: Lattice,
        source: SourceSpec,
        params: VelocityParams,
        output_rows: np.ndarray | None = None,
    ):
        if not source.is_finite_mode():
            raise ValueError("direct first-iterate operator needs a finite-mode source")
        self.lattice = lattice
        self.params = params
        rows = np.arange(lattice.size) if output_rows is None else np.asarray(output_rows)
        self.rows = rows
        jvecs, gammas = source.support(lattice)
        self.n_source = jvecs.shape[0]
        self.n_half_source = self.n_source // 2

        kv = lattice.kvecs[rows].astype(np.int64)
        inv_k2 = 1.0 / lattice.k2[rows].astype(np.float64)
        idx_list, weight_e, weight_f = [], [], []
        from .spectral import craya_dot_products

        for j, gam in zip(jvecs, gammas):
            m = kv - j
            idx, conj, valid = lattice.index_of(m)
            # fold the conjugation into the weights: for m in the lower
            # half-space u_m = conj(u_h), so the V/W factors conjugate and the
            # frame is evaluated at the representative h = -m.
            rep = np.where(conj[:, None], -m, m)
            xi, ups = craya_dot_products(rep, j.astype(np.float64))
            amp = np.where(valid, np.sqrt((rep**2).sum(axis=1)).astype(np.float64), 1.0) ** params.beta
            base = 1j * gam * inv_k2 * amp
            weight_e.append(np.where(valid, base * params.ue * xi, 0.0))
            weight_f.append(np.where(valid, base * params.uf * ups, 0.0))
            idx_list.append(np.where(valid, idx, 0))
            if "conj_list" not in vars(self):
                self.conj_list = []
            self.conj_list.append(conj & valid)
        self.idx = np.array(idx_list)          # (S, R)
        self.conj = np.array(self.conj_list)   # (S, R)
        self.we = np.array(weight_e)           # (S, R) complex
        self.wf = np.array(weight_f)

    def apply(self, v: np.ndarray, w: np.ndarray, z: np.ndarray | None = None) -> np.ndarray:
        """vartheta coefficients on the selected rows for one realization.

        v, w are the half-space amplitude draws; z, if given, holds the
        source randomizers for the half-space support modes (canonical
        order), extended to -k by conjugation internally.
        """
        vg = v[self.idx]
        wg = w[self.idx]
        np.conjugate(vg, where=self.conj, out=vg)
        np.conjugate(wg, where=self.conj, out=wg)
        terms = self.we * vg + self.wf * wg
        if z is not None:
            zfull = np.concatenate([z, np.conj(z)])
            terms = terms * zfull[:, None]
        return terms.sum(axis=0)


def residual(u, gamma_field: SpectralField, theta: SpectralField) -> float:
    """L2 norm of  lap theta - u . grad theta + g  (with g_k = -|k|^2 gamma_k)."""
    uf = _as_vector_field(u)
    lat = theta.lattice
    adv = advect(uf, theta)
    res = -lat.k2 * theta.coeffs - adv.coeffs - lat.k2 * gamma_field.coeffs
    return l2_norm(SpectralField(lat, res))


def fixed_point_solve(
    u,
    gamma_field: SpectralField,
    tol: float | None = None,
    max_iter: int = 200,
    advect_method: str = "fft",
) -> tuple[SpectralField, SolveDiagnostics]:
    """Picard iteration from theta^(0) = -lap^-1 g.

    Stops once the L2 increment falls below tol (default 1e-12 ||gamma||) and
    the residual certificate  residual <= 10 tol (1 + ||g||)  holds; a
    non-convergent run returns converged=False in the diagnostics.
    """
    uf = _as_vector_field(u)
    lat = gamma_field.lattice
    if uf.lattice != lat:
        raise LatticeMismatchError("velocity and source live on different lattices")
    if tol is None:
        tol = 1e-12 * l2_norm(gamma_field)
    if tol <= 0.0:
        raise ValueError("tolerance must be positive")
    g_norm = l2_norm(SpectralField(lat, -lat.k2 * gamma_field.coeffs))
    cert = 10.0 * tol * (1.0 + g_norm)

    theta = SpectralField(lat, -gamma_field.coeffs)
    increments: list[float] = []
    converged = False
    diverged = False
    res = float("nan")
    for _ in range(max_iter):
        adv = advect(uf, theta, method=advect_method)
        new = SpectralField(lat, -adv.coeffs / lat.k2 - gamma_field.coeffs)
        inc = l2_norm(SpectralField(lat, new.coeffs - theta.coeffs))
        increments.append(inc)
        theta = new
        if inc < tol:
            res = residual(uf, gamma_field, theta)
            if res <= cert:
                converged = True
                break
        if not np.isfinite(inc) or inc > 1e9 * max(increments[0], tol):
            diverged = True  # amplitude above the contraction threshold
            break
    if np.isnan(res):
        res = residual(uf, gamma_field, theta) if not diverged else float("inf")
    ratios = [
        increments[i + 1] / increments[i]
        for i in range(len(increments) - 1)
        if increments[i] > 0.0 and increments[i + 1] > 0.0
    ]
    est = float(np.exp(np.mean(np.log(ratios)))) if ratios else 0.0
    diag = SolveDiagnostics(
        iterations=len(increments),
        increment_norms=increments,
        residual=res,
        estimated_ratio=est,
        converged=converged,
    )
    return theta, diag


def dense_oracle_solve(u, gamma_field: SpectralField) -> SpectralField:
    """Direct dense solve of (lap - u . grad) theta = -g over half-space modes.

    The operator is assembled entry by entry from the convolution formula
    (independent of the advect routines) with the real/imaginary split, so it
    cross-checks both the iteration and the product operator.  Intended for
    small lattices only.
    """
    uf = _as_vector_field(u)
    lat = gamma_field.lattice
    if uf.lattice != lat:
        raise LatticeMismatchError("velocity and source live on different lattices")
    m = lat.size
    if m > 2500:
        raise ValueError(f"dense oracle limited to small lattices ({m} modes requested)")
    a = np.zeros((2 * m, 2 * m))
    kv = lat.kvecs.astype(np.int64)
    jfloat = kv.astype(np.float64)

    for h in range(m):
        # theta_j contribution: coefficient c1 = i (u_{h-j} . j)
        m1 = kv[h] - kv
        idx, conj, valid = lat.index_of(m1)
        uc = uf.coeffs[idx]
        uc = np.where(conj[:, None], np.conj(uc), uc)
        c1 = 1j * np.einsum("ij,ij->i", uc, jfloat)
        c1 = np.where(valid, c1, 0.0)
        # conj(theta_j) contribution: coefficient c2 = -i (u_{h+j} . j)
        m2 = kv[h] + kv
        idx2, conj2, valid2 = lat.index_of(m2)
        uc2 = uf.coeffs[idx2]
        uc2 = np.where(conj2[:, None], np.conj(uc2), uc2)
        c2 = -1j * np.einsum("ij,ij->i", uc2, jfloat)
        c2 = np.where(valid2, c2, 0.0)

        # rows: equation is  -|h|^2 theta_h - (u.grad theta)_h = |h|^2 gamma_h
        re, im = 2 * h, 2 * h + 1
        a[re, 0::2] = -(c1.real + c2.real)
        a[re, 1::2] = -(-c1.imag + c2.imag)
        a[im, 0::2] = -(c1.imag + c2.imag)
        a[im, 1::2] = -(c1.real - c2.real)
        a[re, 2 * h] += -float(lat.k2[h])
        a[im, 2 * h + 1] += -float(lat.k2[h])

    rhs = np.zeros(2 * m)
    rhs[0::2] = lat.k2 * gamma_field.coeffs.real
    rhs[1::2] = lat.k2 * gamma_field.coeffs.imag
    try:
        x = np.linalg.solve(a, rhs)
    except np.linalg.LinAlgError:
        raise SingularOperatorError(float(np.linalg.svd(a, compute_uv=False)[-1]))
    return SpectralField(lat, x[0::2] + 1j * x[1::2])


# ---------------------------------------------------------------------------
# Contraction estimate
# ---------------------------------------------------------------------------

def k_beta_weight(knorm, beta: float, kappa_g: float):
    """Spectral weight min(1, (2 kappa_g)^-beta |k|^beta); both branches meet
    at |k| = 2 kappa_g."""
    kn = np.asarray(knorm, dtype=np.float64)
    return np.minimum(1.0, (2.0 * kappa_g) ** (-beta) * kn**beta)


def contraction_estimate(
    params: VelocityParams, kappa_g: float, lattice: Lattice
) -> tuple[float, float]:
    """(piomega_hat, eps_hat): empirical contraction constants on this lattice.

    piomega_hat = max_k S_k / K(|k|) with
    S_k = sum_j |k-j|^beta |j|^-1 K(|j|), both factors truncated to the
    lattice exactly as the advection product is; eps_hat = 4 U Xi piomega_hat.
    The sum is evaluated as an exact lattice convolution via the padded FFT.
    """
    g = lattice.grid_size()
    kf = lattice.full_kvecs()
    k2f = np.concatenate([lattice.k2, lattice.k2]).astype(np.float64)
    knf = np.sqrt(k2f)
    ix = (kf[:, 0] % g, kf[:, 1] % g, kf[:, 2] % g)
    a = np.zeros((g, g, g))
    a[ix] = knf**params.beta
    b = np.zeros((g, g, g))
    b[ix] = k_beta_weight(knf, params.beta, kappa_g) / knf
    conv = np.fft.ifftn(np.fft.fftn(a) * np.fft.fftn(b)).real
    s_half = conv[
        lattice.kvecs[:, 0] % g, lattice.kvecs[:, 1] % g, lattice.kvecs[:, 2] % g
    ]
    piomega = float(np.max(s_half / k_beta_weight(lattice.knorm, params.beta, kappa_g)))
    eps = 4.0 * params.u_iso * params.xi * piomega
    return piomega, eps


def remainder_field(
    theta: SpectralField, vartheta: SpectralField, gamma_field: SpectralField
) -> SpectralField:
    """delta theta = theta + lap^-1 g - vartheta (all on one lattice)."""
    if theta.lattice != vartheta.lattice or theta.lattice != gamma_field.lattice:
        raise LatticeMismatchError("remainder operands live on different lattices")
    return SpectralField(
        theta.lattice, theta.coeffs + gamma_field.coeffs - vartheta.coeffs
    )
