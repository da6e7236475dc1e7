"""On-disk formats: spectral-field CSV, velocity CSV, binary round-trip, and
JSON records.

Scalar fields are written as ``kx,ky,kz,re,im`` rows over the half-space in
canonical lattice order; vector fields use the 9-column layout
``kx,ky,kz,re_x,im_x,re_y,im_y,re_z,im_z``.  Floats are serialized with
``repr`` (shortest round-trip), so identical data produces identical bytes.
"""

from __future__ import annotations

import json
import numpy as np

from .spectral import Lattice, SpectralField, VectorField, get_lattice

FIELD_HEADER = "kx,ky,kz,re,im"
VECTOR_HEADER = "kx,ky,kz,re_x,im_x,re_y,im_y,re_z,im_z"


def _fmt(x: float) -> str:
    return repr(float(x))


def field_to_csv(field: SpectralField, path):
    with open(path, "w") as fh:
        fh.write(FIELD_HEADER + "\n")
        for kv, c in zip(field.lattice.kvecs, field.coeffs):
            fh.write(f"{kv[0]},{kv[1]},{kv[2]},{_fmt(c.real)},{_fmt(c.imag)}\n")


def field_from_csv(path, lattice: Lattice | None = None) -> SpectralField:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    kvecs = data[:, :3].astype(np.int64)
    if lattice is None:
        radius = int(round(np.sqrt(np.max(np.einsum("ij,ij->i", kvecs, kvecs)))))
        lattice = get_lattice(radius)
    if kvecs.shape[0] != lattice.size:
        raise ValueError(
            f"file holds {kvecs.shape[0]} modes, lattice expects {lattice.size}"
        )
    coeffs = np.zeros(lattice.size, dtype=np.complex128)
    idx, conj, valid = lattice.index_of(kvecs)
    if not (np.all(valid) and not np.any(conj)):
        raise ValueError("file rows are not canonical half-space modes")
    coeffs[idx] = data[:, 3] + 1j * data[:, 4]
    return SpectralField(lattice, coeffs)


def vector_to_csv(field: VectorField, path):
    with open(path, "w") as fh:
        fh.write(VECTOR_HEADER + "\n")
        for kv, c in zip(field.lattice.kvecs, field.coeffs):
            parts = [str(kv[0]), str(kv[1]), str(kv[2])]
            for axis in range(3):
                parts.append(_fmt(c[axis].real))
                parts.append(_fmt(c[axis].imag))
            fh.write(",".join(parts) + "\n")


def vector_from_csv(path, lattice: Lattice | None = None) -> VectorField:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    kvecs = data[:, :3].astype(np.int64)
    if lattice is None:
        radius = int(round(np.sqrt(np.max(np.einsum("ij,ij->i", kvecs, kvecs)))))
        lattice = get_lattice(radius)
    idx, conj, valid = lattice.index_of(kvecs)
    if not (np.all(valid) and not np.any(conj)):
        raise ValueError("file rows are not canonical half-space modes")
    coeffs = np.zeros((lattice.size, 3), dtype=np.complex128)
    for axis in range(3):
        coeffs[idx, axis] = data[:, 3 + 2 * axis] + 1j * data[:, 4 + 2 * axis]
    return VectorField(lattice, coeffs)


def field_to_npz(field: SpectralField, path):
    """Bit-exact binary round-trip format."""
    np.savez(path, radius=field.lattice.radius, coeffs=field.coeffs)


def field_from_npz(path) -> SpectralField:
    data = np.load(path)
    return SpectralField(get_lattice(int(data["radius"])), data["coeffs"])


def write_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
