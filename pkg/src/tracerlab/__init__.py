"""Spectral Monte Carlo laboratory for passive-tracer spectra.

Synthesizes random incompressible velocity fields with power-law mode
amplitudes, solves the stationary and time-dependent tracer equation
``dtheta/dt + u . grad theta = laplacian theta + g`` by spectral fixed-point
iteration, and verifies the Batchelor-Howells-Townsend |k|^-4 scaling of the
tracer-to-energy spectral ratio against exact lattice-sum predictions.
"""

__version__ = "0.1.0"
