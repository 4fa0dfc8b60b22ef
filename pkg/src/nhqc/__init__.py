"""Simulation library for a Chern insulator with a non-Hermitian quasicrystal edge.

Modules:
    lattice      Hamiltonian builders (AAH chain, coupled chains, Haldane
                 cylinder, boundary potential, impurities, domain wall,
                 four-site models).
    eigen        dense non-Hermitian eigendecomposition, state selection,
                 continuation tracking.
    observables  IPR, fractal dimension, scaling exponents, fidelity, gaps,
                 transition and zero counting.
    theory       closed-form results (chiral edge mode, quantized energies,
                 perturbation energy, half-ellipse fit, four-site spectra).
    sweep        parameter sweeps with persistence, resume, and plot data.
    cli          the `nhqc` command line interface.
"""

__version__ = "0.1.0"
