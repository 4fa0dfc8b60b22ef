"""Analytic results for the chiral boundary mode and the small PT models.

The low-energy description of the topological edge channel is a single chiral
branch H = v_f k + V(x) with a complex quasiperiodic V.  Everything here is
closed-form or quadrature-based; no dense diagonalization happens in this
module, so these routines serve as independent cross-checks of the lattice
numerics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lattice import GeometryError, PotentialProfile

_PHI = (1.0 + math.sqrt(5.0)) / 2.0


class TheoryInputError(ValueError):
    """Arguments outside the domain of an analytic expression."""


# ---------------------------------------------------------------------------
# imaginary potential average


def _imag_potential(profile: PotentialProfile, x):
    """Continuous-x imaginary part of the boundary potential.

    V(x) = V cos(2 pi alpha x + i h) has imaginary part
    -V sinh(h) sin(2 pi alpha x).
    """
    return -profile.V * math.sinh(profile.h) * np.sin(
        2.0 * np.pi * profile.alpha * x
    )


def eps_i_average(profile: PotentialProfile, points_per_unit: int = 12) -> float:
    """Mean of Im V(x) over one circumference, by composite Gauss-Legendre.

    The imaginary offset of the chiral branch must equal this average for the
    wavefunction to close around the ring, so the value doubles as the
    predicted Im(E) of every quantized edge level.
    """
    if points_per_unit < 2:
        raise TheoryInputError("points_per_unit must be >= 2")
    L = profile.length
    nodes, weights = np.polynomial.legendre.leggauss(points_per_unit)
    # map the rule onto each unit cell [n, n+1]
    offsets = np.arange(L)[:, None]
    x = offsets + 0.5 * (nodes[None, :] + 1.0)
    w = 0.5 * weights[None, :]
    total = float(np.sum(w * _imag_potential(profile, x)))
    return total / L


def eps_i_closed(profile: PotentialProfile) -> float:
    """Closed-form companion of eps_i_average.

    Integrating -V sinh(h) sin(2 pi alpha x) over [0, L] gives
    -V sinh(h) sin^2(pi alpha L) / (pi alpha L).
    """
    aL = profile.alpha * profile.length
    return -profile.V * math.sinh(profile.h) * math.sin(math.pi * aL) ** 2 / (
        math.pi * aL
    )


# ---------------------------------------------------------------------------
# chiral wavefunction


def chiral_wavefunction(
    profile: PotentialProfile,
    v_f: float,
    domain_term=None,
    eps_imag: float | None = None,
    oversample: int = 64,
):
    """Density of the chiral edge solution on the ring, plus closure residual.

    The amplitude obeys d(ln psi)/dx = (Im V(x) + g(x) - eps_i) / v_f where
    g is an optional extra imaginary on-site term (e.g. a gain/loss domain
    pattern) given as a callable of x.  Returns (density, residual) with the
    density sampled on integer sites and normalized to sum 1; the residual is
    the relative mismatch of the amplitude after one full loop and is
    exponentially small whenever eps_imag equals the true average.
    """
    if v_f == 0:
        raise TheoryInputError("v_f must be nonzero")
    if oversample < 4:
        raise TheoryInputError("oversample must be >= 4")
    L = profile.length
    m = L * oversample
    x = np.arange(m + 1) / oversample
    rate = _imag_potential(profile, x)
    if domain_term is not None:
        rate = rate + np.asarray([domain_term(xi) for xi in x], dtype=float)
    if eps_imag is None:
        eps_imag = float(np.mean(rate[:-1]))
    rate = (rate - eps_imag) / v_f
    dx = 1.0 / oversample
    # cumulative trapezoid of the log-amplitude
    log_amp = np.concatenate(
        ([0.0], np.cumsum(0.5 * (rate[1:] + rate[:-1]) * dx))
    )
    residual = abs(math.expm1(log_amp[-1]))
    log_density = 2.0 * log_amp[:-1:oversample]
    log_density -= log_density.max()
    density = np.exp(log_density)
    density /= density.sum()
    return density, residual


def fit_v_f(in_gap_real_parts, circumference: int) -> float:
    """Edge-mode velocity from the two quantized levels nearest Re(E) = 0.

    Chiral quantization spaces consecutive levels by 2 pi |v_f| / L_x, so the
    central spacing hands back |v_f|.  Input is any iterable of in-gap Re(E)
    values from one edge branch.
    """
    re = np.sort(np.asarray(list(in_gap_real_parts), dtype=float))
    if re.size < 2:
        raise TheoryInputError("need at least two in-gap levels")
    order = np.argsort(np.abs(re))
    a, b = np.sort(re[order[:2]])
    if b - a <= 0:
        raise TheoryInputError("degenerate central levels")
    return (b - a) * circumference / (2.0 * np.pi)


def quantized_energies(
    profile: PotentialProfile, v_f: float, count: int
) -> np.ndarray:
    """Evenly spaced chiral levels v_f * 2 pi m / L + i * eps_i.

    Returns `count` levels centered on m = 0.  The real offset from the
    potential averages to zero for any ring-commensurate profile, so only the
    imaginary average enters.
    """
    if count < 1:
        raise TheoryInputError("count must be >= 1")
    m = np.arange(count) - (count - 1) // 2
    eps = eps_i_average(profile)
    return v_f * 2.0 * np.pi * m / profile.length + 1j * eps


# ---------------------------------------------------------------------------
# first-order perturbation


def perturbation_energy(states, site_indices, values) -> np.ndarray:
    """First-order shifts <psi|V|psi> for an on-site perturbation.

    `states` holds unperturbed eigenvectors as columns, `values` the complex
    on-site entries placed at `site_indices`.  Each state is normalized by its
    own total weight, so unnormalized inputs are fine.
    """
    psi = np.asarray(states)
    if psi.ndim == 1:
        psi = psi[:, None]
    idx = np.asarray(site_indices, dtype=int)
    vals = np.asarray(values, dtype=complex)
    if idx.shape[0] != vals.shape[0]:
        raise TheoryInputError("site_indices and values must align")
    weight = np.abs(psi) ** 2
    total = weight.sum(axis=0)
    if np.any(total == 0):
        raise TheoryInputError("zero-norm state")
    return (weight[idx, :] * vals[:, None]).sum(axis=0) / total


# ---------------------------------------------------------------------------
# half-ellipse spectrum fit


@dataclass(frozen=True)
class EllipseFit:
    center: float
    a: float
    b: float
    rms: float


def half_ellipse_fit(edge_eigenvalues) -> EllipseFit:
    """Least-squares half-ellipse through a complex arc of eigenvalues.

    Fits Im^2 = b^2 (1 - (Re - c)^2 / a^2) linearly in (1, Re, Re^2), then
    reports the rms vertical distance of |Im| from the fitted arc.  A
    spectrum with (numerically) zero imaginary part degenerates to b = 0 with
    rms equal to the rms of |Im| itself.
    """
    ev = np.asarray(list(edge_eigenvalues), dtype=complex)
    if ev.size < 3:
        raise TheoryInputError("need at least three eigenvalues")
    x = ev.real
    y2 = ev.imag**2
    if np.ptp(x) == 0:
        raise TheoryInputError("degenerate real parts")
    coeff = np.polynomial.polynomial.polyfit(x, y2, 2)
    p, q, r = coeff  # y2 ~ p + q x + r x^2
    if r >= 0:
        # no downward curvature: flat arc, treat as degenerate
        center = float(np.mean(x))
        b = math.sqrt(max(float(np.mean(y2)), 0.0))
        a = float(np.ptp(x)) / 2.0 or 1.0
        rms = float(np.sqrt(np.mean((np.abs(ev.imag) - b) ** 2)))
        return EllipseFit(center, a, b, rms)
    center = -q / (2.0 * r)
    b_sq = p - r * center**2
    if b_sq <= 0:
        b = 0.0
        a = float(np.ptp(x)) / 2.0 or 1.0
        rms = float(np.sqrt(np.mean(ev.imag**2)))
        return EllipseFit(float(center), a, b, rms)
    b = math.sqrt(b_sq)
    a = math.sqrt(b_sq / (-r))
    arg = 1.0 - ((x - center) / a) ** 2
    model = b * np.sqrt(np.clip(arg, 0.0, None))
    rms = float(np.sqrt(np.mean((np.abs(ev.imag) - model) ** 2)))
    return EllipseFit(float(center), float(a), float(b), rms)


# ---------------------------------------------------------------------------
# four-site PT models


def four_site_eigs_closed(kind: str, t: float, gamma: float) -> np.ndarray:
    """Closed-form spectrum of the 4-site chain with two i*gamma sites.

    Both variants reduce, after the shift lambda = mu + i gamma / 2, to a
    biquadratic in mu:

    * non-adjacent (sites 1 and 3):  mu^2 = phi^{+-2} t^2 - gamma^2 / 4,
      with phi the golden ratio; the discriminant 5 t^4 is gamma-independent.
    * adjacent (sites 1 and 2):  mu^2 = (3 t^2 - gamma^2/2
      +- t sqrt(5 t^2 - 4 gamma^2)) / 2.

    Principal complex square roots throughout.
    """
    if t <= 0:
        raise TheoryInputError(f"t must be > 0, got {t}")
    shift = 0.5j * gamma
    if kind == "non-adjacent":
        mu_sq = np.array(
            [
                _PHI**2 * t**2 - gamma**2 / 4.0,
                _PHI ** (-2) * t**2 - gamma**2 / 4.0,
            ],
            dtype=complex,
        )
    elif kind == "adjacent":
        s = t * np.sqrt(complex(5.0 * t**2 - 4.0 * gamma**2))
        mu_sq = (3.0 * t**2 - gamma**2 / 2.0 + np.array([s, -s])) / 2.0
    else:
        raise GeometryError(f"kind must be adjacent or non-adjacent, got {kind!r}")
    mu = np.sqrt(mu_sq)
    eigs = np.concatenate([shift + mu, shift - mu])
    order = np.lexsort((eigs.imag, eigs.real))
    return eigs[order]


def exceptional_points(kind: str, t: float, tol: float = 1e-10) -> list:
    """Gamma values where the 4-site spectrum coalesces.

    The non-adjacent pair has closed-form roots (sqrt 5 -+ 1) t.  The
    adjacent variant is located by bisection on the onset of imaginary
    splitting about the common i gamma / 2 offset, which is how the lattice
    sweep detects the same event.
    """
    if t <= 0:
        raise TheoryInputError(f"t must be > 0, got {t}")
    if kind == "non-adjacent":
        return [(math.sqrt(5.0) - 1.0) * t, (math.sqrt(5.0) + 1.0) * t]
    if kind != "adjacent":
        raise GeometryError(f"kind must be adjacent or non-adjacent, got {kind!r}")

    def split(gamma: float) -> float:
        eigs = four_site_eigs_closed("adjacent", t, gamma)
        return float(np.max(np.abs(eigs.imag - gamma / 2.0)))

    lo, hi = 0.0, 3.0 * t
    if split(hi) <= tol:
        raise TheoryInputError("no splitting found below 3t")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if split(mid) > 1e-8 * t:
            hi = mid
        else:
            lo = mid
    return [0.5 * (lo + hi)]
