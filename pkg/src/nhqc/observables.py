"""Spectral diagnostics: localization, fidelity, gaps, transition counting.

All operations are pure functions of arrays already computed elsewhere, so
they parallelize trivially over sweep grids.  Conventions:

* IPR uses the standard normalized fourth moment sum(|psi|^4)/sum(|psi|^2)^2
  over the chosen support (renormalized internally).
* the edge support is the same boundary row set that carries the potential;
  the factor 2*L_x enters only the beta normalization, which is defined on
  the full top zigzag chain.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lattice import LatticeMap, PotentialProfile


class UndefinedObservableError(ValueError):
    """The observable has no value on the given input (e.g. zero support weight)."""


class InputError(ValueError):
    """Malformed curve or size input."""


_WEIGHT_FLOOR = 1e-14


def ipr(state: np.ndarray, support: np.ndarray | None = None) -> float:
    """Inverse participation ratio on the chosen support.

    support=None means all sites; otherwise an index array (e.g. edge sites).
    The state is renormalized on the support, so the result is in [1/N, 1].
    """
    psi = np.asarray(state)
    if support is not None:
        psi = psi[support]
    weight = float(np.sum(np.abs(psi) ** 2))
    if weight < _WEIGHT_FLOOR:
        raise UndefinedObservableError("zero weight on the requested support")
    p4 = float(np.sum(np.abs(psi) ** 4))
    return p4 / weight**2


def edge_density(state: np.ndarray, lattice: LatticeMap, rows: int = 1) -> float:
    """Total probability on the boundary sites of a unit-normalized state."""
    psi = np.asarray(state)
    total = float(np.sum(np.abs(psi) ** 2))
    if total < _WEIGHT_FLOOR:
        raise UndefinedObservableError("state has zero norm")
    sites = lattice.boundary_sites(rows)
    return float(np.sum(np.abs(psi[sites]) ** 2)) / total


def fractal_dimension(sizes, iprs) -> tuple[float, float]:
    """Exponent tau of IPR ~ L^(-tau) from a log-log least-squares fit.

    Returns (tau, r_squared).  Needs at least 3 strictly increasing sizes.
    """
    sizes = np.asarray(sizes, dtype=float)
    iprs = np.asarray(iprs, dtype=float)
    if len(sizes) < 3:
        raise InputError(f"need >= 3 sizes, got {len(sizes)}")
    if len(sizes) != len(iprs):
        raise InputError("sizes and iprs length mismatch")
    if np.any(np.diff(sizes) <= 0):
        raise InputError("sizes must be strictly increasing")
    if np.any(iprs <= 0):
        raise InputError("iprs must be positive")
    x = np.log(sizes)
    y = np.log(iprs)
    slope, intercept = np.polyfit(x, y, 1)
    fit = slope * x + intercept
    ss_res = float(np.sum((y - fit) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return float(-slope), float(r2)


def scaling_exponent(edge_state: np.ndarray, edge_size: int | None = None) -> float:
    """beta in max(p) ~ (edge_size)^(-beta) for one edge-restricted state.

    edge_state holds the amplitudes on the top chain (2*L_x sites for the
    cylinder); probabilities are renormalized on that support.  The per-band
    minimum is taken by the caller.
    """
    psi = np.asarray(edge_state)
    if edge_size is None:
        edge_size = len(psi)
    if edge_size < 2:
        raise InputError("edge size must be >= 2")
    p = np.abs(psi) ** 2
    total = float(p.sum())
    if total < _WEIGHT_FLOOR:
        raise UndefinedObservableError("zero weight on the edge")
    pmax = float(p.max()) / total
    return float(-np.log(pmax) / np.log(edge_size))


def edge_fidelity(psi_a: np.ndarray, psi_b: np.ndarray,
                  edge_sites: np.ndarray) -> float:
    """|<a_edge|b_edge>| with both edge projections renormalized."""
    a = np.asarray(psi_a)[edge_sites]
    b = np.asarray(psi_b)[edge_sites]
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na < _WEIGHT_FLOOR or nb < _WEIGHT_FLOOR:
        raise UndefinedObservableError("zero edge weight in fidelity")
    return float(np.abs(np.vdot(a, b)) / (na * nb))


def gap_and_derivative(eg_curve, ef_curve, h_step: float):
    """Gap |E_f - E_g| and dE_g/dh on a uniform grid.

    Central differences inside, one-sided at the ends; needs >= 3 points.
    """
    eg = np.asarray(eg_curve, dtype=float)
    ef = np.asarray(ef_curve, dtype=float)
    if len(eg) < 3:
        raise InputError(f"need >= 3 grid points, got {len(eg)}")
    if len(eg) != len(ef):
        raise InputError("curve length mismatch")
    if h_step <= 0:
        raise InputError("h_step must be positive")
    gap = np.abs(ef - eg)
    deriv = np.gradient(eg, h_step)
    return gap, deriv


def max_abs_imag(eigenvalues) -> float:
    w = np.asarray(eigenvalues)
    return float(np.abs(w.imag).max()) if len(w) else 0.0


def delocalized_gap_family(eigenvalues, states, gap_edge: float = 1.0,
                           ipr_cutoff: float = 0.3) -> np.ndarray:
    """Boolean mask: in-gap states that are not trapped on a few sites.

    Keeps |Re E| < gap_edge with full-lattice IPR below ipr_cutoff.  The
    cutoff sits mid-plateau between extended boundary modes (IPR up to
    ~0.2 near their collision) and single-site trapped states (>= 0.37),
    so the mask is insensitive to its exact value.
    """
    w = np.asarray(eigenvalues)
    psi = np.asarray(states)
    if psi.ndim != 2 or psi.shape[1] != len(w):
        raise InputError("states must be columns aligned with eigenvalues")
    p2 = np.abs(psi) ** 2
    weight = p2.sum(axis=0)
    if np.any(weight < _WEIGHT_FLOOR):
        raise UndefinedObservableError("zero-norm state column")
    ipr_all = (p2**2).sum(axis=0) / weight**2
    return (np.abs(w.real) < gap_edge) & (ipr_all < ipr_cutoff)


class ZeroCount(int):
    """Integer zero count carrying a degeneracy flag for identically-zero Im."""

    def __new__(cls, count: int, degenerate: bool = False):
        obj = super().__new__(cls, count)
        obj.degenerate = degenerate
        return obj


def count_imag_zeros(profile: PotentialProfile, tol: float = 1e-12) -> ZeroCount:
    """Sign changes of Im(V_n) around the ring (periodic closure counted once).

    Entries with |Im| <= tol are dropped before counting, so an exact zero
    sitting between a + and a - sample contributes one change, not two.
    h = 0 makes Im identically zero: reported as 0 with degenerate=True.
    """
    im = np.asarray(profile.values).imag
    signs = np.sign(im[np.abs(im) > tol])
    if len(signs) == 0:
        return ZeroCount(0, degenerate=True)
    flips = int(np.sum(signs != np.roll(signs, 1)))
    return ZeroCount(flips, degenerate=False)


def _compress_plateaus(curve: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # collapse equal-value runs; return (values, start indices)
    keep = np.concatenate(([True], np.diff(curve) != 0))
    return curve[keep], np.flatnonzero(keep)


def local_minima_below(curve, threshold: float) -> np.ndarray:
    """Indices of local minima with value < threshold; plateaus count once."""
    f = np.asarray(curve, dtype=float)
    if len(f) < 2:
        return np.array([], dtype=int)
    vals, starts = _compress_plateaus(f)
    out = []
    for k in range(len(vals)):
        if vals[k] >= threshold:
            continue
        left_ok = k == 0 or vals[k - 1] > vals[k]
        right_ok = k == len(vals) - 1 or vals[k + 1] > vals[k]
        if left_ok and right_ok:
            out.append(starts[k])
    return np.asarray(out, dtype=int)


def count_npt(fidelity_curve, drop_threshold: float = 0.9,
              merge_steps: int = 2) -> int:
    """Number of fidelity drops: local minima below the threshold.

    Minima closer than merge_steps grid points are merged into one event,
    absorbing double-counting of a single broadened transition.
    """
    minima = local_minima_below(fidelity_curve, drop_threshold)
    if len(minima) == 0:
        return 0
    count = 1
    last = minima[0]
    for m in minima[1:]:
        if m - last > merge_steps:
            count += 1
        last = m
    return count


def detect_transitions(grid, curve, method: str, *, tol_scale: float = 1e-6,
                       jump_factor: float = 10.0, drop_threshold: float = 0.9,
                       merge_steps: int = 2) -> list[float]:
    """Ordered transition locations extracted from an observable curve.

    onset-of-max-im: curve is max|Im E|(h); returns the first and last grid
        values where the curve exceeds tol_scale * max(curve).  Empty when
        the curve never rises above tolerance.
    derivative-jump: curve is dE_g/dh; returns midpoints of steps where the
        jump |delta(dE_g/dh)| exceeds jump_factor times the median jump,
        merged over adjacent hits.
    fidelity-drop: curve is F_g(h); returns the minima positions below
        drop_threshold, merged as in count_npt.
    """
    grid = np.asarray(grid, dtype=float)
    f = np.asarray(curve, dtype=float)
    if len(grid) != len(f):
        raise InputError("grid and curve length mismatch")
    if method == "onset-of-max-im":
        scale = float(np.abs(f).max()) if len(f) else 0.0
        if scale == 0.0:
            return []
        above = np.flatnonzero(np.abs(f) > tol_scale * scale)
        if len(above) == 0:
            return []
        return [float(grid[above[0]]), float(grid[above[-1]])]
    if method == "derivative-jump":
        if len(f) < 3:
            raise InputError("derivative-jump needs >= 3 points")
        jumps = np.abs(np.diff(f))
        med = float(np.median(jumps))
        if med == 0.0:
            med = float(np.mean(jumps)) or 1.0
        hits = np.flatnonzero(jumps > jump_factor * med)
        if len(hits) == 0:
            return []
        # cluster adjacent hits, report the largest jump in each cluster
        out = []
        start = prev = hits[0]
        best = hits[0]
        for i in hits[1:]:
            if i - prev <= merge_steps:
                if jumps[i] > jumps[best]:
                    best = i
            else:
                out.append(0.5 * (grid[best] + grid[best + 1]))
                start = best = i
            prev = i
        out.append(0.5 * (grid[best] + grid[best + 1]))
        return [float(v) for v in out]
    if method == "fidelity-drop":
        minima = local_minima_below(f, drop_threshold)
        if len(minima) == 0:
            return []
        out = []
        group = [minima[0]]
        for m in minima[1:]:
            if m - group[-1] <= merge_steps:
                group.append(m)
            else:
                out.append(group[int(np.argmin(f[group]))])
                group = [m]
        out.append(group[int(np.argmin(f[group]))])
        return [float(grid[i]) for i in out]
    raise InputError(f"unknown transition method {method!r}")


@dataclass
class ObservableRecord:
    """One grid point's diagnostics; fields left None when not computed."""

    ipr_full: float | None = None
    ipr_edge: float | None = None
    tau: float | None = None
    beta_min_edge: float | None = None
    fidelity: float | None = None
    gap: float | None = None
    dEg_dh: float | None = None
    max_abs_im: float | None = None
    edge_density: float | None = None
    npt: int | None = None
    n_im_zeros: int | None = None

    def as_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}
