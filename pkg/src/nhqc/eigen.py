"""Dense non-Hermitian eigendecomposition with deterministic ordering.

The kernel is LAPACK's general dense solver (balance + Hessenberg + shifted
QR) through scipy.  Everything above it is contract: unit-norm right vectors
with a fixed phase gauge, residuals, a deterministic sort, state selection
rules, and nearest-neighbor continuation tracking across sweeps.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .lattice import OperatorMatrix


class ConvergenceError(RuntimeError):
    """QR iteration failed; carries the solver's reported index when known."""

    def __init__(self, message, failed_index=None):
        super().__init__(message)
        self.failed_index = failed_index


SORT_KEYS = ("by-real-part", "by-imag-part", "by-modulus")


@dataclass
class Spectrum:
    """Sorted eigensystem of one operator."""

    eigenvalues: np.ndarray
    right_vectors: np.ndarray  # column k belongs to eigenvalues[k]
    residuals: np.ndarray
    sort_key: str
    left_vectors: np.ndarray | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return len(self.eigenvalues)


def _sort_order(w: np.ndarray, sort_key: str) -> np.ndarray:
    if sort_key == "by-real-part":
        return np.lexsort((np.arange(len(w)), w.imag, w.real))
    if sort_key == "by-imag-part":
        return np.lexsort((np.arange(len(w)), w.real, w.imag))
    if sort_key == "by-modulus":
        return np.lexsort((np.arange(len(w)), w.imag, np.abs(w)))
    raise ValueError(f"unknown sort key {sort_key!r}")


def _fix_gauge(vectors: np.ndarray) -> np.ndarray:
    # unit norm, then rotate so the largest-magnitude component is real positive;
    # makes repeated decompositions and overlaps reproducible
    norms = np.linalg.norm(vectors, axis=0)
    norms[norms == 0] = 1.0
    vectors = vectors / norms
    lead = np.argmax(np.abs(vectors), axis=0)
    phases = vectors[lead, np.arange(vectors.shape[1])]
    mags = np.abs(phases)
    mags[mags == 0] = 1.0
    return vectors * np.conj(phases / mags)


def decompose(H: OperatorMatrix | np.ndarray, want_left: bool = False,
              sort_key: str = "by-real-part") -> Spectrum:
    """Full eigensystem, sorted, unit-normalized, with residuals.

    Deterministic: the kernel has no randomized initialization and the sort
    breaks ties by imaginary part then original index.
    """
    a = H.matrix if isinstance(H, OperatorMatrix) else np.asarray(H)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"need a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    a = a.astype(complex, copy=False)
    try:
        if want_left:
            w, vl, vr = scipy.linalg.eig(a, left=True, right=True)
        else:
            w, vr = scipy.linalg.eig(a)
            vl = None
    except scipy.linalg.LinAlgError as err:  # pragma: no cover - rare in LAPACK
        idx = None
        for tok in str(err).split():
            if tok.isdigit():
                idx = int(tok)
                break
        raise ConvergenceError(str(err), failed_index=idx) from err
    order = _sort_order(w, sort_key)
    w = w[order]
    vr = _fix_gauge(vr[:, order])
    if vl is not None:
        vl = _fix_gauge(vl[:, order])
    residuals = np.linalg.norm(a @ vr - vr * w[None, :], axis=0)
    return Spectrum(w, vr, residuals, sort_key, left_vectors=vl)


def decompose_hermitian(H: OperatorMatrix | np.ndarray) -> np.ndarray:
    """Reference Hermitian eigenvalues (dedicated symmetric solver)."""
    a = H.matrix if isinstance(H, OperatorMatrix) else np.asarray(H)
    return scipy.linalg.eigh(a, eigvals_only=True)


@dataclass(frozen=True)
class StateSelector:
    """Rule that picks one state out of a Spectrum.

    min-real is the ground-state convention for a non-Hermitian spectrum;
    in-gap-edge restricts to |Re E| < gap_edge with edge density above
    edge_threshold and takes the lowest real part among those.
    """

    rule: str = "min-real"
    gap_edge: float = 1.0
    edge_threshold: float = 0.5

    _RULES = ("min-real", "max-imag", "min-imag", "in-gap-edge",
              "edge-min-real")

    def __post_init__(self):
        if self.rule not in self._RULES:
            raise ValueError(f"unknown selector rule {self.rule!r}")


class SelectionError(ValueError):
    """No state satisfies the selector's candidate filter."""


def select_state(spectrum: Spectrum, selector: StateSelector,
                 edge_density: np.ndarray | None = None) -> int:
    """Index of the selected state; ties break by smaller Im, then index."""
    w = spectrum.eigenvalues
    if len(w) == 0:
        raise SelectionError("empty spectrum")
    if selector.rule in ("in-gap-edge", "edge-min-real"):
        if edge_density is None:
            raise SelectionError(f"{selector.rule} selection needs edge densities")
        mask = np.asarray(edge_density) > selector.edge_threshold
        if selector.rule == "in-gap-edge":
            mask &= np.abs(w.real) < selector.gap_edge
        candidates = np.flatnonzero(mask)
        if len(candidates) == 0:
            raise SelectionError(
                f"no candidate for rule {selector.rule} with edge density > "
                f"{selector.edge_threshold}")
        key = w.real[candidates]
    else:
        candidates = np.arange(len(w))
        if selector.rule == "min-real":
            key = w.real
        elif selector.rule == "max-imag":
            key = -w.imag
        else:  # min-imag
            key = w.imag
    order = np.lexsort((candidates, w.imag[candidates], key))
    return int(candidates[order[0]])


def first_excited(spectrum: Spectrum, selector: StateSelector,
                  edge_density: np.ndarray | None = None) -> int:
    """Next index after the selected state in the spectrum's sort order."""
    g = select_state(spectrum, selector, edge_density)
    if g + 1 >= spectrum.n:
        raise SelectionError("selected state is last in the ordering")
    return g + 1


def track_continuation(prev: Spectrum | np.ndarray,
                       next_: Spectrum | np.ndarray) -> tuple[np.ndarray, float]:
    """Greedy nearest-neighbor alignment of two spectra in the complex plane.

    Returns (perm, total_distance) with next eigenvalue perm[k] matched to
    prev eigenvalue k.  Greedy by globally smallest pair distance, which is
    stable across runs and adequate for sweep steps small next to level
    spacings.
    """
    wp = prev.eigenvalues if isinstance(prev, Spectrum) else np.asarray(prev)
    wn = next_.eigenvalues if isinstance(next_, Spectrum) else np.asarray(next_)
    if len(wp) != len(wn):
        raise ValueError(f"dimension mismatch {len(wp)} vs {len(wn)}")
    n = len(wp)
    dist = np.abs(wp[:, None] - wn[None, :])
    perm = np.full(n, -1, dtype=int)
    used_next = np.zeros(n, dtype=bool)
    used_prev = np.zeros(n, dtype=bool)
    total = 0.0
    for flat in np.argsort(dist, axis=None, kind="stable"):
        i, j = divmod(int(flat), n)
        if used_prev[i] or used_next[j]:
            continue
        perm[i] = j
        used_prev[i] = True
        used_next[j] = True
        total += dist[i, j]
        if used_prev.all():
            break
    return perm, float(total)


def spectrum_to_rows(spectrum: Spectrum,
                     edge_density: np.ndarray | None = None) -> list[dict]:
    """CSV-ready rows: index, re, im, residual, edge_density."""
    rows = []
    for k in range(spectrum.n):
        rows.append({
            "index": k,
            "re": float(spectrum.eigenvalues[k].real),
            "im": float(spectrum.eigenvalues[k].imag),
            "residual": float(spectrum.residuals[k]),
            "edge_density": float(edge_density[k]) if edge_density is not None else "",
        })
    return rows


def spectrum_to_json(spectrum: Spectrum) -> str:
    """Binary-free JSON for golden tests (eigenvalues and residuals only)."""
    payload = {
        "sort_key": spectrum.sort_key,
        "eigenvalues": [[float(z.real), float(z.imag)]
                        for z in spectrum.eigenvalues],
        "residuals": [float(r) for r in spectrum.residuals],
    }
    return json.dumps(payload, indent=1)
