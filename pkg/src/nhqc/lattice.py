"""Hamiltonian builders for the quasicrystal-boundary Haldane problem.

Every model is constructed as an explicit dense complex matrix together with a
LatticeMap describing the site indexing.  Geometry conventions used throughout:

* honeycomb cylinder: periodic along x (L_x cells), open along y (L_y cell
  rows), zigzag edges.  Cell (x, y) holds an A site and a B site; the flat
  index is ``2*(y*L_x + x) + s`` with s = 0 for A, 1 for B.
* the top boundary row is the B sublattice of cell row L_y - 1; those L_x
  sites are the outermost atoms of the zigzag edge and carry the quasiperiodic
  potential.
* the topmost zigzag chain (A and B of cell row L_y - 1, ordered
  A0 B0 A1 B1 ...) is the support used for impurity placement; consecutive
  chain positions are nearest-neighbor bonded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class DimensionError(ValueError):
    """Matrix, map, or profile sizes do not agree."""


class GeometryError(ValueError):
    """Requested geometry is outside the supported range."""


class PlacementError(ValueError):
    """Impurity placement is off the designated boundary."""


_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def fibonacci_approximant(q: int) -> tuple[int, int]:
    """Return (p, q) with p/q the rational approximant of the inverse golden ratio.

    p is the integer nearest q*(sqrt(5)-1)/2 that is coprime with q, so the
    potential is commensurate with period exactly q.  For Fibonacci q this
    reproduces the consecutive-Fibonacci pairing (e.g. q=55 -> p=34), since
    consecutive Fibonacci numbers are coprime.
    """
    if q < 2:
        raise GeometryError(f"approximant needs q >= 2, got {q}")
    target = q * _GOLDEN
    best = None
    for p in range(1, q):
        if math.gcd(p, q) != 1:
            continue
        if best is None or abs(p - target) < abs(best - target):
            best = p
    if best is None:
        raise GeometryError(f"no coprime approximant below q={q}")
    return best, q


@dataclass
class PotentialProfile:
    """Quasiperiodic boundary potential V_n = V*cos(2*pi*alpha*n + i*h).

    The complex cosine is evaluated through its hyperbolic expansion

        V_n = V * (cos(2*pi*alpha*n)*cosh(h) - i*sin(2*pi*alpha*n)*sinh(h))

    which is exactly equivalent and reproducible across platforms.  alpha is
    stored as the rational pair (alpha_p, alpha_q) so the profile is
    commensurate on a ring of alpha_q cells.
    """

    V: float
    h: float
    alpha_p: int
    alpha_q: int
    length: int
    values: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.length < 1:
            raise DimensionError(f"profile length must be >= 1, got {self.length}")
        if self.alpha_q < 1 or not (0 <= self.alpha_p <= self.alpha_q):
            raise GeometryError(f"bad approximant {self.alpha_p}/{self.alpha_q}")
        n = np.arange(self.length)
        theta = 2.0 * np.pi * self.alpha * n
        self.values = self.V * (
            np.cos(theta) * np.cosh(self.h) - 1j * np.sin(theta) * np.sinh(self.h)
        )

    @property
    def alpha(self) -> float:
        return self.alpha_p / self.alpha_q

    @classmethod
    def golden(cls, V: float, h: float, length: int) -> "PotentialProfile":
        """Profile with the coprime golden-ratio approximant for q = length."""
        p, q = fibonacci_approximant(length)
        return cls(V=V, h=h, alpha_p=p, alpha_q=q, length=length)


@dataclass(frozen=True)
class LatticeMap:
    """Bijection between flat matrix indices and (x, y, sublattice) sites."""

    kind: str  # chain | two-chain | honeycomb-cylinder | four-site
    L_x: int
    L_y: int = 1

    _KINDS = ("chain", "two-chain", "honeycomb-cylinder", "four-site")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise GeometryError(f"unknown lattice kind {self.kind!r}")
        if self.L_x < 1 or self.L_y < 1:
            raise GeometryError("lattice dimensions must be positive")

    @property
    def n_sites(self) -> int:
        if self.kind == "chain":
            return self.L_x
        if self.kind == "two-chain":
            return 2 * self.L_x
        if self.kind == "four-site":
            return 4
        return 2 * self.L_x * self.L_y

    def index(self, x: int, y: int, s: int) -> int:
        """Flat index of cell (x, y), sublattice s (0 = A, 1 = B); x wraps."""
        x = x % self.L_x
        if not 0 <= y < self.L_y:
            raise GeometryError(f"row {y} outside [0, {self.L_y})")
        if self.kind == "honeycomb-cylinder":
            return 2 * (y * self.L_x + x) + s
        if self.kind == "two-chain":
            return s * self.L_x + x
        if s != 0:
            raise GeometryError(f"kind {self.kind} has a single sublattice")
        return x

    def site(self, i: int) -> tuple[int, int, int]:
        """Inverse of index: (x, y, s) for flat index i."""
        if not 0 <= i < self.n_sites:
            raise GeometryError(f"index {i} outside [0, {self.n_sites})")
        if self.kind == "honeycomb-cylinder":
            s = i % 2
            cell = i // 2
            return cell % self.L_x, cell // self.L_x, s
        if self.kind == "two-chain":
            return i % self.L_x, 0, i // self.L_x
        return i, 0, 0

    def boundary_sites(self, rows: int = 1) -> np.ndarray:
        """Flat indices of the top boundary, one site row per `rows`.

        For the cylinder, rows=1 is the outermost B row (L_x sites, the
        support of the boundary potential); rows=2 adds the A row beneath it.
        Chain kinds are pure boundary models, so all profile-carrying sites
        are returned.
        """
        if self.kind == "chain":
            return np.arange(self.L_x)
        if self.kind == "two-chain":
            return np.arange(self.L_x)  # chain 1 carries the potential
        if self.kind == "four-site":
            return np.arange(4)
        if not 1 <= rows <= 2 * self.L_y:
            raise GeometryError(f"rows {rows} outside [1, {2 * self.L_y}]")
        out = []
        # site rows from the top: B of cell row L_y-1 is outermost, then A
        for r in range(rows):
            y = self.L_y - 1 - r // 2
            s = 1 - r % 2
            out.append(np.array([self.index(x, y, s) for x in range(self.L_x)]))
        return np.concatenate(out)

    def boundary_chain(self) -> np.ndarray:
        """Top zigzag chain in bond order: A0, B0, A1, B1, ... of the top cell row.

        Consecutive entries are t1-bonded, so distance along this array is
        graph distance along the edge.  Used for impurity placement.
        """
        if self.kind != "honeycomb-cylinder":
            return self.boundary_sites()
        y = self.L_y - 1
        out = np.empty(2 * self.L_x, dtype=int)
        for x in range(self.L_x):
            out[2 * x] = self.index(x, y, 0)
            out[2 * x + 1] = self.index(x, y, 1)
        return out


@dataclass
class OperatorMatrix:
    """Dense complex Hamiltonian plus its lattice map and builder metadata."""

    matrix: np.ndarray
    lattice: LatticeMap
    params: dict

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def copy_with(self, extra: dict) -> "OperatorMatrix":
        merged = dict(self.params)
        merged.update(extra)
        return OperatorMatrix(self.matrix.copy(), self.lattice, merged)


_METADATA_KEYS = (
    "model", "L_x", "L_y", "t1", "t2", "phi", "V", "h",
    "alpha_p", "alpha_q", "gamma", "lambda", "boundary_rows", "impurity",
)


def metadata_block(params: dict) -> dict:
    """Builder parameters in the fixed serialization schema (missing -> None)."""
    block = {k: params.get(k) for k in _METADATA_KEYS}
    for k, v in params.items():
        if k not in block:
            block[k] = v
    return block


def build_aah_chain(L: int, t: float, profile: PotentialProfile,
                    boundary: str = "periodic") -> OperatorMatrix:
    """1D chain with hopping t and the quasiperiodic profile on the diagonal."""
    if L < 2:
        raise GeometryError(f"chain needs L >= 2, got {L}")
    if profile.length != L:
        raise DimensionError(f"profile length {profile.length} != L {L}")
    if boundary not in ("periodic", "open"):
        raise GeometryError(f"unknown boundary {boundary!r}")
    H = np.zeros((L, L), dtype=complex)
    np.fill_diagonal(H, profile.values)
    for n in range(L - 1):
        H[n, n + 1] = t
        H[n + 1, n] = t
    if boundary == "periodic":
        H[0, L - 1] += t
        H[L - 1, 0] += t
    params = {"model": "aah-chain", "L_x": L, "t1": t, "V": profile.V,
              "h": profile.h, "alpha_p": profile.alpha_p,
              "alpha_q": profile.alpha_q, "boundary": boundary}
    return OperatorMatrix(H, LatticeMap("chain", L), params)


def build_two_chain(L: int, t: float, lam: float,
                    profile: PotentialProfile) -> OperatorMatrix:
    """Two coupled periodic chains: chain 1 quasiperiodic, chain 2 free.

    The rung coupling lam acts on odd m only, which is what survives the
    boundary projection of the cylinder onto its outermost two site rows.
    """
    if L < 2:
        raise GeometryError(f"two-chain needs L >= 2, got {L}")
    if profile.length != L:
        raise DimensionError(f"profile length {profile.length} != L {L}")
    N = 2 * L
    H = np.zeros((N, N), dtype=complex)
    for m in range(L):
        H[m, m] = profile.values[m]
        nxt = (m + 1) % L
        for off in (0, L):  # same hopping on both chains
            H[off + m, off + nxt] += t
            H[off + nxt, off + m] += t
        if m % 2 == 1:
            H[m, L + m] = lam
            H[L + m, m] = lam
    params = {"model": "two-chain", "L_x": L, "t1": t, "lambda": lam,
              "V": profile.V, "h": profile.h, "alpha_p": profile.alpha_p,
              "alpha_q": profile.alpha_q}
    return OperatorMatrix(H, LatticeMap("two-chain", L), params)


def build_haldane_cylinder(L_x: int, L_y: int, t1: float, t2: float,
                           phi: float) -> OperatorMatrix:
    """Haldane model on a cylinder with zigzag edges.

    Periodic along x, open along y.  Nearest-neighbor bonds carry t1.
    Next-nearest-neighbor bonds carry t2*exp(+/- i*phi) with the positive
    phase assigned to hops that circulate clockwise inside their hexagon:
    on sublattice A these are the displacements (+1, 0), (0, -1), (-1, +1)
    in cell coordinates, and on sublattice B the same displacements carry
    the opposite phase.

    Args:
        L_x: number of cells around the cylinder (periodic direction).
        L_y: number of cell rows across (open direction).
        t1: nearest-neighbor hopping.
        t2: next-nearest-neighbor hopping magnitude.
        phi: chiral phase of the NNN hopping.

    Returns:
        OperatorMatrix of dimension 2*L_x*L_y, Hermitian by construction.
    """
    if L_x < 2 or L_y < 2:
        raise GeometryError(
            f"cylinder needs L_x, L_y >= 2, got ({L_x}, {L_y}); "
            "use the chain builders for 1D geometries")
    lat = LatticeMap("honeycomb-cylinder", L_x, L_y)
    N = lat.n_sites
    H = np.zeros((N, N), dtype=complex)
    pos_phase = t2 * np.exp(1j * phi)
    nnn_steps = ((1, 0), (0, -1), (-1, 1))  # clockwise set for sublattice A
    for y in range(L_y):
        for x in range(L_x):
            a = lat.index(x, y, 0)
            b = lat.index(x, y, 1)
            # NN: A bonds to B in-cell, to B one cell left, to B one row down
            H[a, b] += t1
            H[b, a] += t1
            bl = lat.index(x - 1, y, 1)
            H[a, bl] += t1
            H[bl, a] += t1
            if y > 0:
                bd = lat.index(x, y - 1, 1)
                H[a, bd] += t1
                H[bd, a] += t1
            for dx, dy in nnn_steps:
                yn = y + dy
                if not 0 <= yn < L_y:
                    continue
                a2 = lat.index(x + dx, yn, 0)
                H[a2, a] += pos_phase
                H[a, a2] += np.conj(pos_phase)
                b2 = lat.index(x + dx, yn, 1)
                H[b2, b] += np.conj(pos_phase)
                H[b, b2] += pos_phase
    params = {"model": "haldane-cylinder", "L_x": L_x, "L_y": L_y,
              "t1": t1, "t2": t2, "phi": phi}
    return OperatorMatrix(H, lat, params)


def add_boundary_potential(H: OperatorMatrix, lattice: LatticeMap,
                           profile: PotentialProfile,
                           rows: int = 1) -> OperatorMatrix:
    """Add the quasiperiodic potential to the top boundary diagonal.

    values[n] goes on the outermost site of cell n (rows=1, the default).
    rows=2 applies the same per-cell value to the two top site rows, an
    option kept for sensitivity checks.
    """
    if lattice is not H.lattice and lattice != H.lattice:
        raise DimensionError("lattice map does not match the operator")
    if profile.length != lattice.L_x:
        raise DimensionError(
            f"profile length {profile.length} != L_x {lattice.L_x}")
    if rows not in (1, 2):
        raise GeometryError(f"rows must be 1 or 2, got {rows}")
    out = H.copy_with({"V": profile.V, "h": profile.h,
                       "alpha_p": profile.alpha_p, "alpha_q": profile.alpha_q,
                       "boundary_rows": rows})
    sites = lattice.boundary_sites(rows)
    for r in range(rows):
        row_sites = sites[r * lattice.L_x:(r + 1) * lattice.L_x]
        out.matrix[row_sites, row_sites] += profile.values
    return out


@dataclass(frozen=True)
class ImpuritySpec:
    """Two imaginary impurities on the top zigzag chain.

    anchor is a position along LatticeMap.boundary_chain(); the second
    impurity sits `separation` chain steps further (1 = adjacent bonded
    sites, 2 = next-nearest along the edge).  Strengths are i*gamma and
    i*gamma/2.
    """

    anchor: int
    separation: int
    gamma: float

    def __post_init__(self):
        if self.separation not in (1, 2):
            raise PlacementError(
                f"separation must be 1 or 2, got {self.separation}")


def default_impurity_anchor(lattice: LatticeMap) -> int:
    """Anchor at the A site of the mid cell, recorded in output metadata."""
    return 2 * (lattice.L_x // 2)


def add_impurities(H: OperatorMatrix, lattice: LatticeMap,
                   spec: ImpuritySpec) -> OperatorMatrix:
    """Add i*gamma and i*gamma/2 to the two designated boundary diagonals."""
    if lattice != H.lattice:
        raise DimensionError("lattice map does not match the operator")
    chain = lattice.boundary_chain()
    if not 0 <= spec.anchor < len(chain):
        raise PlacementError(
            f"anchor {spec.anchor} outside the boundary chain "
            f"[0, {len(chain)})")
    s1 = chain[spec.anchor]
    s2 = chain[(spec.anchor + spec.separation) % len(chain)]
    out = H.copy_with({"gamma": spec.gamma,
                       "impurity": {"anchor": spec.anchor,
                                    "separation": spec.separation,
                                    "weights": [1.0, 0.5]}})
    out.matrix[s1, s1] += 1j * spec.gamma
    out.matrix[s2, s2] += 1j * spec.gamma / 2.0
    return out


def add_domain_wall(H: OperatorMatrix, lattice: LatticeMap,
                    gamma: float) -> OperatorMatrix:
    """Split the boundary row into balanced gain (+i*gamma) and loss halves.

    Gain on cells x < L_x/2, loss on x >= L_x/2.  Hopping is left intact;
    the wall is a potential discontinuity only.  L_x must be even so the
    added imaginary parts cancel exactly.
    """
    if gamma < 0:
        raise GeometryError(f"gamma must be >= 0, got {gamma}")
    if lattice != H.lattice:
        raise DimensionError("lattice map does not match the operator")
    if lattice.L_x % 2:
        raise GeometryError(
            f"domain wall needs even L_x for a balanced split, got {lattice.L_x}")
    out = H.copy_with({"gamma": gamma, "domain_wall": True})
    sites = lattice.boundary_sites(1)
    half = lattice.L_x // 2
    out.matrix[sites[:half], sites[:half]] += 1j * gamma
    out.matrix[sites[half:], sites[half:]] += -1j * gamma
    return out


def build_four_site(kind: str, t: float, gamma: float) -> OperatorMatrix:
    """Explicit 4-site open chains with two imaginary on-site terms.

    kind='non-adjacent' places i*gamma on sites 1 and 3; kind='adjacent'
    on sites 1 and 2 (1-based).  These are the minimal models for the
    edge-impurity transitions.
    """
    if t <= 0:
        raise GeometryError(f"t must be > 0, got {t}")
    H = np.zeros((4, 4), dtype=complex)
    for n in range(3):
        H[n, n + 1] = t
        H[n + 1, n] = t
    if kind == "non-adjacent":
        H[0, 0] = 1j * gamma
        H[2, 2] = 1j * gamma
    elif kind == "adjacent":
        H[0, 0] = 1j * gamma
        H[1, 1] = 1j * gamma
    else:
        raise GeometryError(f"kind must be adjacent or non-adjacent, got {kind!r}")
    params = {"model": f"four-site-{kind}", "L_x": 4, "t1": t, "gamma": gamma}
    return OperatorMatrix(H, LatticeMap("four-site", 4), params)
