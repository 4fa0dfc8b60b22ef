"""Builders: geometry, conventions, validators."""

import math

import numpy as np
import pytest

from nhqc.lattice import (
    DimensionError,
    GeometryError,
    ImpuritySpec,
    LatticeMap,
    PlacementError,
    PotentialProfile,
    add_boundary_potential,
    add_domain_wall,
    add_impurities,
    build_aah_chain,
    build_four_site,
    build_haldane_cylinder,
    build_two_chain,
    default_impurity_anchor,
    fibonacci_approximant,
    metadata_block,
)

import oracles

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


# ---------------------------------------------------------------------------
# approximant and profile


@pytest.mark.parametrize("q,p", [(5, 3), (8, 5), (13, 8), (21, 13), (55, 34),
                                 (233, 144), (610, 377)])
def test_fibonacci_approximant_consecutive_pairs(q, p):
    assert fibonacci_approximant(q) == (p, q)


def test_fibonacci_approximant_non_fibonacci_sizes():
    # nearest coprime numerator to q*0.618...
    assert fibonacci_approximant(20) == (13, 20)
    assert fibonacci_approximant(10) == (7, 10)
    p, q = fibonacci_approximant(100)
    assert math.gcd(p, q) == 1
    assert abs(p / q - GOLDEN) < 0.03


def test_fibonacci_approximant_rejects_tiny():
    with pytest.raises(GeometryError):
        fibonacci_approximant(1)


def test_profile_hyperbolic_expansion():
    prof = PotentialProfile(V=1.3, h=0.7, alpha_p=13, alpha_q=20, length=20)
    n = np.arange(20)
    theta = 2 * np.pi * (13 / 20) * n
    direct = 1.3 * np.cos(theta + 1j * 0.7)  # complex cosine, same thing
    np.testing.assert_allclose(prof.values, direct, atol=1e-12)
    # imaginary part carries the minus sign from cos(a + ib) expansion
    np.testing.assert_allclose(prof.values.imag,
                               -1.3 * np.sinh(0.7) * np.sin(theta), atol=1e-12)


def test_profile_period_commensurate():
    prof = PotentialProfile(V=1.0, h=0.4, alpha_p=3, alpha_q=5, length=15)
    np.testing.assert_allclose(prof.values[:5], prof.values[5:10], atol=1e-12)


def test_profile_h_zero_real():
    prof = PotentialProfile.golden(V=2.0, h=0.0, length=21)
    assert np.abs(prof.values.imag).max() == 0.0


def test_profile_validators():
    with pytest.raises(GeometryError):
        PotentialProfile(V=1.0, h=0.1, alpha_p=11, alpha_q=8, length=8)
    with pytest.raises(GeometryError):
        PotentialProfile(V=1.0, h=0.1, alpha_p=-1, alpha_q=8, length=8)
    with pytest.raises(DimensionError):
        PotentialProfile(V=1.0, h=0.1, alpha_p=3, alpha_q=5, length=0)


# ---------------------------------------------------------------------------
# lattice map


@pytest.mark.parametrize("kind,L_x,L_y", [("chain", 7, 1), ("two-chain", 6, 1),
                                          ("honeycomb-cylinder", 5, 4),
                                          ("four-site", 4, 1)])
def test_map_round_trip(kind, L_x, L_y):
    lat = LatticeMap(kind, L_x, L_y)
    for i in range(lat.n_sites):
        x, y, s = lat.site(i)
        assert lat.index(x, y, s) == i


def test_map_x_wraps_y_does_not():
    lat = LatticeMap("honeycomb-cylinder", 5, 4)
    assert lat.index(5, 0, 0) == lat.index(0, 0, 0)
    assert lat.index(-1, 2, 1) == lat.index(4, 2, 1)
    with pytest.raises(GeometryError):
        lat.index(0, 4, 0)


def test_boundary_sites_outermost_row_is_B():
    lat = LatticeMap("honeycomb-cylinder", 4, 3)
    top = lat.boundary_sites(1)
    assert len(top) == 4
    for i in top:
        x, y, s = lat.site(int(i))
        assert (y, s) == (2, 1)
    two = lat.boundary_sites(2)
    assert len(two) == 8
    for i in two[4:]:
        x, y, s = lat.site(int(i))
        assert (y, s) == (2, 0)


def test_boundary_chain_alternates_and_is_bonded():
    lat = LatticeMap("honeycomb-cylinder", 4, 3)
    chain = lat.boundary_chain()
    assert len(chain) == 8
    subl = [lat.site(int(i))[2] for i in chain]
    assert subl == [0, 1] * 4
    H = build_haldane_cylinder(4, 3, 1.0, 0.0, 0.0).matrix
    for a, b in zip(chain[:-1], chain[1:]):
        assert H[a, b] != 0  # consecutive chain entries are NN-coupled


# ---------------------------------------------------------------------------
# builders against independent references


def test_free_ring_spectrum():
    prof = PotentialProfile(V=0.0, h=0.0, alpha_p=1, alpha_q=2, length=4)
    H = build_aah_chain(4, 1.0, prof, boundary="periodic")
    w = np.linalg.eigvalsh(H.matrix)
    np.testing.assert_allclose(np.sort(w), [-2.0, 0.0, 0.0, 2.0], atol=1e-12)


def test_open_chain_spectrum():
    prof = PotentialProfile(V=0.0, h=0.0, alpha_p=1, alpha_q=2, length=3)
    H = build_aah_chain(3, 1.0, prof, boundary="open")
    w = np.linalg.eigvalsh(H.matrix)
    np.testing.assert_allclose(np.sort(w), [-math.sqrt(2), 0.0, math.sqrt(2)],
                               atol=1e-12)


def test_haldane_cylinder_matches_positional_enumeration():
    """Index arithmetic against a rebuild from explicit site coordinates."""
    H = build_haldane_cylinder(3, 2, 1.0, 0.2, np.pi / 2).matrix
    R = oracles.haldane_reference_3x2(1.0, 0.2, np.pi / 2)
    assert np.abs(H - R).max() == 0.0


def test_haldane_cylinder_other_parameters():
    H = build_haldane_cylinder(3, 2, 0.7, 0.31, 1.234).matrix
    R = oracles.haldane_reference_3x2(0.7, 0.31, 1.234)
    assert np.abs(H - R).max() < 1e-15


def test_haldane_hermitian_and_translation_invariant():
    H = build_haldane_cylinder(6, 4, 1.0, 0.2, np.pi / 2)
    M = H.matrix
    assert np.abs(M - M.conj().T).max() < 1e-12
    # shifting x by one cell permutes the matrix onto itself
    lat = H.lattice
    perm = np.array([lat.index(x + 1, y, s)
                     for i in range(lat.n_sites)
                     for x, y, s in [lat.site(i)]])
    assert np.abs(M[np.ix_(perm, perm)] - M).max() < 1e-12


def test_haldane_bulk_gap_edges():
    # t1=1, t2=0.2, phi=pi/2: bulk bands end near +-1.006 and -2.992; the
    # chiral edge branch spans the gap, so bulk states are isolated by
    # excluding anything living on the outermost two cell rows of either edge
    H = build_haldane_cylinder(24, 16, 1.0, 0.2, np.pi / 2)
    lat = H.lattice
    w, v = np.linalg.eigh(H.matrix)
    edge_idx = np.array([lat.index(x, y, s)
                         for y in (0, 1, lat.L_y - 2, lat.L_y - 1)
                         for x in range(lat.L_x) for s in (0, 1)])
    edge_weight = (np.abs(v[edge_idx, :]) ** 2).sum(axis=0)
    bulk = w[edge_weight < 0.3]
    assert bulk.min() == pytest.approx(-2.9924, abs=5e-3)
    assert bulk[bulk < 0].max() == pytest.approx(-1.0063, abs=5e-3)
    assert bulk[bulk > 0].min() == pytest.approx(1.0063, abs=5e-3)


def test_two_chain_structure():
    prof = PotentialProfile(V=1.1, h=0.3, alpha_p=3, alpha_q=5, length=5)
    H = build_two_chain(5, 1.0, 0.7, prof)
    M = H.matrix
    np.testing.assert_allclose(np.diag(M)[:5], prof.values, atol=1e-15)
    assert np.abs(np.diag(M)[5:]).max() == 0.0  # second chain is free
    # rungs on odd sites only
    for m in range(5):
        expected = 0.7 if m % 2 == 1 else 0.0
        assert M[m, 5 + m] == pytest.approx(expected)
    # both chains closed into rings
    assert M[0, 4] == pytest.approx(1.0)
    assert M[5, 9] == pytest.approx(1.0)


def test_two_chain_char_poly_oracle():
    prof = PotentialProfile(V=0.9, h=0.6, alpha_p=2, alpha_q=4, length=4)
    H = build_two_chain(4, 1.0, 0.5, prof).matrix
    w = np.linalg.eigvals(H)
    ref = oracles.eig_reference(H)
    assert oracles.match_sets(w, ref) < 1e-9


# ---------------------------------------------------------------------------
# boundary potential, impurities, domain wall


def test_boundary_potential_placement():
    base = build_haldane_cylinder(5, 3, 1.0, 0.2, np.pi / 2)
    prof = PotentialProfile.golden(V=1.0, h=0.8, length=5)
    H = add_boundary_potential(base, base.lattice, prof, rows=1)
    diff = np.diag(H.matrix - base.matrix)
    sites = base.lattice.boundary_sites(1)
    np.testing.assert_allclose(diff[sites], prof.values, atol=1e-15)
    mask = np.ones(len(diff), dtype=bool)
    mask[sites] = False
    assert np.abs(diff[mask]).max() == 0.0
    # base untouched
    assert np.abs(np.diag(base.matrix)).max() == 0.0


def test_boundary_potential_two_rows():
    base = build_haldane_cylinder(5, 3, 1.0, 0.2, np.pi / 2)
    prof = PotentialProfile.golden(V=1.0, h=0.8, length=5)
    H = add_boundary_potential(base, base.lattice, prof, rows=2)
    diff = np.diag(H.matrix - base.matrix)
    sites = base.lattice.boundary_sites(2)
    np.testing.assert_allclose(diff[sites[:5]], prof.values, atol=1e-15)
    np.testing.assert_allclose(diff[sites[5:]], prof.values, atol=1e-15)


def test_boundary_potential_length_mismatch():
    base = build_haldane_cylinder(5, 3, 1.0, 0.2, np.pi / 2)
    prof = PotentialProfile.golden(V=1.0, h=0.8, length=6)
    with pytest.raises(DimensionError):
        add_boundary_potential(base, base.lattice, prof)


def test_impurities_positions_and_weights():
    base = build_haldane_cylinder(6, 4, 1.0, 0.2, np.pi / 2)
    lat = base.lattice
    anchor = default_impurity_anchor(lat)
    assert anchor == 6  # A site of cell x=3 on the top chain
    for sep in (1, 2):
        H = add_impurities(base, lat, ImpuritySpec(anchor, sep, 1.6))
        diff = np.diag(H.matrix - base.matrix)
        chain = lat.boundary_chain()
        assert diff[chain[anchor]] == pytest.approx(1.6j)
        assert diff[chain[anchor + sep]] == pytest.approx(0.8j)
        assert np.count_nonzero(diff) == 2
        assert np.trace(H.matrix - base.matrix) == pytest.approx(2.4j)


def test_impurities_bad_separation():
    base = build_haldane_cylinder(6, 4, 1.0, 0.2, np.pi / 2)
    with pytest.raises(PlacementError):
        ImpuritySpec(0, 3, 1.0)
    with pytest.raises(PlacementError):
        add_impurities(base, base.lattice, ImpuritySpec(99, 1, 1.0))


def test_domain_wall_balanced():
    base = build_haldane_cylinder(6, 4, 1.0, 0.2, np.pi / 2)
    H = add_domain_wall(base, base.lattice, 0.5)
    diff = np.diag(H.matrix - base.matrix)
    assert abs(np.trace(H.matrix) - np.trace(base.matrix)) < 1e-12
    sites = base.lattice.boundary_sites(1)
    np.testing.assert_allclose(diff[sites[:3]], 0.5j, atol=1e-15)
    np.testing.assert_allclose(diff[sites[3:]], -0.5j, atol=1e-15)


def test_domain_wall_needs_even_circumference():
    base = build_haldane_cylinder(5, 3, 1.0, 0.2, np.pi / 2)
    with pytest.raises(GeometryError):
        add_domain_wall(base, base.lattice, 0.5)


# ---------------------------------------------------------------------------
# four-site models


def test_four_site_matrices():
    Ha = build_four_site("non-adjacent", 1.0, 0.8).matrix
    Hb = build_four_site("adjacent", 1.0, 0.8).matrix
    hop = np.diag([1.0, 1.0, 1.0], 1) + np.diag([1.0, 1.0, 1.0], -1)
    np.testing.assert_allclose(Ha, hop + np.diag([0.8j, 0, 0.8j, 0]),
                               atol=1e-15)
    np.testing.assert_allclose(Hb, hop + np.diag([0.8j, 0.8j, 0, 0]),
                               atol=1e-15)


def test_four_site_gamma_zero_spectrum():
    # open 4-chain: 2t cos(m pi / 5), the golden-ratio pair +-phi, +-1/phi
    phi_g = (1 + math.sqrt(5)) / 2
    for kind in ("non-adjacent", "adjacent"):
        w = np.sort(np.linalg.eigvalsh(build_four_site(kind, 1.0, 0.0).matrix))
        np.testing.assert_allclose(
            w, [-phi_g, -1 / phi_g, 1 / phi_g, phi_g], atol=1e-12)


def test_four_site_validators():
    with pytest.raises(GeometryError):
        build_four_site("diagonal", 1.0, 0.1)
    with pytest.raises(GeometryError):
        build_four_site("adjacent", 0.0, 0.1)


# ---------------------------------------------------------------------------
# Hermitian limits (h = 0, gamma = 0) across all builders


def _all_hermitian_limit_matrices():
    prof5 = PotentialProfile.golden(V=1.2, h=0.0, length=5)
    base = build_haldane_cylinder(5, 3, 1.0, 0.2, np.pi / 2)
    yield build_aah_chain(5, 1.0, prof5).matrix
    yield build_two_chain(5, 1.0, 0.8, prof5).matrix
    yield base.matrix
    yield add_boundary_potential(base, base.lattice, prof5).matrix
    yield add_impurities(base, base.lattice, ImpuritySpec(2, 1, 0.0)).matrix
    even = build_haldane_cylinder(6, 3, 1.0, 0.2, np.pi / 2)
    yield add_domain_wall(even, even.lattice, 0.0).matrix
    yield build_four_site("non-adjacent", 1.0, 0.0).matrix
    yield build_four_site("adjacent", 1.0, 0.0).matrix


def test_hermitian_limits():
    for M in _all_hermitian_limit_matrices():
        assert np.abs(M - M.conj().T).max() < 1e-12


def test_metadata_block_schema():
    H = build_haldane_cylinder(5, 3, 1.0, 0.2, np.pi / 2)
    block = metadata_block(H.params)
    assert block["model"] == "haldane-cylinder"
    assert block["L_x"] == 5
    assert block["V"] is None  # not set before the potential is added
