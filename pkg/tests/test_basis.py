import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from llns.basis import (
    FOUR_PI_SQ,
    AliasingError,
    Basis,
    ModeIndex,
    SpectralField,
    basis_from_csv,
    basis_to_csv,
    build_table,
    canonicalize,
    enumerate_modes,
    evaluate_physical,
    field_from_csv,
    field_to_csv,
    half_lattice,
    is_canonical,
    leray_matrix,
    leray_project,
    nonlinear_term,
    norm,
    polarization,
    read_field,
    sobolev_weights,
    trilinear_coeff,
    write_field,
)

from oracles import grid, mode_field, pseudo_spectral_nonlinear, quadrature_trilinear


def brute_force_count(m):
    """Count of real Stokes modes: 3 constants + 2 per nonzero k with |k| <= m."""
    r = range(-m, m + 1)
    nonzero = sum(1 for k in itertools.product(r, r, r) if 0 < sum(c * c for c in k) <= m * m)
    return 3 + 2 * nonzero


class TestEnumeration:
    @pytest.mark.parametrize("m", [0, 1, 2, 3, 4])
    def test_counts_match_lattice(self, m):
        assert len(Basis.galerkin(m)) == brute_force_count(m)

    def test_known_sizes(self):
        assert len(Basis.galerkin(1)) == 15
        assert len(Basis.galerkin(2)) == 67

    def test_constants_first(self, basis2):
        assert not any(md.is_wave for md in basis2.modes[:3])
        assert all(md.is_wave for md in basis2.modes[3:])

    def test_k100_block(self, basis2):
        ks = {basis2.modes[i].k for i in range(11, 15)}
        assert ks == {(1, 0, 0)}

    @pytest.mark.parametrize("m", [1, 2, 3])
    def test_prefix_property(self, m):
        """B_m is a prefix of B_{m+1}, so truncation is slicing."""
        small, big = Basis.galerkin(m), Basis.galerkin(m + 1)
        assert big.modes[: len(small)] == small.modes

    def test_eigenvalues_sorted(self, basis2):
        lam = basis2.eigenvalues
        assert np.all(np.diff(lam) >= 0)
        assert lam[0] == 0.0
        np.testing.assert_allclose(lam[11], FOUR_PI_SQ)

    def test_half_lattice_covers_each_pair_once(self):
        ks = half_lattice(3)
        full = {k for k in itertools.product(range(-3, 4), repeat=3) if 0 < sum(c * c for c in k) <= 9}
        covered = set(ks) | {tuple(-c for c in k) for k in ks}
        assert covered == full
        assert len(ks) * 2 == len(full)

    @pytest.mark.parametrize("k", [(1, 0, 0), (0, -1, 0), (-2, 1, 1), (0, 0, -1), (1, -1, 2)])
    def test_canonicalize(self, k):
        kc, sign = canonicalize(k)
        assert is_canonical(kc)
        assert tuple(sign * c for c in kc) == tuple(k)

    def test_bad_modes_rejected(self):
        with pytest.raises(ValueError):
            ModeIndex.wave((-1, 0, 0), 0, "cos")
        with pytest.raises(ValueError):
            ModeIndex.wave((1, 0, 0), 2, "cos")
        with pytest.raises(ValueError):
            ModeIndex.constant(3)


class TestPolarization:
    @pytest.mark.parametrize("k", half_lattice(3))
    def test_orthonormal_and_transverse(self, k):
        u1, u2 = polarization(k)
        kv = np.asarray(k, float)
        np.testing.assert_allclose([u1 @ u1, u2 @ u2, u1 @ u2], [1, 1, 0], atol=1e-14)
        np.testing.assert_allclose([u1 @ kv, u2 @ kv], 0, atol=1e-13)

    def test_leray(self):
        k = np.array([1.0, 2.0, -1.0])
        P = leray_matrix(k)
        np.testing.assert_allclose(P @ P, P, atol=1e-14)
        np.testing.assert_allclose(P @ k, 0, atol=1e-14)
        v = np.array([0.3, -1.0, 2.0])
        np.testing.assert_allclose(leray_project(k, v), P @ v)


class TestOrthonormality:
    def test_parseval_on_grid(self, rng):
        """Grid mean of |u|^2 equals the coefficient sum of squares."""
        b = Basis.galerkin(2)
        c = rng.standard_normal(len(b))
        u = evaluate_physical(SpectralField(b, c), 8)
        np.testing.assert_allclose(np.mean(np.sum(u**2, axis=-1)), c @ c, rtol=1e-12)

    def test_gram_matrix(self):
        b = Basis.galerkin(1)
        X = grid(6)
        fields = np.stack([mode_field(md, X)[0].reshape(3, -1) for md in b.modes])
        gram = np.einsum("aix,bix->ab", fields, fields) / fields.shape[-1]
        np.testing.assert_allclose(gram, np.eye(len(b)), atol=1e-13)

    def test_synthesis_matches_oracle(self, rng):
        b = Basis.galerkin(2)
        c = rng.standard_normal(len(b))
        got = evaluate_physical(SpectralField(b, c), 8)
        X = grid(8)
        want = sum(ci * mode_field(md, X)[0] for ci, md in zip(c, b.modes))
        np.testing.assert_allclose(got, np.moveaxis(want, 0, -1), atol=1e-12)

    def test_divergence_free(self, rng):
        b = Basis.galerkin(2)
        X = grid(8)
        div = sum(ci * np.trace(mode_field(md, X)[1]) for ci, md in zip(rng.standard_normal(len(b)), b.modes))
        assert np.abs(div).max() < 1e-11

    def test_aliasing_guard(self):
        b = Basis.galerkin(2)
        with pytest.raises(AliasingError):
            evaluate_physical(b.zeros(), 5)
        evaluate_physical(b.zeros(), 6)


class TestTrilinear:
    def test_scalar_matches_quadrature(self, rng):
        b = Basis.galerkin(2)
        for _ in range(60):
            z, a, c = (b.modes[i] for i in rng.integers(0, len(b), 3))
            assert trilinear_coeff(z, a, c) == pytest.approx(quadrature_trilinear(z, a, c), abs=1e-12)

    def test_table_matches_quadrature_exhaustive_b1(self):
        b = Basis.galerkin(1)
        D = build_table(b).dense()
        for z, a, c in itertools.product(range(len(b)), repeat=3):
            want = quadrature_trilinear(b.modes[z], b.modes[a], b.modes[c], n=8)
            assert abs(D[z, a, c] - want) < 1e-12

    def test_antisymmetry(self, table2):
        D = table2.dense()
        assert np.abs(D + D.transpose(2, 1, 0)).max() < 1e-12

    def test_constant_modes_advect_only(self, table2):
        D = table2.dense()
        # nothing is ever produced in or transported from a constant mode's second slot
        assert np.abs(D[:3]).max() == 0
        assert np.abs(D[:, :, :3]).max() == 0

    def test_pseudo_spectral(self, basis2, table2, rng):
        c = rng.standard_normal(len(basis2))
        want = pseudo_spectral_nonlinear(basis2, c, n=16)
        got = nonlinear_term(SpectralField(basis2, c), table2).coeffs
        np.testing.assert_allclose(got, want, atol=1e-10 * np.abs(want).max())

    def test_apply_batch_equals_loop(self, table2, rng):
        C = rng.standard_normal((7, 67))
        batch = table2.apply(C)
        for row, c in zip(batch, C):
            np.testing.assert_allclose(row, table2.apply(c), atol=1e-12)

    def test_bilinear_diagonal(self, table2, rng):
        c = rng.standard_normal(67)
        np.testing.assert_allclose(table2.bilinear(c, c), table2.apply(c), atol=1e-11)

    def test_cached(self, basis2, table2):
        assert build_table(basis2) is table2
        assert build_table(2) is table2

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(-10, 10), min_size=67, max_size=67))
    def test_energy_conservation(self, coeffs):
        table = build_table(2)
        c = np.asarray(coeffs)
        scale = max(np.linalg.norm(c), 1e-300)
        assert abs(table.apply(c) @ c) <= 1e-12 * scale**3 + 1e-300


class TestNorms:
    def test_kinds(self):
        b = Basis.galerkin(1)
        u = b.unit(11, 2.0)
        assert norm(u) == pytest.approx(2.0)
        assert norm(u, "V") == pytest.approx(2.0 * np.sqrt(FOUR_PI_SQ))
        assert norm(u, "H^r", 1) == pytest.approx(2.0 * np.sqrt(1 + FOUR_PI_SQ))
        assert norm(u, "H^-r", 1) == pytest.approx(2.0 / np.sqrt(1 + FOUR_PI_SQ))
        with pytest.raises(ValueError):
            norm(u, "L3")

    def test_sobolev_weights_inverse(self, basis2):
        np.testing.assert_allclose(sobolev_weights(basis2, 1.5) * sobolev_weights(basis2, -1.5), 1.0)

    def test_field_arithmetic(self, basis2, rng):
        a = SpectralField(basis2, rng.standard_normal(67))
        b = SpectralField(basis2, rng.standard_normal(67))
        np.testing.assert_allclose((a + b - b).coeffs, a.coeffs)
        np.testing.assert_allclose((-a * 2.0).coeffs, -2 * a.coeffs)
        with pytest.raises(ValueError):
            a + SpectralField.zeros(1)


class TestSerialization:
    def test_field_round_trip(self, basis2, rng):
        u = SpectralField(basis2, rng.standard_normal(67) / 3)
        back = field_from_csv(field_to_csv(u))
        assert back.basis == basis2
        assert np.array_equal(back.coeffs, u.coeffs)

    def test_basis_round_trip(self):
        b = Basis.galerkin(3)
        assert basis_from_csv(basis_to_csv(b)) == b

    def test_file(self, tmp_path, basis2):
        u = basis2.unit(20, 0.1)
        write_field(u, tmp_path / "u.csv")
        assert np.array_equal(read_field(tmp_path / "u.csv").coeffs, u.coeffs)

    def test_header(self, basis2):
        assert field_to_csv(basis2.zeros()).splitlines()[0] == "mode_id,kind,kx,ky,kz,pol,parity,coeff"
