import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cgostab.errors import DomainError, KindError, UnsupportedOrderError
from cgostab.lattice import (
    SHIFTED, STANDARD, LatticeIndex, SpectralField, band_indices, derivative,
    frequency_of, grid_points, laplacian, load_field, multiply, norm, save_field,
    synthesize, to_grid,
)

R = 2.0


def _random(rng, N, kind, band=None):
    return SpectralField.random(R, N, kind, rng, band=band)


def _points(rng, n, inset=0.0):
    return rng.uniform(-R + inset, R - inset, size=(n, 3))


class TestFrequency:
    def test_zero_standard(self):
        assert np.array_equal(frequency_of(LatticeIndex(0, 0, 0, STANDARD), R), [0, 0, 0])

    def test_zero_shifted(self):
        np.testing.assert_allclose(frequency_of(LatticeIndex(0, 0, 0, SHIFTED), R),
                                   [0, np.pi / 4, 0], atol=1e-15)

    def test_general_shifted(self):
        np.testing.assert_allclose(frequency_of(LatticeIndex(1, -1, 2, SHIFTED), R),
                                   [np.pi / 2, -np.pi / 4, np.pi], atol=1e-15)

    def test_shifted_band_avoids_zero_second_component(self):
        for n2 in band_indices(40):
            assert frequency_of(LatticeIndex(0, int(n2), 0, SHIFTED), R)[1] != 0

    def test_bad_kind(self):
        with pytest.raises(KindError):
            LatticeIndex(0, 0, 0, "hexagonal")


class TestSynthesize:
    def test_single_mode_at_origin(self):
        f = SpectralField.single_mode(R, 3, STANDARD, (1, -2, 0))
        assert synthesize(f, [[0, 0, 0]])[0] == pytest.approx((2 * R) ** -1.5, abs=1e-15)

    def test_zero_field(self, rng):
        f = SpectralField.zeros(R, 3, SHIFTED)
        assert np.all(synthesize(f, _points(rng, 7)) == 0)

    @pytest.mark.parametrize("kind", [STANDARD, SHIFTED])
    def test_term_by_term_oracle(self, rng, kind):
        N = 3
        c = np.zeros((2 * N + 1,) * 3, complex)
        modes = rng.integers(-N, N + 1, size=(5, 3))
        amps = rng.standard_normal(5) + 1j * rng.standard_normal(5)
        for n, a in zip(modes, amps):
            c[tuple(n + N)] += a
        f = SpectralField(R, N, kind, c)
        pts = _points(rng, 10)
        got = synthesize(f, pts)
        shift = 0.5 if kind == SHIFTED else 0.0
        mpmath.mp.dps = 30
        for p, g in zip(pts, got):
            acc = mpmath.mpc(0)
            for idx in np.argwhere(c != 0):
                n = idx - N
                phase = mpmath.pi / R * (n[0] * mpmath.mpf(p[0]) + (n[1] + shift) * mpmath.mpf(p[1])
                                         + n[2] * mpmath.mpf(p[2]))
                acc += mpmath.mpc(c[tuple(idx)]) * mpmath.expj(phase)
            acc *= mpmath.mpf(2 * R) ** mpmath.mpf(-1.5)
            assert abs(complex(acc) - g) < 1e-13

    def test_outside_cube(self):
        f = SpectralField.zeros(R, 2)
        with pytest.raises(DomainError):
            synthesize(f, [[0, 0, 2.5]])

    def test_grid_matches_pointwise(self, rng):
        f = _random(rng, 4, SHIFTED)
        M = 12
        x = grid_points(R, M)
        p = np.array([[x[3], x[5], x[7]]])
        periodic = synthesize(f, p)[0] * np.exp(-1j * np.pi * x[5] / (2 * R))
        assert to_grid(f, M)[3, 5, 7] == pytest.approx(periodic, abs=1e-12)


class TestMultiply:
    def test_identity_element(self, rng):
        one = SpectralField.single_mode(R, 0, STANDARD, (0, 0, 0), (2 * R) ** 1.5)
        b = _random(rng, 3, SHIFTED)
        out = multiply(one, b, band=3)
        np.testing.assert_allclose(out.coeffs, b.coeffs, atol=1e-13)

    def test_exponent_addition(self):
        a = SpectralField.single_mode(R, 2, STANDARD, (1, 0, -1))
        b = SpectralField.single_mode(R, 2, SHIFTED, (0, 2, 1))
        out = multiply(a, b)
        expect = np.zeros_like(out.coeffs)
        expect[1 + 4, 2 + 4, 0 + 4] = (2 * R) ** -1.5
        np.testing.assert_allclose(out.coeffs, expect, atol=1e-15)

    @pytest.mark.parametrize("kind", [STANDARD, SHIFTED])
    def test_pointwise_product(self, rng, kind):
        a = _random(rng, 3, STANDARD)
        b = _random(rng, 3, kind)
        prod = multiply(a, b, band=6)
        pts = _points(rng, 20)
        np.testing.assert_allclose(synthesize(prod, pts), synthesize(a, pts) * synthesize(b, pts),
                                   atol=1e-12, rtol=0)

    def test_two_shifted_rejected(self, rng):
        with pytest.raises(KindError):
            multiply(_random(rng, 2, SHIFTED), _random(rng, 2, SHIFTED))

    def test_mismatched_cube(self, rng):
        a = SpectralField.zeros(1.5, 2)
        with pytest.raises(KindError):
            multiply(a, _random(rng, 2, STANDARD))


class TestDerivative:
    def test_identity(self, rng):
        f = _random(rng, 3, SHIFTED)
        assert np.array_equal(derivative(f, (0, 0, 0)).coeffs, f.coeffs)

    def test_second_order_single_mode(self):
        f = SpectralField.single_mode(R, 3, SHIFTED, (2, 1, 0))
        iota = frequency_of(LatticeIndex(2, 1, 0, SHIFTED), R)
        d = derivative(f, (2, 0, 0))
        assert d.coeffs[5, 4, 3] == pytest.approx(-iota[0] ** 2)

    def test_order_above_four(self, rng):
        with pytest.raises(UnsupportedOrderError):
            derivative(_random(rng, 2, STANDARD), (3, 2, 0))

    def test_composition_exact(self, rng):
        f = _random(rng, 3, SHIFTED)
        a = derivative(derivative(f, (1, 0, 0)), (0, 1, 0)).coeffs
        b = derivative(f, (1, 1, 0)).coeffs
        assert np.array_equal(a, b)

    def test_laplacian_against_finite_differences(self, rng):
        f = _random(rng, 3, SHIFTED)
        pts = _points(rng, 6, inset=0.3)
        exact = synthesize(laplacian(f), pts)
        hs = np.array([0.04, 0.02, 0.01])
        errs = []
        for h in hs:
            acc = -6 * synthesize(f, pts)
            for j in range(3):
                e = np.zeros(3)
                e[j] = h
                acc = acc + synthesize(f, pts + e) + synthesize(f, pts - e)
            errs.append(np.max(np.abs(acc / h ** 2 - exact)))
        slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
        assert abs(slope - 2) < 0.2


class TestNorm:
    def test_single_mode_hs(self):
        f = SpectralField.single_mode(R, 3, SHIFTED, (1, 0, 2), 2 - 1j)
        iota = frequency_of(LatticeIndex(1, 0, 2, SHIFTED), R)
        s = 1.7
        assert norm(f, "Hs", s=s) == pytest.approx((1 + iota @ iota) ** (s / 2) * abs(2 - 1j))

    @pytest.mark.parametrize("which,kw", [("L2", {}), ("Hs", {"s": 2}), ("Wm1", {"m": 4}),
                                          ("Linf", {})])
    def test_zero_field(self, which, kw):
        assert norm(SpectralField.zeros(R, 3), which, **kw) == 0

    def test_parseval_against_cube_quadrature(self, rng):
        f = _random(rng, 4, SHIFTED)
        M = 16
        vals = to_grid(f, M)
        quad = np.sum(np.abs(vals) ** 2) * (2 * R / M) ** 3
        assert np.sqrt(quad) == pytest.approx(norm(f), rel=1e-12)

    def test_linf_is_lower_bound(self, rng):
        f = _random(rng, 3, STANDARD)
        dense = np.max(np.abs(synthesize(f, _points(rng, 2000))))
        assert norm(f, "Linf") >= 0.9 * dense

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2 ** 31), s1=st.floats(0, 4), ds=st.floats(0, 3))
    def test_hs_monotone_in_s(self, seed, s1, ds):
        f = SpectralField.random(R, 2, SHIFTED, np.random.default_rng(seed))
        assert norm(f, "Hs", s=s1) <= norm(f, "Hs", s=s1 + ds) * (1 + 1e-14)


class TestSnapshot:
    @pytest.mark.parametrize("kind", [STANDARD, SHIFTED])
    def test_round_trip(self, rng, tmp_path, kind):
        f = _random(rng, 3, kind)
        path = tmp_path / "field.bin"
        save_field(f, path)
        g = load_field(path)
        assert (g.R, g.N, g.kind) == (f.R, f.N, f.kind)
        assert np.array_equal(g.coeffs, f.coeffs)

    def test_rejects_foreign_file(self, tmp_path):
        p = tmp_path / "junk.bin"
        p.write_bytes(b"not a field")
        with pytest.raises(ValueError):
            load_field(p)


def test_resize_round_trip(rng):
    f = _random(rng, 3, SHIFTED)
    assert np.array_equal(f.resized(6).resized(3).coeffs, f.coeffs)


def test_fields_are_immutable(rng):
    f = _random(rng, 2, STANDARD)
    with pytest.raises(ValueError):
        f.coeffs[0, 0, 0] = 1
