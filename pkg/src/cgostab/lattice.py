"""Truncated Fourier series on the cube [-R, R]^3.

Two lattices are supported.  The *standard* lattice has frequencies
``(pi/R) * (n1, n2, n3)``; the *shifted* lattice adds a half step to the
second component, ``(pi/R) * (n1, n2 + 1/2, n3)``, so that no frequency has a
vanishing second coordinate.  A field is stored through its coefficients
``f_hat[n]`` with respect to the orthonormal basis

    e_iota(x) = (2R)^{-3/2} exp(i iota . x),

so that the squared L2(cube) norm is the plain sum of squared magnitudes.  A
shifted field equals ``exp(i pi x2 / (2R))`` times a 2R-periodic function whose
standard coefficients are the same numbers; transforms act on that periodic
factor and the phase is carried analytically.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from itertools import product

import numpy as np
import scipy.fft as sfft

from .errors import DomainError, KindError, UnsupportedOrderError

STANDARD = "standard"
SHIFTED = "shifted"
KINDS = (STANDARD, SHIFTED)

_fft_workers = 1


def set_fft_workers(n):
    """Number of threads used by every FFT in the package."""
    global _fft_workers
    _fft_workers = max(1, int(n))


def fft_workers():
    return _fft_workers


def _check_kind(kind):
    if kind not in KINDS:
        raise KindError(f"unknown lattice kind {kind!r}")
    return kind


def _shift(kind):
    return 0.5 if kind == SHIFTED else 0.0


@dataclass(frozen=True)
class LatticeIndex:
    n1: int
    n2: int
    n3: int
    kind: str = STANDARD

    def __post_init__(self):
        _check_kind(self.kind)


def frequency_of(idx, R):
    """Frequency vector of a lattice index on the cube of half width ``R``."""
    s = _shift(idx.kind)
    return (np.pi / R) * np.array([idx.n1, idx.n2 + s, idx.n3], dtype=float)


def axis_frequencies(N, R, kind):
    """The three 1-D frequency axes for band ``[-N, N]``."""
    n = np.arange(-N, N + 1, dtype=float)
    k = np.pi / R * n
    return k, np.pi / R * (n + _shift(kind)), k


def band_indices(N):
    return np.arange(-N, N + 1)


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Immutable truncated Fourier series on the cube ``[-R, R]^3``.

    Attributes
    ----------
    R : float
        Half width of the cube.
    N : int
        Bandwidth; coefficients are indexed by ``n in [-N, N]^3``.
    kind : str
        ``"standard"`` or ``"shifted"``.
    coeffs : ndarray, shape (2N+1, 2N+1, 2N+1)
        Coefficient ``f_hat[n]`` is stored at ``coeffs[n1+N, n2+N, n3+N]``.
    """

    R: float
    N: int
    kind: str
    coeffs: np.ndarray

    def __post_init__(self):
        _check_kind(self.kind)
        if self.R <= 0:
            raise KindError("cube half width must be positive")
        c = np.array(self.coeffs, dtype=np.complex128)
        if c.shape != (2 * self.N + 1,) * 3:
            raise KindError(f"coefficient array has shape {c.shape}, expected band N={self.N}")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "R", float(self.R))
        object.__setattr__(self, "N", int(self.N))

    # constructors -----------------------------------------------------
    @classmethod
    def zeros(cls, R, N, kind=STANDARD):
        return cls(R, N, kind, np.zeros((2 * N + 1,) * 3, complex))

    @classmethod
    def single_mode(cls, R, N, kind, n, amplitude=1.0):
        c = np.zeros((2 * N + 1,) * 3, complex)
        c[n[0] + N, n[1] + N, n[2] + N] = amplitude
        return cls(R, N, kind, c)

    @classmethod
    def random(cls, R, N, kind, rng, band=None, decay=0.0):
        """Gaussian random coefficients inside ``|n_j| <= band``.

        ``decay`` damps coefficients by ``(1 + |n|^2)^(-decay/2)``.
        """
        band = N if band is None else band
        c = np.zeros((2 * N + 1,) * 3, complex)
        m = 2 * band + 1
        block = rng.standard_normal((m,) * 3) + 1j * rng.standard_normal((m,) * 3)
        if decay:
            n = np.arange(-band, band + 1)
            n2 = n[:, None, None] ** 2 + n[None, :, None] ** 2 + n[None, None, :] ** 2
            block *= (1.0 + n2) ** (-decay / 2)
        sl = slice(N - band, N + band + 1)
        c[sl, sl, sl] = block
        return cls(R, N, kind, c)

    def with_coeffs(self, coeffs):
        return SpectralField(self.R, self.N, self.kind, coeffs)

    # helpers ------------------------------------------------------------
    def frequencies(self):
        """Broadcastable frequency arrays ``(k1, k2, k3)``."""
        k1, k2, k3 = axis_frequencies(self.N, self.R, self.kind)
        return k1[:, None, None], k2[None, :, None], k3[None, None, :]

    def resized(self, N):
        """Zero-pad or truncate to bandwidth ``N``."""
        c = np.zeros((2 * N + 1,) * 3, complex)
        m = min(N, self.N)
        src = slice(self.N - m, self.N + m + 1)
        dst = slice(N - m, N + m + 1)
        c[dst, dst, dst] = self.coeffs[src, src, src]
        return SpectralField(self.R, N, self.kind, c)

    def __add__(self, other):
        _same_space(self, other)
        return self.with_coeffs(self.coeffs + other.coeffs)

    def __sub__(self, other):
        _same_space(self, other)
        return self.with_coeffs(self.coeffs - other.coeffs)

    def __neg__(self):
        return self.with_coeffs(-self.coeffs)

    def scale(self, a):
        return self.with_coeffs(a * self.coeffs)

    def l2(self):
        return float(np.sqrt(np.sum(np.abs(self.coeffs) ** 2)))


def _same_space(a, b):
    if a.R != b.R or a.N != b.N or a.kind != b.kind:
        raise KindError("fields live on different lattices")


# ---------------------------------------------------------------------------
# grid transforms


def grid_points(R, M):
    """1-D periodic sample positions ``-R + 2R j / M``."""
    return -R + 2.0 * R * np.arange(M) / M


def _alternating(N):
    n = band_indices(N)
    s = np.where(n % 2 == 0, 1.0, -1.0)
    return s[:, None, None] * s[None, :, None] * s[None, None, :]


def _embed(coeffs, N, M):
    out = np.zeros(coeffs.shape[:-3] + (M, M, M), complex)
    idx = band_indices(N) % M
    out[..., idx[:, None, None], idx[None, :, None], idx[None, None, :]] = coeffs
    return out


def to_grid(f, M):
    """Values of the periodic factor of ``f`` on the ``M^3`` sample grid.

    For a standard field this is the field itself; for a shifted field the
    true values are ``exp(i pi x2 / (2R))`` times the returned array.
    """
    return coeffs_to_grid(f.coeffs, f.N, f.R, M)


def coeffs_to_grid(coeffs, N, R, M):
    if M < 2 * N + 1:
        raise KindError("grid too coarse for the field band")
    c = coeffs * _alternating(N)
    vals = sfft.ifftn(_embed(c, N, M), axes=(-3, -2, -1), workers=_fft_workers)
    return vals * (M ** 3 * (2 * R) ** -1.5)


def grid_to_coeffs(values, N, R):
    """Band-``N`` coefficients of periodic samples on an ``M^3`` grid."""
    M = values.shape[-1]
    if M < 2 * N + 1:
        raise KindError("grid too coarse for the requested band")
    spec = sfft.fftn(values, axes=(-3, -2, -1), workers=_fft_workers)
    idx = band_indices(N) % M
    c = spec[..., idx[:, None, None], idx[None, :, None], idx[None, None, :]]
    return c * _alternating(N) * ((2 * R) ** 1.5 / M ** 3)


def from_grid(values, R, N, kind):
    return SpectralField(R, N, kind, grid_to_coeffs(values, N, R))


def shift_phase(R, M):
    """``exp(-i pi x2/(2R))`` on the sample grid, shaped to broadcast on axis 1."""
    x = grid_points(R, M)
    return np.exp(-1j * np.pi * x / (2 * R))[None, :, None]


def fast_len(n):
    return sfft.next_fast_len(int(n))


# ---------------------------------------------------------------------------
# pointwise evaluation


def _check_points(pts, R):
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    if pts.shape[-1] != 3:
        raise DomainError("points must have three coordinates")
    if np.any(np.abs(pts) > R * (1 + 1e-12)):
        raise DomainError("point outside the cube")
    return pts


def synthesize_coeffs(coeffs, N, R, kind, pts, chunk=512):
    """Evaluate one or several coefficient arrays at arbitrary points.

    ``coeffs`` has shape ``(..., 2N+1, 2N+1, 2N+1)``; the result has shape
    ``(..., P)``.
    """
    pts = _check_points(pts, R)
    k1, k2, k3 = axis_frequencies(N, R, kind)
    lead = coeffs.shape[:-3]
    n = 2 * N + 1
    c = coeffs.reshape((-1, n, n, n))
    out = np.empty((c.shape[0], len(pts)), complex)
    for start in range(0, len(pts), chunk):
        p = pts[start:start + chunk]
        e1 = np.exp(1j * np.outer(p[:, 0], k1))
        e2 = np.exp(1j * np.outer(p[:, 1], k2))
        e3 = np.exp(1j * np.outer(p[:, 2], k3))
        t = c @ e3.T                                    # (F, n1, n2, P)
        t = np.einsum("fabp,pb->fap", t, e2)
        out[:, start:start + chunk] = np.einsum("fap,pa->fp", t, e1)
    out *= (2 * R) ** -1.5
    return out.reshape(lead + (len(pts),))


def synthesize(f, pts):
    """Values of ``f`` at the given points (shape ``(P, 3)``)."""
    return synthesize_coeffs(f.coeffs, f.N, f.R, f.kind, pts)


def synthesize_spherical(coeffs, N, R, kind, radii, cos_t, phis):
    """Evaluate fields on a tensor grid of radii x polar x azimuth angles.

    Points are ``rho * (sin t cos phi, sin t sin phi, cos t)``.  Exploits the
    ring structure: the x3 sum is done once per (radius, polar angle) and the
    remaining two sums once per ring.  Returns shape ``(..., nr, nt, nphi)``.
    """
    radii = np.atleast_1d(np.asarray(radii, float))
    cos_t = np.asarray(cos_t, float)
    phis = np.asarray(phis, float)
    if np.max(radii) > R:
        raise DomainError("sphere leaves the cube")
    sin_t = np.sqrt(np.clip(1 - cos_t ** 2, 0, None))
    k1, k2, k3 = axis_frequencies(N, R, kind)
    lead = coeffs.shape[:-3]
    n = 2 * N + 1
    c = coeffs.reshape((-1, n, n, n))
    x3 = (radii[:, None] * cos_t[None, :]).ravel()               # rings
    s = (radii[:, None] * sin_t[None, :]).ravel()
    e3 = np.exp(1j * np.outer(x3, k3))                           # (G, n3)
    t = c @ e3.T                                                 # (F, n1, n2, G)
    cphi, sphi = np.cos(phis), np.sin(phis)
    F, G, K = c.shape[0], len(s), len(phis)
    out = np.empty((F, G, K), complex)
    step = max(1, int(4e6 // max(1, F * K * n)))
    for g0 in range(0, G, step):
        sg = s[g0:g0 + step]
        e2 = np.exp(1j * (sg[:, None, None] * sphi[None, :, None]) * k2[None, None, :])
        e1 = np.exp(1j * (sg[:, None, None] * cphi[None, :, None]) * k1[None, None, :])
        tg = np.einsum("fabg,gkb->fgka", t[..., g0:g0 + step], e2, optimize=True)
        out[:, g0:g0 + step] = np.einsum("fgka,gka->fgk", tg, e1, optimize=True)
    out *= (2 * R) ** -1.5
    return out.reshape(lead + (len(radii), len(cos_t), len(phis)))


# ---------------------------------------------------------------------------
# algebra


def multiply(a, b, band=None):
    """Pointwise product of two fields, computed alias-free.

    ``a`` must be standard; ``b`` standard or shifted (the result takes the
    kind of ``b``).  The output band defaults to ``a.N + b.N``, in which case
    the product is exact; a smaller ``band`` truncates it.
    """
    if a.R != b.R:
        raise KindError("fields on different cubes")
    if a.kind == SHIFTED and b.kind == STANDARD:
        a, b = b, a
    if a.kind != STANDARD:
        raise KindError("product of two shifted fields leaves the shifted lattice")
    out_band = a.N + b.N if band is None else int(band)
    M = fast_len(a.N + b.N + out_band + 1)
    va = to_grid(a, M)
    vb = to_grid(b, M)
    return from_grid(va * vb, a.R, out_band, b.kind)


def _multi_index(alpha):
    alpha = tuple(int(x) for x in alpha)
    if len(alpha) != 3 or min(alpha) < 0:
        raise UnsupportedOrderError("multi-index must have three nonnegative entries")
    if sum(alpha) > 4:
        raise UnsupportedOrderError("derivatives above total order 4 are not supported")
    return alpha


def derivative_symbol(f, alpha):
    alpha = _multi_index(alpha)
    k1, k2, k3 = f.frequencies()
    return (1j * k1) ** alpha[0] * (1j * k2) ** alpha[1] * (1j * k3) ** alpha[2]


def derivative(f, alpha):
    """``D^alpha f`` coefficientwise, ``|alpha| <= 4``.

    Factors ``i k_j`` are applied one at a time, axis by axis, so composing
    first-order derivatives in axis order reproduces the coefficients bit for
    bit.
    """
    alpha = _multi_index(alpha)
    c = f.coeffs
    for j, kj in enumerate(f.frequencies()):
        for _ in range(alpha[j]):
            c = c * (1j * kj)
    return f.with_coeffs(c)


def multi_indices(order):
    return [a for a in product(range(order + 1), repeat=3) if sum(a) == order]


def laplacian(f):
    k1, k2, k3 = f.frequencies()
    return f.with_coeffs(-(k1 ** 2 + k2 ** 2 + k3 ** 2) * f.coeffs)


def norm(f, which="L2", s=None, m=None, oversample=4):
    """Discrete norms of a field.

    ``which`` is one of ``"L2"``, ``"Hs"`` (needs ``s``), ``"Wm1"`` (needs
    ``m``) or ``"Linf"``.  ``Linf`` is the maximum modulus over an
    ``oversample``-times refined sampling grid and is therefore a lower
    approximation of the true supremum.
    """
    c = f.coeffs
    if which == "L2":
        return float(np.sqrt(np.sum(np.abs(c) ** 2)))
    k1, k2, k3 = f.frequencies()
    w = 1.0 + k1 ** 2 + k2 ** 2 + k3 ** 2
    if which == "Hs":
        if s is None:
            raise ValueError("Hs norm needs s")
        return float(np.sqrt(np.sum(w ** s * np.abs(c) ** 2)))
    if which == "Wm1":
        if m is None:
            raise ValueError("Wm1 norm needs m")
        return float(np.sum(w ** (m / 2) * np.abs(c)))
    if which == "Linf":
        if not np.any(c):
            return 0.0
        M = oversample * (2 * f.N + 1)
        return float(np.max(np.abs(to_grid(f, M))))
    raise ValueError(f"unknown norm {which!r}")


# ---------------------------------------------------------------------------
# snapshot files

_MAGIC = b"CGOFLD1\n"


def save_field(f, path):
    """Write a field snapshot.

    Layout: the 8-byte magic ``CGOFLD1\\n``, a little-endian uint32 header
    length, a UTF-8 JSON header ``{"R", "N", "kind", "dtype", "order"}``, then
    ``(2N+1)^3`` complex values as interleaved little-endian float64 pairs
    (real, imag) in row-major ``(n1, n2, n3)`` order, ``n_j`` ascending from
    ``-N``.
    """
    header = json.dumps({"R": f.R, "N": f.N, "kind": f.kind, "dtype": "<c16",
                         "order": "row-major n1,n2,n3 ascending"}).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(np.ascontiguousarray(f.coeffs, dtype="<c16").tobytes())


def load_field(path):
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError(f"{path} is not a field snapshot")
        (n,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(n).decode())
        data = np.frombuffer(fh.read(), dtype="<c16")
    N = int(header["N"])
    return SpectralField(header["R"], N, header["kind"], data.reshape((2 * N + 1,) * 3))
