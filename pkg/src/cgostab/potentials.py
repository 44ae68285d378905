"""Analytic potentials and their exact projection onto the cube lattices.

Every primitive knows its pointwise values and its Fourier transform
``F(xi) = int q(y) exp(-i xi . y) dy`` in closed form.  Because supports sit
well inside the cube, the lattice coefficients are simply
``(2R)^{-3/2} F(iota)``; in a rotated frame ``x = Q y`` the transform is
``F(Q^T iota)``.  No gridded data is ever resampled between frames.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, jv, spherical_jn

from .errors import ConfigurationError
from .lattice import STANDARD, SpectralField, axis_frequencies

UNIT_BALL = 1.0


def _vec(v):
    return np.asarray(v, dtype=float).reshape(3)


@dataclass(frozen=True)
class GaussianBump:
    """``A exp(-|y-c|^2 / (2 w^2)) exp(i kappa . y)``.

    A nonzero ``modulation`` kappa gives a complex, windowed plane wave.
    """

    amplitude: float = 1.0
    width: float = 0.14
    center: tuple = (0.0, 0.0, 0.0)
    modulation: tuple = (0.0, 0.0, 0.0)

    def __call__(self, y):
        d = y - _vec(self.center)
        val = self.amplitude * np.exp(-np.sum(d * d, axis=-1) / (2 * self.width ** 2))
        kap = _vec(self.modulation)
        if np.any(kap):
            val = val * np.exp(1j * (y @ kap))
        return val

    def fourier(self, xi):
        w = self.width
        d = xi - _vec(self.modulation)
        return (self.amplitude * (2 * np.pi * w * w) ** 1.5
                * np.exp(-0.5 * w * w * np.sum(d * d, axis=-1))
                * np.exp(-1j * (d @ _vec(self.center))))

    def support_radius(self, tol):
        # distance beyond which |q| < tol * |A|
        return float(np.linalg.norm(self.center) + self.width * np.sqrt(2 * np.log(1 / tol)))

    def peak(self):
        return abs(self.amplitude)

    def to_dict(self):
        return {"type": "gaussian", "amplitude": self.amplitude, "width": self.width,
                "center": list(self.center), "modulation": list(self.modulation)}


@dataclass(frozen=True)
class BallConstant:
    value: float = 1.0
    radius: float = 0.5
    center: tuple = (0.0, 0.0, 0.0)

    def __call__(self, y):
        d = y - _vec(self.center)
        inside = np.sum(d * d, axis=-1) <= self.radius ** 2
        return np.where(inside, self.value, 0.0)

    def fourier(self, xi):
        k = np.sqrt(np.sum(xi * xi, axis=-1))
        t = k * self.radius
        small = t < 1e-3
        ts = np.where(small, 1.0, t)
        ratio = np.where(small, 1 / 3 - t ** 2 / 30, spherical_jn(1, ts) / ts)
        return (self.value * 4 * np.pi * self.radius ** 3 * ratio
                * np.exp(-1j * (xi @ _vec(self.center))))

    def support_radius(self, tol):
        return float(np.linalg.norm(self.center) + self.radius)

    def peak(self):
        return abs(self.value)

    def to_dict(self):
        return {"type": "ball_constant", "value": self.value, "radius": self.radius,
                "center": list(self.center)}


@dataclass(frozen=True)
class BallPolynomial:
    """``A (1 - |y-c|^2/rho^2)^nu`` on the ball of radius rho, zero outside."""

    amplitude: float = 1.0
    radius: float = 0.8
    power: int = 4
    center: tuple = (0.0, 0.0, 0.0)

    def __call__(self, y):
        d = y - _vec(self.center)
        t = 1.0 - np.sum(d * d, axis=-1) / self.radius ** 2
        return self.amplitude * np.where(t > 0, np.clip(t, 0, None) ** self.power, 0.0)

    def fourier(self, xi):
        # int_{|x|<1} (1-|x|^2)^nu e^{-i k.x} dx = pi^{3/2} Gamma(nu+1) (2/k)^a J_a(k), a = nu + 3/2
        nu = self.power
        a = nu + 1.5
        k = np.sqrt(np.sum(xi * xi, axis=-1)) * self.radius
        small = k < 1e-2
        ks = np.where(small, 1.0, k)
        lead = np.exp(-a * np.log(2.0) - gammaln(a + 1))
        g = np.where(small, lead * (1 - k ** 2 / (4 * (a + 1))), jv(a, ks) / ks ** a)
        base = np.pi ** 1.5 * np.exp(gammaln(nu + 1)) * 2 ** a * g
        return (self.amplitude * self.radius ** 3 * base
                * np.exp(-1j * (xi @ _vec(self.center))))

    def support_radius(self, tol):
        return float(np.linalg.norm(self.center) + self.radius)

    def peak(self):
        return abs(self.amplitude)

    def to_dict(self):
        return {"type": "ball_polynomial", "amplitude": self.amplitude, "radius": self.radius,
                "power": self.power, "center": list(self.center)}


_TYPES = {"gaussian": GaussianBump, "ball_constant": BallConstant,
          "ball_polynomial": BallPolynomial}


@dataclass(frozen=True)
class Potential:
    """Sum of analytic primitives, optionally viewed in a rotated frame."""

    terms: tuple = field(default_factory=tuple)

    def __call__(self, y, frame=None):
        y = np.atleast_2d(np.asarray(y, float))
        if frame is not None:
            y = y @ np.asarray(frame)          # rows Q^T x
        out = np.zeros(len(y), complex)
        for t in self.terms:
            out = out + t(y)
        return out

    def fourier(self, xi, frame=None):
        xi = np.asarray(xi, float)
        if frame is not None:
            xi = xi @ np.asarray(frame)
        out = np.zeros(xi.shape[:-1], complex)
        for t in self.terms:
            out = out + t.fourier(xi)
        return out

    @property
    def is_zero(self):
        return len(self.terms) == 0

    def scaled(self, a):
        new = []
        for t in self.terms:
            d = t.to_dict()
            key = "value" if d["type"] == "ball_constant" else "amplitude"
            d[key] = a * d[key]
            new.append(primitive_from_dict(d))
        return Potential(tuple(new))

    def sup_bound(self):
        """Upper bound of ``|q|`` (sum of primitive peaks)."""
        return float(sum(t.peak() for t in self.terms))

    def to_dict(self):
        return {"terms": [t.to_dict() for t in self.terms]}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(primitive_from_dict(t) for t in d.get("terms", [])))


def primitive_from_dict(d):
    d = dict(d)
    kind = d.pop("type")
    if kind not in _TYPES:
        raise ConfigurationError(f"unknown potential primitive {kind!r}")
    for key in ("center", "modulation"):
        if key in d:
            d[key] = tuple(float(v) for v in d[key])
    return _TYPES[kind](**d)


def check_support(pot, tol=1e-10, radius=UNIT_BALL, samples=24):
    """Raise if the potential is not (numerically) supported in the ball.

    Each primitive's declared support must fit, and sampled values outside
    the ball must stay below ``tol`` times the largest sampled value.
    """
    for t in pot.terms:
        if t.support_radius(tol) > radius + 1e-12:
            raise ConfigurationError(
                f"primitive {t.to_dict()['type']} reaches radius "
                f"{t.support_radius(tol):.4f} beyond {radius}")
    if pot.is_zero:
        return
    g = np.linspace(-1.6 * radius, 1.6 * radius, samples)
    pts = np.stack(np.meshgrid(g, g, g, indexing="ij"), -1).reshape(-1, 3)
    vals = np.abs(pot(pts))
    outside = np.linalg.norm(pts, axis=1) > radius
    top = max(vals.max(), pot.sup_bound() * 1e-300)
    if outside.any() and vals[outside].max() > tol * top:
        raise ConfigurationError("potential has mass outside the unit ball")


def project_potential(pot, R, N, frame=None, kind=STANDARD, support_tol=1e-10):
    """Lattice coefficients of ``x -> q(Q^T x)`` on band ``N``.

    Parameters
    ----------
    pot : Potential
    R : float
        Cube half width.
    N : int
        Bandwidth.
    frame : (3, 3) array, optional
        Rotation ``Q``; the projected function is ``q(Q^T x)``.
    kind : {"standard", "shifted"}
    support_tol : float or None
        Relative size allowed outside the unit ball; ``None`` skips the check.
    """
    if support_tol is not None:
        check_support(pot, support_tol)
    if frame is not None:
        Q = np.asarray(frame, float)
        if not np.allclose(Q @ Q.T, np.eye(3), atol=1e-12):
            raise ConfigurationError("frame is not orthogonal")
    k1, k2, k3 = axis_frequencies(N, R, kind)
    xi = np.stack(np.meshgrid(k1, k2, k3, indexing="ij"), axis=-1)
    coeffs = (2 * R) ** -1.5 * pot.fourier(xi, frame)
    return SpectralField(R, N, kind, coeffs)


def default_bump(amplitude=0.5, width=0.14):
    return Potential((GaussianBump(amplitude, width),))


def polynomial_bump(amplitude=0.5, radius=0.8, power=4):
    return Potential((BallPolynomial(amplitude, radius, power),))
