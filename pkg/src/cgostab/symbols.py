"""Complex directions, Faddeev symbols and their lower bounds.

For ``theta`` in C^3 the conjugated fourth-order operator acts on
``e_iota`` as multiplication by

    W(iota) = (M + 2 theta.theta - gamma) * M,    M = |iota|^2 + 2 theta.iota,

where ``.`` is the bilinear (not Hermitian) dot product.  When
``theta.theta = S`` is real and ``Im theta`` points along the lattice shift
axis e2, one has ``|W| >= 4 |Im theta|^2 iota_2^2 > 0`` on the shifted lattice.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import (CertificationError, FrameError, FrequencyTooLargeError,
                     ParameterError, SingularSymbolError)
from .lattice import SHIFTED, axis_frequencies

SINGULAR_FLOOR = 1e-14


def dispersion_S(gamma, k):
    """The value ``theta.theta`` must take: ``(sqrt(gamma^2+4k^4)+gamma)/2``."""
    if not k > 0:
        raise ParameterError("wave number must be positive")
    disc = np.sqrt(gamma * gamma + 4.0 * k ** 4)
    if gamma >= 0:
        return float((disc + gamma) / 2)
    # same root, written without cancellation: S = 2k^4 / (disc - gamma)
    return float(2.0 * k ** 4 / (disc - gamma))


@dataclass(frozen=True)
class OperatorParams:
    gamma: float = 0.0
    k: float = 1.0

    def __post_init__(self):
        if not self.k > 0:
            raise ParameterError("wave number must be positive")

    @property
    def S(self):
        return dispersion_S(self.gamma, self.k)


def bdot(a, b):
    """Bilinear dot product over the last axis."""
    return np.sum(np.asarray(a) * np.asarray(b), axis=-1)


@dataclass(frozen=True, eq=False)
class ComplexDirection:
    theta: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.theta, dtype=complex).reshape(3)
        t.setflags(write=False)
        object.__setattr__(self, "theta", t)

    @property
    def re(self):
        return self.theta.real

    @property
    def im(self):
        return self.theta.imag

    @property
    def re_mag(self):
        return float(np.linalg.norm(self.theta.real))

    @property
    def im_mag(self):
        return float(np.linalg.norm(self.theta.imag))

    @property
    def dot(self):
        return complex(bdot(self.theta, self.theta))

    def rotated(self, Q):
        return ComplexDirection(np.asarray(Q) @ self.theta)

    @classmethod
    def canonical(cls, beta, S):
        """``sqrt(S + beta^2) e1 + i beta e2``."""
        return cls(np.array([np.sqrt(S + beta * beta), 1j * beta, 0.0]))


@dataclass(frozen=True, eq=False)
class ThetaPair:
    theta1: ComplexDirection
    theta2: ComplexDirection
    iota: np.ndarray
    beta: float
    frame: np.ndarray
    params: OperatorParams
    y1: np.ndarray = field(default=None)
    y2: np.ndarray = field(default=None)

    def member(self, which):
        return self.theta1 if which == 1 else self.theta2


def gauge_vectors(iota):
    """Deterministic unit vectors ``y1, y2`` orthogonal to ``iota`` and each other.

    ``y2 = iota x a / |..|`` with ``a`` the first of (e3, e1, e2) not parallel
    to ``iota``; ``y1 = y2 x iota / |..|``.  For ``iota = 0``: ``y1 = e1``,
    ``y2 = e2``.
    """
    iota = np.asarray(iota, float)
    nrm = np.linalg.norm(iota)
    if nrm == 0:
        return np.array([1.0, 0, 0]), np.array([0, 1.0, 0])
    u = iota / nrm
    for a in (np.array([0, 0, 1.0]), np.array([1.0, 0, 0]), np.array([0, 1.0, 0])):
        c = np.cross(u, a)
        if np.linalg.norm(c) > 1e-8:
            break
    y2 = c / np.linalg.norm(c)
    y1 = np.cross(y2, u)
    return y1 / np.linalg.norm(y1), y2


def make_theta_pair(iota, beta, params, y1=None, y2=None):
    """Directions ``theta1, theta2`` with ``theta1 + theta2 = -iota``.

    ``theta_{1,2} = -iota/2 +- sqrt(S - |iota|^2/4 + beta^2) y1 +- i beta y2``.
    The frame ``Q`` has rows ``(Re theta1 / |Re theta1|, y2, row1 x y2)`` so
    that ``Q Im theta1 = beta e2``.
    """
    iota = np.asarray(iota, float).reshape(3)
    if not beta > 0:
        raise ParameterError("beta must be positive")
    S = params.S
    rad = S - iota @ iota / 4 + beta * beta
    if not rad > 0:
        raise FrequencyTooLargeError(
            f"|iota|^2 = {iota @ iota:.6g} exceeds 4(S + beta^2) = {4 * (S + beta ** 2):.6g}")
    if y1 is None or y2 is None:
        y1, y2 = gauge_vectors(iota)
    y1 = np.asarray(y1, float)
    y2 = np.asarray(y2, float)
    c = np.sqrt(rad)
    t1 = -iota / 2 + c * y1 + 1j * beta * y2
    # theta2 = -iota/2 - c y1 - i beta y2; the sum is -iota up to one rounding
    t2 = -iota - t1
    e1 = t1.real / np.linalg.norm(t1.real)
    e2 = y2 - (y2 @ e1) * e1
    e2 /= np.linalg.norm(e2)
    Q = np.array([e1, e2, np.cross(e1, e2)])
    return ThetaPair(ComplexDirection(t1), ComplexDirection(t2), iota, float(beta), Q,
                     params, y1, y2)


def _freq_grid(R, N, kind=SHIFTED):
    k1, k2, k3 = axis_frequencies(N, R, kind)
    return k1[:, None, None], k2[None, :, None], k3[None, None, :]


def _split(iota):
    if isinstance(iota, tuple):
        return iota
    iota = np.asarray(iota, float)
    return iota[..., 0], iota[..., 1], iota[..., 2]


def symbol_M(iota, theta):
    """``|iota|^2 + 2 theta . iota``; ``iota`` is an array (..., 3) or a tuple of axes."""
    th = theta.theta if isinstance(theta, ComplexDirection) else np.asarray(theta, complex)
    i1, i2, i3 = _split(iota)
    return i1 * i1 + i2 * i2 + i3 * i3 + 2 * (th[0] * i1 + th[1] * i2 + th[2] * i3)


def symbol_W(iota, theta, gamma):
    """Faddeev symbol in factored form ``(M + 2 theta.theta - gamma) M``."""
    th = theta.theta if isinstance(theta, ComplexDirection) else np.asarray(theta, complex)
    Mi = symbol_M(iota, th)
    return (Mi + 2 * bdot(th, th) - gamma) * Mi


def symbol_W_expanded(iota, theta, gamma):
    """The seven-term polynomial form of the symbol (cross-check only)."""
    th = theta.theta if isinstance(theta, ComplexDirection) else np.asarray(theta, complex)
    i1, i2, i3 = _split(iota)
    n2 = i1 * i1 + i2 * i2 + i3 * i3
    tt = bdot(th, th)
    ti = th[0] * i1 + th[1] * i2 + th[2] * i3
    return (n2 * n2 + 4 * tt * ti + 2 * n2 * tt + 4 * ti * ti + 4 * n2 * ti
            - gamma * n2 - 2 * gamma * ti)


def check_lattice_frame(theta, tol=1e-10):
    """Require ``Im theta`` along +-e2 and ``Re theta`` orthogonal to e2.

    This is what the shifted-lattice lower bound needs; the real part may
    point anywhere in the (e1, e3) plane.
    """
    th = theta.theta if isinstance(theta, ComplexDirection) else np.asarray(theta, complex)
    scale = max(1.0, float(np.abs(th).max()))
    if abs(th[0].imag) > tol * scale or abs(th[2].imag) > tol * scale or \
            abs(th[1].real) > tol * scale or th[1].imag == 0:
        raise FrameError(f"direction {th} is not aligned with the lattice shift axis")


def check_canonical(theta, tol=1e-10):
    th = theta.theta if isinstance(theta, ComplexDirection) else np.asarray(theta, complex)
    check_lattice_frame(th, tol)
    scale = max(1.0, float(np.abs(th).max()))
    if abs(th[2].real) > tol * scale or th[0].real < 0 or th[1].imag < 0:
        raise FrameError(f"direction {th} is not in the canonical frame")


@dataclass
class Certificate:
    gamma: float
    k: float
    beta: float
    R: float
    N: int
    min_margin_low: float
    min_margin_high: float | None
    min_abs_W: float
    n_checked: int
    n_high: int
    violations: list = field(default_factory=list)

    @property
    def passed(self):
        return not self.violations

    def to_json(self):
        d = asdict(self)
        d.pop("min_abs_W")
        d.pop("n_checked")
        d.pop("n_high")
        return json.dumps(d, sort_keys=True)


def certify_lower_bounds(R, N, theta, params, raise_on_violation=True):
    """Exhaustively check both symbol lower bounds over the shifted band.

    Low regime, every iota: ``|W| >= (pi^2/R^2) |Im theta|``.  High regime,
    ``|iota| > 8 sqrt(2) |Im theta|``: ``|W| >= |iota|^4 / 2``.  Margins are
    ``|W| - bound``; ``min_margin_high`` is ``None`` when the band contains no
    high-regime frequency.
    """
    theta = theta if isinstance(theta, ComplexDirection) else ComplexDirection(theta)
    check_canonical(theta)
    S = params.S
    beta = theta.im_mag
    if beta < max(1.0, S):
        raise FrameError(f"|Im theta| = {beta} below max(1, S) = {max(1.0, S)}")
    if abs(theta.dot - S) > 1e-10 * max(1.0, theta.re_mag ** 2):
        raise FrameError("theta.theta differs from S")
    grid = _freq_grid(R, N)
    W = np.abs(symbol_W(grid, theta, params.gamma))
    i1, i2, i3 = grid
    norm2 = i1 * i1 + i2 * i2 + i3 * i3 + 0 * W
    low = np.pi ** 2 / R ** 2 * beta
    margin_low = W - low
    high_mask = np.sqrt(norm2) > 8 * np.sqrt(2) * beta
    margin_high = W - norm2 ** 2 / 2
    bad = (margin_low < 0) | (high_mask & (margin_high < 0))
    violations = []
    for idx in zip(*np.nonzero(bad)):
        n = [int(v) - N for v in idx]
        violations.append({"n": n, "abs_W": float(W[idx])})
    cert = Certificate(
        gamma=float(params.gamma), k=float(params.k), beta=float(beta), R=float(R), N=int(N),
        min_margin_low=float(margin_low.min()),
        min_margin_high=float(margin_high[high_mask].min()) if high_mask.any() else None,
        min_abs_W=float(W.min()), n_checked=int(W.size), n_high=int(high_mask.sum()),
        violations=violations)
    if violations and raise_on_violation:
        raise CertificationError(f"{len(violations)} symbol bound violations", violations)
    return cert


def symbol_on_field(f, theta, gamma):
    return symbol_W(f.frequencies(), theta, gamma)


def apply_faddeev_inverse(g, theta, gamma):
    """Solve ``Delta_theta^2 p = g`` on the shifted lattice by diagonal division."""
    if g.kind != SHIFTED:
        raise FrameError("Faddeev inverse acts on shifted-lattice fields")
    check_lattice_frame(theta)
    W = symbol_on_field(g, theta, gamma)
    if np.abs(W).min() < SINGULAR_FLOOR:
        raise SingularSymbolError("symbol modulus below the singular floor")
    return g.with_coeffs(g.coeffs / W)
