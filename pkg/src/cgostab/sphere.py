"""Boundary traces on a ball: quadrature, real harmonics and Cauchy records.

Traces of CGO solutions grow like ``exp(|Im theta| r)`` across the sphere, so
a record stores each component as ``exp(i theta.x) g(x)`` with the carrier
``theta`` kept analytically and only the slowly varying envelope ``g`` expanded
in harmonics.  Harmonics are taken about the axes of the record's frame.

Real harmonics are ``P_l^{|m|}(cos t)`` (normalized on [-1, 1]) times
``cos(m phi)/sqrt(pi)``, ``1/sqrt(2 pi)`` or ``sin(|m| phi)/sqrt(pi)`` for
``m > 0``, ``m = 0`` and ``m < 0``.  On the sphere of radius ``r`` the
orthonormal basis is ``Y_lm / r``; coefficient ``(l, m)`` sits at index
``l^2 + l + m``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import assoc_legendre_p_all

from .cgo import EnvelopeAlgebra, Envelope, plane_wave_solution
from .errors import AliasingError, DistanceError, DomainError, RecordMismatchError
from .lattice import SHIFTED, synthesize_spherical

COMPONENTS = ("u", "lap_u", "dn_u", "dn_lap_u")
SOBOLEV_ORDERS = (3.5, 1.5, 2.5, 0.5)
DEFAULT_L = 24
DEFAULT_ORDER = 32


def n_coeffs(L):
    return (L + 1) ** 2


def lm_index(l, m):
    return l * l + l + m


def degrees(L):
    """Degree ``l`` of every coefficient slot, l-major."""
    return np.repeat(np.arange(L + 1), 2 * np.arange(L + 1) + 1)


@dataclass(frozen=True)
class BallDomain:
    radius: float = 0.9

    def __post_init__(self):
        if not 0 < self.radius <= 1:
            raise DomainError("ball radius must lie in (0, 1]")

    def check_cube(self, R):
        if not self.radius < R:
            raise DomainError("ball does not fit inside the cube")


@dataclass(frozen=True, eq=False)
class SphereQuadrature:
    order: int
    cos_t: np.ndarray
    weights_t: np.ndarray
    phis: np.ndarray

    @property
    def n_phi(self):
        return len(self.phis)

    def nodes(self, r=1.0):
        """Cartesian nodes, shape ``(order, 2 order, 3)``."""
        st = np.sqrt(1 - self.cos_t ** 2)
        x = st[:, None] * np.cos(self.phis)[None, :]
        y = st[:, None] * np.sin(self.phis)[None, :]
        z = np.repeat(self.cos_t[:, None], self.n_phi, axis=1)
        return r * np.stack([x, y, z], axis=-1)

    def weights(self, r=1.0):
        """Surface weights, shape ``(order, 2 order)``; they sum to ``4 pi r^2``."""
        w = self.weights_t[:, None] * np.full(self.n_phi, 2 * np.pi / self.n_phi)[None, :]
        return r * r * w

    def integrate(self, vals, r=1.0):
        return np.sum(vals * self.weights(r), axis=(-2, -1))


@lru_cache(maxsize=32)
def sphere_quadrature(order):
    """Gauss-Legendre in ``cos t`` times ``2 order`` uniform azimuths.

    Exact for spherical polynomials of degree ``<= 2 order - 1``.
    """
    order = int(order)
    if order < 6:
        raise AliasingError("quadrature order must be at least 6")
    x, w = np.polynomial.legendre.leggauss(order)
    phis = 2 * np.pi * np.arange(2 * order) / (2 * order)
    return SphereQuadrature(order, x, w, phis)


@lru_cache(maxsize=32)
def _legendre_table(L, cos_key):
    x = np.asarray(cos_key)
    return assoc_legendre_p_all(L, L, x, norm=True)[0]        # (L+1, 2L+1, n)


def _legendre(L, cos_t):
    cos_t = np.asarray(cos_t, float)
    if cos_t.size <= 4096:
        return _legendre_table(L, tuple(cos_t.tolist()))
    return assoc_legendre_p_all(L, L, cos_t, norm=True)[0]


def harmonic_values(L, cos_t, phis):
    """All real harmonics on a tensor grid, shape ``((L+1)^2, nt, nphi)``."""
    P = _legendre(L, cos_t)
    out = np.empty((n_coeffs(L), len(cos_t), len(phis)))
    for l in range(L + 1):
        for m in range(-l, l + 1):
            out[lm_index(l, m)] = P[l, abs(m)][:, None] * _azimuthal(m, phis)[None, :]
    return out


def _azimuthal(m, phis):
    if m > 0:
        return np.cos(m * phis) / np.sqrt(np.pi)
    if m < 0:
        return np.sin(-m * phis) / np.sqrt(np.pi)
    return np.full_like(np.asarray(phis, float), 1 / np.sqrt(2 * np.pi))


def harmonic_values_at(L, unit_pts):
    """Real harmonics at arbitrary unit vectors, shape ``((L+1)^2, P)``."""
    pts = np.atleast_2d(np.asarray(unit_pts, float))
    ct = np.clip(pts[:, 2], -1, 1)
    ph = np.arctan2(pts[:, 1], pts[:, 0])
    P = assoc_legendre_p_all(L, L, ct, norm=True)[0]
    out = np.empty((n_coeffs(L), len(pts)))
    for l in range(L + 1):
        for m in range(-l, l + 1):
            out[lm_index(l, m)] = P[l, abs(m)] * _azimuthal(m, ph)
    return out


def project(samples, L, quad, r=1.0):
    """Coefficients against ``Y_lm / r`` of samples on the quadrature grid.

    ``samples`` has shape ``(..., order, 2 order)``.
    """
    if L + 1 > quad.order or 2 * L + 1 > quad.n_phi:
        raise AliasingError(f"quadrature order {quad.order} cannot resolve degree {L}")
    samples = np.asarray(samples)
    lead = samples.shape[:-2]
    F = np.fft.fft(samples, axis=-1) * (2 * np.pi / quad.n_phi)    # int f e^{-i m phi}
    P = _legendre(L, quad.cos_t)
    out = np.empty(lead + (n_coeffs(L),), complex)
    wt = quad.weights_t
    nphi = quad.n_phi
    for m in range(0, L + 1):
        Fp = F[..., :, m % nphi]
        Fm = F[..., :, (-m) % nphi]
        if m == 0:
            ang = {0: Fp / np.sqrt(2 * np.pi)}
        else:
            ang = {m: (Fp + Fm) / 2 / np.sqrt(np.pi), -m: 1j * (Fp - Fm) / 2 / np.sqrt(np.pi)}
        for mm, a in ang.items():
            # (..., nt) against P[l, m] over the polar nodes
            vals = np.einsum("...t,lt->...l", a * wt, P[m:, m])
            for i, l in enumerate(range(m, L + 1)):
                out[..., lm_index(l, mm)] = r * vals[..., i]
    return out


def synthesize_harmonics(coeffs, L, quad, r=1.0):
    """Inverse of :func:`project` on the quadrature grid."""
    Y = harmonic_values(L, quad.cos_t, quad.phis)
    return np.tensordot(np.asarray(coeffs), Y, axes=([-1], [0])) / r


# ---------------------------------------------------------------------------
# records


@dataclass(frozen=True, eq=False)
class CauchyRecord:
    """Boundary data ``(u, Delta u, d_nu u, d_nu Delta u)`` on a sphere.

    ``components`` has shape ``(4, (L+1)^2)`` and holds envelope
    coefficients; the trace itself is ``exp(i carrier . x') g(x')`` in frame
    coordinates ``x' = frame @ x``.
    """

    r: float
    L: int
    components: np.ndarray
    carrier: np.ndarray = field(default_factory=lambda: np.zeros(3, complex))
    frame: np.ndarray = field(default_factory=lambda: np.eye(3))
    delta: float = 0.0
    seed: int | None = None

    def __post_init__(self):
        c = np.asarray(self.components, complex)
        if c.shape != (4, n_coeffs(self.L)):
            raise RecordMismatchError(f"components must have shape (4, {n_coeffs(self.L)})")
        c = c.copy()
        c.setflags(write=False)
        object.__setattr__(self, "components", c)
        object.__setattr__(self, "carrier", np.asarray(self.carrier, complex).reshape(3))
        object.__setattr__(self, "frame", np.asarray(self.frame, float).reshape(3, 3))

    def component(self, name):
        return self.components[COMPONENTS.index(name)]

    def with_components(self, comps, **kw):
        d = dict(r=self.r, L=self.L, carrier=self.carrier, frame=self.frame,
                 delta=self.delta, seed=self.seed)
        d.update(kw)
        return CauchyRecord(components=comps, **d)

    def same_carrier(self, other):
        return (self.r == other.r and np.array_equal(self.carrier, other.carrier)
                and np.array_equal(self.frame, other.frame))

    def scaled(self, a):
        return self.with_components(a * self.components)

    def to_dict(self):
        def cl(z):
            return [[float(v.real), float(v.imag)] for v in np.ravel(z)]
        return {"r": float(self.r), "L": int(self.L), "delta": float(self.delta),
                "seed": self.seed, "components": [cl(c) for c in self.components],
                "carrier": cl(self.carrier), "frame": np.asarray(self.frame).tolist()}

    @classmethod
    def from_dict(cls, d):
        def cz(rows):
            a = np.asarray(rows, float).reshape(-1, 2)
            return a[:, 0] + 1j * a[:, 1]
        comps = np.stack([cz(c) for c in d["components"]])
        return cls(float(d["r"]), int(d["L"]), comps, cz(d["carrier"]),
                   np.asarray(d["frame"], float), float(d["delta"]), d["seed"])


def save_record(rec, path):
    # float repr round-trips exactly through json
    with open(path, "w") as fh:
        json.dump(rec.to_dict(), fh)


def load_record(path):
    with open(path) as fh:
        return CauchyRecord.from_dict(json.load(fh))


def zero_record(r, L):
    return CauchyRecord(r, L, np.zeros((4, n_coeffs(L)), complex))


def _trace_envelopes(sol, radius, quad):
    """Envelope samples of the four traces on the quadrature grid (frame coordinates)."""
    alg = EnvelopeAlgebra(sol.theta, sol.p.R, sol.p.N)
    base = Envelope(1.0 + 0j, sol.p.coeffs)
    lap = alg.lap(base)
    envs = [base] + [alg.d(base, j) for j in range(3)] + [lap] + [alg.d(lap, j) for j in range(3)]
    if np.any(sol.p.coeffs):
        c = np.stack([e.coeffs for e in envs])
        vals = synthesize_spherical(c, sol.p.N, sol.p.R, SHIFTED, [radius], quad.cos_t,
                                    quad.phis)[:, 0]
    else:
        vals = np.zeros((8, quad.order, quad.n_phi), complex)
    vals = vals + np.array([e.const for e in envs])[:, None, None]
    nu = quad.nodes(1.0)
    dn = np.einsum("jtk,tkj->tk", vals[1:4], nu)
    dn_lap = np.einsum("jtk,tkj->tk", vals[5:8], nu)
    return np.stack([vals[0], vals[4], dn, dn_lap])


def trace_cgo(sol, dom, L=DEFAULT_L, order=None):
    """Cauchy record of a CGO solution on the sphere ``|x| = dom.radius``."""
    order = DEFAULT_ORDER if order is None else int(order)
    order = max(order, 6)
    if order < L + 2:
        raise AliasingError(f"quadrature order {order} below L + 2 = {L + 2}")
    dom.check_cube(sol.p.R)
    quad = sphere_quadrature(order)
    env = _trace_envelopes(sol, dom.radius, quad)
    comps = project(env, L, quad, dom.radius)
    return CauchyRecord(dom.radius, L, comps, sol.theta.theta, sol.frame)


def background_record(theta, frame, params, dom, L=DEFAULT_L, order=None):
    """Record of the plane wave ``exp(i theta.x)`` (the ``q = 0`` solution)."""
    sol = plane_wave_solution(theta, params, max(2.0, 2 * dom.radius), 0, frame)
    return trace_cgo(sol, dom, L, order)


def record_values(rec, pts):
    """Full traces at points (original frame) on the sphere, shape ``(4, P)``."""
    pts = np.atleast_2d(np.asarray(pts, float))
    xp = pts @ rec.frame.T
    Y = harmonic_values_at(rec.L, xp / rec.r)
    env = rec.components @ Y / rec.r
    return env * np.exp(1j * (xp @ rec.carrier))[None, :]


def resolved_degree(rec, extra=10):
    """Degree needed to expand the carrier-modulated traces."""
    z = float(np.linalg.norm(rec.carrier)) * rec.r
    if z == 0:
        return rec.L
    return int(rec.L + np.ceil(z + 6 * np.sqrt(z) + extra))


# ---------------------------------------------------------------------------
# norms and distances


def weighted_norm(coeffs, L, orders=SOBOLEV_ORDERS):
    w = 1.0 + degrees(L) * (degrees(L) + 1.0)
    tot = 0.0
    for c, s in zip(coeffs, orders):
        tot += float(np.sum(w ** s * np.abs(c) ** 2))
    return np.sqrt(tot)


def _full_coeffs(recs, signs, L_eff, frame):
    """Harmonic coefficients (about ``frame``) of a signed sum of full traces."""
    quad = sphere_quadrature(L_eff + 2)
    r = recs[0].r
    orig = quad.nodes(r).reshape(-1, 3) @ np.asarray(frame)      # x = Q^T x'
    total = 0
    for rec, sgn in zip(recs, signs):
        total = total + sgn * record_values(rec, orig).reshape(4, quad.order, quad.n_phi)
    return project(total, L_eff, quad, r)


def mixed_norm(rec, orders=SOBOLEV_ORDERS, L_eff=None):
    """Mixed boundary Sobolev norm of the traces represented by a record.

    Uses Laplace-Beltrami weights ``(1 + l(l+1))^s`` with ``s = 7/2, 3/2,
    5/2, 1/2`` for ``(u, Delta u, d_nu u, d_nu Delta u)``.  A nonzero carrier
    is multiplied back in on a refined quadrature before weighting.
    """
    if not np.any(rec.carrier):
        return weighted_norm(rec.components, rec.L, orders)
    L_eff = resolved_degree(rec) if L_eff is None else L_eff
    return weighted_norm(_full_coeffs([rec], [1.0], L_eff, rec.frame), L_eff, orders)


def difference_norm(a, b, orders=SOBOLEV_ORDERS):
    """``mixed_norm(a - b)`` for records on the same sphere."""
    if a.r != b.r:
        raise RecordMismatchError("records live on different spheres")
    if a.same_carrier(b):
        L = max(a.L, b.L)
        ca = _pad(a.components, a.L, L)
        cb = _pad(b.components, b.L, L)
        return mixed_norm(a.with_components(ca - cb, L=L), orders)
    L_eff = max(resolved_degree(a), resolved_degree(b))
    coeffs = _full_coeffs([a, b], [1.0, -1.0], L_eff, a.frame)
    return weighted_norm(coeffs, L_eff, orders)


def _pad(c, L, Lnew):
    if L == Lnew:
        return c
    out = np.zeros((c.shape[0], n_coeffs(Lnew)), complex)
    out[:, :n_coeffs(L)] = c
    return out


def add_noise(rec, delta, seed):
    """Multiply every coefficient by ``1 + delta zeta`` with complex unit-variance ``zeta``.

    Returns ``(noisy_record, realized)`` where ``realized`` is the relative
    mixed-norm perturbation actually applied.
    """
    if delta < 0:
        raise ValueError("noise level must be nonnegative")
    if delta == 0:
        return rec.with_components(rec.components, delta=0.0, seed=seed), 0.0
    rng = np.random.default_rng(seed)
    shape = rec.components.shape
    zeta = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)
    noisy = rec.with_components(rec.components * (1 + delta * zeta), delta=float(delta),
                                seed=seed)
    base = mixed_norm(rec)
    realized = difference_norm(noisy, rec) / base if base > 0 else 0.0
    return noisy, realized


def cauchy_distance(fam_a, fam_b, orders=SOBOLEV_ORDERS):
    """Symmetric sup-inf relative distance between two finite record families."""
    if not fam_a or not fam_b:
        raise DistanceError("families must be nonempty")
    na = [mixed_norm(f, orders) for f in fam_a]
    nb = [mixed_norm(g, orders) for g in fam_b]
    if min(na) == 0 or min(nb) == 0:
        raise DistanceError("zero-norm record in a family")
    D = np.array([[difference_norm(f, g, orders) for g in fam_b] for f in fam_a])
    ab = max(np.min(D[i] / na[i]) for i in range(len(fam_a)))
    ba = max(np.min(D[:, j] / nb[j]) for j in range(len(fam_b)))
    return float(max(ab, ba))
