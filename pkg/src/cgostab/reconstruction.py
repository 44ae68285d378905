"""Fourier-coefficient recovery from boundary records.

For a direction pair with ``theta1 + theta2 = -iota`` and solutions ``u1``
(unknown potential) and ``u2`` (background), Green's formula turns
``int (q1 - q2) u1 u2`` into a surface integral of the four traces.  Since
``u1 u2 = exp(-i iota.x)(1 + R)`` with a remainder that decays in ``beta``,
``(2R)^{-3/2}`` times that integral estimates the ``iota`` coefficient of
``q1 - q2`` on the shifted lattice.
"""

from __future__ import annotations

import hashlib
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import nnls

from .cgo import DEFAULT_MAX_ITER, DEFAULT_TOL, solve_pair_member
from .errors import (BudgetExhausted, FrequencyTooLargeError, NonConvergenceError,
                     ParameterError, ReconstructionError, RecordMismatchError,
                     SmallnessViolation)
from .lattice import SHIFTED, STANDARD, SpectralField, axis_frequencies, synthesize_coeffs
from .lattice import synthesize_spherical
from .potentials import Potential, project_potential
from .sphere import (DEFAULT_L, DEFAULT_ORDER, BallDomain, add_noise, background_record,
                     cauchy_distance, harmonic_values_at, n_coeffs, sphere_quadrature,
                     synthesize_harmonics, trace_cgo)
from .symbols import OperatorParams, make_theta_pair

SCHEDULES = ("thm1.1", "cor1.2", "thm1.3", "manual")


# ---------------------------------------------------------------------------
# Green functional and its volume counterpart


def _auto_order(L, r, iota_norm):
    z = r * iota_norm
    deg = 2 * L + z + 6 * np.sqrt(z) + 10
    return int(max(L + 2, DEFAULT_ORDER, math.ceil((deg + 1) / 2)))


def green_boundary_functional(h1, h2, gamma, order=None):
    """Surface expression equal to ``int_Omega (q1 - q2) u1 u2 dx``.

    With ``U, L, D, T`` the traces of ``u, Delta u, d_nu u, d_nu Delta u``:

        -int [ (T1 U2 - T2 U1) + (D1 L2 - D2 L1) + gamma (D1 U2 - D2 U1) ] dS.

    This is the difference form of Green's identity with the terms that pair
    a record with itself cancelled algebraically; identical records give
    exactly zero.  The two carriers are added before exponentiation.
    """
    if h1.r != h2.r or h1.L != h2.L:
        raise RecordMismatchError("records must share radius and degree")
    r, L = h1.r, h1.L
    Q1 = h1.frame
    if order is None:
        iota = -(Q1.T @ h1.carrier + h2.frame.T @ h2.carrier)
        order = _auto_order(L, r, float(np.linalg.norm(iota)))
    quad = sphere_quadrature(order)
    nodes1 = quad.nodes(r)                                  # h1 frame coordinates
    e1 = synthesize_harmonics(h1.components, L, quad, r)
    if np.array_equal(h2.frame, Q1):
        nodes2 = nodes1
        e2 = synthesize_harmonics(h2.components, L, quad, r)
    else:
        flat = nodes1.reshape(-1, 3) @ Q1 @ h2.frame.T
        nodes2 = flat.reshape(nodes1.shape)
        e2 = (h2.components @ harmonic_values_at(L, flat / r) / r).reshape(e1.shape)
    phase = np.exp(1j * (nodes1 @ h1.carrier + nodes2 @ h2.carrier))
    U1, L1, D1, T1 = e1
    U2, L2, D2, T2 = e2
    # operand order keeps each bracket bit-exactly zero when h1 and h2 coincide
    combo = (T1 * U2 - T2 * U1) + (D1 * L2 - D2 * L1) + gamma * (D1 * U2 - D2 * U1)
    return complex(-quad.integrate(combo * phase, r))


def ball_quadrature(dom, n_radial=24, order=DEFAULT_ORDER):
    """Radial Gauss nodes times the sphere rule: ``(radii, weights_r, sphere quad)``."""
    x, w = np.polynomial.legendre.leggauss(int(n_radial))
    rho = 0.5 * dom.radius * (x + 1)
    wr = 0.5 * dom.radius * w * rho ** 2
    return rho, wr, sphere_quadrature(order)


def _ball_points(rho, quad):
    unit = quad.nodes(1.0)
    return rho[:, None, None, None] * unit[None]               # (nr, nt, np, 3)


def _ball_weights(wr, quad):
    return wr[:, None, None] * quad.weights(1.0)[None]


def _eval_potential(pot, pts):
    """Values of a potential given as Potential, callable or standard SpectralField."""
    shape = pts.shape[:-1]
    flat = pts.reshape(-1, 3)
    if isinstance(pot, SpectralField):
        vals = synthesize_coeffs(pot.coeffs, pot.N, pot.R, pot.kind, flat)
    else:
        vals = pot(flat)
    return np.asarray(vals).reshape(shape)


def _remainder_on_ball(sol, rho, quad):
    """``p`` in the solution's frame on the ball grid (the grid is rotation invariant)."""
    if not np.any(sol.p.coeffs):
        return np.zeros((len(rho), quad.order, quad.n_phi), complex)
    return synthesize_spherical(sol.p.coeffs, sol.p.N, sol.p.R, SHIFTED, rho, quad.cos_t,
                                quad.phis)


def interior_pairing(dq, sol1, sol2, dom, n_radial=24, order=DEFAULT_ORDER):
    """``int_Omega dq u1 u2 dx`` by radial Gauss times sphere quadrature.

    Both solutions must share a frame (as the two members of a pair do); the
    grid is built in that frame and ``dq`` is evaluated at the matching
    original-frame points.
    """
    if sol1.params != sol2.params:
        raise ParameterError("solutions belong to different operators")
    if not np.array_equal(sol1.frame, sol2.frame):
        raise ParameterError("solutions must share a frame")
    rho, wr, quad = ball_quadrature(dom, n_radial, order)
    xp = _ball_points(rho, quad)
    Q = np.asarray(sol1.frame)
    q = _eval_potential(dq, xp @ Q)
    p1 = _remainder_on_ball(sol1, rho, quad)
    p2 = _remainder_on_ball(sol2, rho, quad)
    phase = np.exp(1j * (xp @ (sol1.theta.theta + sol2.theta.theta)))
    return complex(np.sum(_ball_weights(wr, quad) * q * phase * (1 + p1) * (1 + p2)))


@dataclass(frozen=True, eq=False)
class PairingProduct:
    """``R = p1 + p2 + p1 p2`` for the two members of a pair.

    The product of two shifted-lattice fields lands on a lattice offset by a
    whole step, so ``R`` is kept as the pair of factors and evaluated
    pointwise.
    """

    sol1: object
    sol2: object

    def integral_abs(self, dom, n_radial=24, order=DEFAULT_ORDER):
        rho, wr, quad = ball_quadrature(dom, n_radial, order)
        p1 = _remainder_on_ball(self.sol1, rho, quad)
        p2 = _remainder_on_ball(self.sol2, rho, quad)
        return float(np.sum(_ball_weights(wr, quad) * np.abs(p1 + p2 + p1 * p2)))


# ---------------------------------------------------------------------------
# data oracle


def _query_seed(seed, iota, which):
    h = hashlib.sha256(np.asarray(iota, float).tobytes() + bytes([which]))
    return [int(seed), int.from_bytes(h.digest()[:8], "little")]


class DataOracle:
    """Boundary measurements for a hidden potential.

    Records are solved at ``N_oracle`` and traced to degree ``L_oracle``
    before being truncated to ``L`` and perturbed with multiplicative noise.
    The reconstruction only ever sees the returned records.
    """

    def __init__(self, potential, params=None, R=2.0, N_oracle=32, L=DEFAULT_L, L_oracle=None,
                 dom=None, order=None, delta=0.0, seed=0, budget=None, tol=DEFAULT_TOL,
                 max_iter=DEFAULT_MAX_ITER, measure_distance=False):
        self._pot = potential
        self.params = params or OperatorParams()
        self.R = float(R)
        self.N_oracle = int(N_oracle)
        self.L = int(L)
        self.L_oracle = self.L + 8 if L_oracle is None else int(L_oracle)
        self.dom = dom or BallDomain()
        self.order = max(DEFAULT_ORDER, self.L_oracle + 2) if order is None else int(order)
        self.delta = float(delta)
        self.seed = int(seed)
        self.budget = budget
        self.tol = tol
        self.max_iter = max_iter
        self.measure_distance = measure_distance
        self.queries = 0
        self.realized = []
        self._lock = threading.Lock()

    def settings(self):
        return {"N_oracle": self.N_oracle, "L": self.L, "L_oracle": self.L_oracle,
                "order": self.order, "radius": self.dom.radius, "delta": self.delta,
                "seed": self.seed, "budget": self.budget, "queries": self.queries}

    def query(self, pair, which=1):
        with self._lock:
            if self.budget is not None and self.queries >= self.budget:
                raise BudgetExhausted(f"oracle budget of {self.budget} queries used up")
            self.queries += 1
        sol = solve_pair_member(self._pot, pair, which, self.R, self.N_oracle, self.tol,
                                self.max_iter, check_residual=False)
        full = trace_cgo(sol, self.dom, self.L_oracle, self.order)
        clean = full.with_components(full.components[:, :n_coeffs(self.L)], L=self.L)
        if self.delta == 0:
            return clean
        seed = _query_seed(self.seed, pair.iota, which)
        noisy, _ = add_noise(clean, self.delta, seed)
        if self.measure_distance:
            d = cauchy_distance([noisy], [clean])
            with self._lock:
                self.realized.append(d)
        return noisy


def estimate_fourier_coefficient(iota, beta, oracle, params=None, dom=None, L=None, order=None,
                                 R=None, pair=None):
    """Estimate the ``iota`` coefficient of the hidden potential (background zero)."""
    params = params or oracle.params
    dom = dom or oracle.dom
    L = oracle.L if L is None else L
    R = oracle.R if R is None else R
    pair = pair or make_theta_pair(iota, beta, params)
    h1 = oracle.query(pair, 1)
    Q = pair.frame
    h2 = background_record(pair.theta2.rotated(Q), Q, params, dom, L, order)
    G = green_boundary_functional(h1, h2, params.gamma, order)
    return (2 * R) ** -1.5 * G


# ---------------------------------------------------------------------------
# schedules


@dataclass(frozen=True)
class PriorSpec:
    """A priori smoothness class: ``H^s`` (order ``s``) or ``W^{m,1}`` (order ``m``)."""

    kind: str = "Hs"
    order: float = 2.0
    bound: float | None = None

    def __post_init__(self):
        if self.kind not in ("Hs", "Wm1"):
            raise ParameterError(f"unknown prior kind {self.kind!r}")
        if self.kind == "Hs" and not self.order > 1.5:
            raise ParameterError("H^s prior needs s > 3/2")
        if self.kind == "Wm1" and not self.order > 3:
            raise ParameterError("W^{m,1} prior needs m > 3")

    def to_dict(self):
        return {"kind": self.kind, "order": self.order, "bound": self.bound}


@dataclass(frozen=True)
class ReconstructionPlan:
    prior: PriorSpec
    delta_hat: float | None
    beta: float
    eta: float
    kind: str
    C8: float = 1.0

    def to_dict(self):
        return {"prior": self.prior.to_dict(), "delta_hat": self.delta_hat, "beta": self.beta,
                "eta": self.eta, "kind": self.kind, "C8": self.C8}


def schedule_values(kind, delta_hat, prior, C8=1.0):
    """``(beta, eta)`` prescribed by a schedule, without admissibility checks."""
    if not 0 < delta_hat < 1:
        raise ParameterError("data distance must lie in (0, 1)")
    s = prior.order
    ld = -math.log(delta_hat)
    if kind == "thm1.1":
        beta = ld / (4 * (s + 3))
        return beta, beta ** (1 / (s + 3))
    if kind == "cor1.2":
        beta = ld / (4 * (2 * s + 3))
        return beta, beta ** (2 / (2 * s + 3))
    if kind == "thm1.3":
        beta = ld / 12
        return beta, (beta / (2 * C8)) ** (1 / 3)
    raise ParameterError(f"unknown schedule {kind!r}")


def _threshold(kind, prior, beta0, C8):
    """Largest admissible data distance for a schedule."""
    s = prior.order
    if kind == "thm1.1":
        need = max(beta0, 2 ** (s + 3))
        return math.exp(-4 * (s + 3) * need)
    if kind == "cor1.2":
        need = max(beta0, 2 ** ((2 * s + 3) / 2))
        return math.exp(-4 * (2 * s + 3) * need)
    need = max(beta0, 16 * C8)
    return math.exp(-12 * need)


def schedule(kind, delta_hat, prior, policy, C8=1.0, beta=None, eta=None):
    """Build a plan; raises ``SmallnessViolation`` when ``delta_hat`` is not small enough."""
    if kind == "manual":
        if beta is None or eta is None:
            raise ParameterError("manual plans need beta and eta")
        if beta < policy.beta0:
            raise SmallnessViolation(f"beta = {beta:.6g} below beta0 = {policy.beta0:.6g}",
                                     policy.beta0)
        if not eta > 0:
            raise ParameterError("eta must be positive")
        return ReconstructionPlan(prior, delta_hat, float(beta), float(eta), kind, C8)
    b, e = schedule_values(kind, delta_hat, prior, C8)
    if b <= policy.beta0 or e <= 2:
        thr = _threshold(kind, prior, policy.beta0, C8)
        raise SmallnessViolation(
            f"delta = {delta_hat:.3e} gives beta = {b:.4g}, eta = {e:.4g}; "
            f"need delta <= {thr:.3e}", thr)
    return ReconstructionPlan(prior, delta_hat, b, e, kind, C8)


def stability_exponents(kind, prior):
    """Exponents ``(a, b)`` of the envelope ``A (-ln d)^{-a} + B d^{b}``."""
    s = prior.order
    if kind in ("thm1.1", "manual"):
        return s / (s + 3), (s + 2) / (s + 3)
    if kind == "cor1.2":
        return (2 * s - 3) / (2 * s + 3), (2 * s + 2) / (2 * s + 3)
    if kind == "thm1.3":
        return (s - 3) / 3, 2 / 3
    raise ParameterError(f"unknown schedule {kind!r}")


def fit_envelope(deltas, errs, kind, prior, floor=1e-7):
    """Nonnegative least-squares fit of errors to the hybrid envelope.

    Returns a dict with ``A``, ``B``, ``residual`` (relative) and ``degenerate``.
    The fit is flagged degenerate with fewer than two points or when every
    error sits at or below ``floor`` (the quadrature floor).
    """
    d = np.asarray(deltas, float)
    e = np.asarray(errs, float)
    a, b = stability_exponents(kind, prior)
    if len(d) == 0 or not np.any(e > floor):
        return {"A": 0.0, "B": 0.0, "residual": 0.0, "degenerate": True, "a": a, "b": b}
    X = np.stack([(-np.log(d)) ** -a, d ** b], axis=1)
    coef, rn = nnls(X, e)
    rel = rn / float(np.linalg.norm(e))
    return {"A": float(coef[0]), "B": float(coef[1]), "residual": float(rel),
            "degenerate": bool(len(d) < 2), "a": a, "b": b}


# ---------------------------------------------------------------------------
# assembly


def shifted_indices_within(eta, R, N=None):
    """Shifted-lattice indices with ``|iota| <= eta``, in lexicographic order."""
    nmax = int(math.floor(eta * R / math.pi)) + 1
    if N is not None:
        nmax = min(nmax, N)
    rng = np.arange(-nmax, nmax + 1)
    n1, n2, n3 = np.meshgrid(rng, rng, rng, indexing="ij")
    k = (math.pi / R) * np.sqrt(n1 ** 2 + (n2 + 0.5) ** 2 + n3 ** 2)
    sel = k <= eta
    idx = np.stack([n1[sel], n2[sel], n3[sel]], axis=1)
    return [tuple(int(v) for v in row) for row in idx]


def _count_within(eta, R):
    return len(shifted_indices_within(eta, R))


def shifted_frequency(n, R):
    return (math.pi / R) * np.array([n[0], n[1] + 0.5, n[2]])


@dataclass
class ReconstructionResult:
    field: SpectralField
    plan: ReconstructionPlan
    per_iota: list
    coverage: float
    metrics: dict = field(default_factory=dict)
    imag_residue: float = 0.0
    oracle_settings: dict = field(default_factory=dict)

    def report(self):
        return {"plan": self.plan.to_dict(), "coverage": self.coverage,
                "per_iota": self.per_iota, "err_l2": self.metrics.get("err_l2"),
                "err_linf": self.metrics.get("err_linf"),
                "rel_err_l2": self.metrics.get("rel_err_l2"),
                "imag_residue": self.imag_residue, "oracle_settings": self.oracle_settings,
                "notes": ["remainder term dropped from every estimate",
                          "single oracle record per frequency stands in for the Cauchy set"]}


def reconstruct(oracle, plan, params=None, R=None, N=16, dom=None, L=None, order=None,
                truth=None, workers=1, min_coverage=0.5, error_order=DEFAULT_ORDER):
    """Estimate all shifted coefficients with ``|iota| <= eta`` and assemble the field.

    Frequencies beyond ``eta`` are zero-filled.  Per-frequency failures are
    recorded with a reason; fewer than ``min_coverage`` successes raises
    ``ReconstructionError``.  With ``truth`` given, errors on the ball are
    added to ``metrics``.
    """
    params = params or oracle.params
    R = oracle.R if R is None else R
    dom = dom or oracle.dom
    L = oracle.L if L is None else L
    wanted = shifted_indices_within(plan.eta, R)
    inside = set(shifted_indices_within(plan.eta, R, N))

    def task(n):
        iota = shifted_frequency(n, R)
        entry = {"n": list(n), "iota": iota.tolist()}
        if n not in inside:
            entry["skip_reason"] = "outside reconstruction band"
            return entry
        try:
            est = estimate_fourier_coefficient(iota, plan.beta, oracle, params, dom, L, order, R)
        except FrequencyTooLargeError as exc:
            entry["skip_reason"] = f"radicand: {exc}"
            return entry
        except (BudgetExhausted, NonConvergenceError) as exc:
            entry["skip_reason"] = f"{type(exc).__name__}: {exc}"
            return entry
        entry["estimate_re"] = float(est.real)
        entry["estimate_im"] = float(est.imag)
        return entry

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            entries = list(ex.map(task, wanted))
    else:
        entries = [task(n) for n in wanted]
    coeffs = np.zeros((2 * N + 1,) * 3, complex)
    done = 0
    for e in entries:
        if "skip_reason" in e:
            continue
        n1, n2, n3 = e["n"]
        coeffs[n1 + N, n2 + N, n3 + N] = e["estimate_re"] + 1j * e["estimate_im"]
        done += 1
    coverage = done / len(wanted) if wanted else 1.0
    if coverage < min_coverage:
        raise ReconstructionError(f"coverage {coverage:.2f} below {min_coverage}")
    f = SpectralField(R, N, SHIFTED, coeffs)
    res = ReconstructionResult(f, plan, entries, coverage, oracle_settings=oracle.settings())
    res.imag_residue = imaginary_residue(f, dom, order=error_order)
    if truth is not None:
        res.metrics = error_metrics(f, truth, dom, order=error_order)
    return res


# ---------------------------------------------------------------------------
# metrics


def _field_on_ball(f, rho, quad):
    return synthesize_spherical(f.coeffs, f.N, f.R, f.kind, rho, quad.cos_t, quad.phis)


def _values_on_ball(obj, rho, quad):
    if isinstance(obj, SpectralField):
        return _field_on_ball(obj, rho, quad)
    return _eval_potential(obj, _ball_points(rho, quad))


def error_metrics(q_rec, q_true, dom, n_radial=24, order=DEFAULT_ORDER, real_part=True):
    """L2 and sup errors on the ball; the reconstruction's real part is used by default."""
    rho, wr, quad = ball_quadrature(dom, n_radial, order)
    a = _values_on_ball(q_rec, rho, quad)
    if real_part:
        a = a.real
    b = _values_on_ball(q_true, rho, quad)
    w = _ball_weights(wr, quad)
    d = a - b
    l2 = float(np.sqrt(np.sum(w * np.abs(d) ** 2)))
    ref = float(np.sqrt(np.sum(w * np.abs(b) ** 2)))
    # sup over a finer ball grid, with the centre and the boundary sphere added
    rho2, _, quad2 = ball_quadrature(dom, 2 * n_radial, 2 * order)
    rho2 = np.concatenate([[0.0], rho2, [dom.radius]])
    a2 = _values_on_ball(q_rec, rho2, quad2)
    if real_part:
        a2 = a2.real
    linf = float(np.max(np.abs(a2 - _values_on_ball(q_true, rho2, quad2))))
    return {"err_l2": l2, "err_linf": linf, "true_l2": ref,
            "rel_err_l2": l2 / ref if ref > 0 else None}


def imaginary_residue(f, dom, n_radial=16, order=DEFAULT_ORDER):
    """``||Im q_rec|| / ||q_rec||`` on the ball."""
    rho, wr, quad = ball_quadrature(dom, n_radial, order)
    v = _field_on_ball(f, rho, quad)
    w = _ball_weights(wr, quad)
    tot = float(np.sqrt(np.sum(w * np.abs(v) ** 2)))
    if tot == 0:
        return 0.0
    return float(np.sqrt(np.sum(w * v.imag ** 2))) / tot


def truth_coefficients(pot, R, N):
    """Exact shifted-lattice coefficients of an analytic potential."""
    return project_potential(pot, R, N, kind=SHIFTED)


def energy_bandwidth(f, fraction=0.99):
    """Smallest ``eta`` whose ball ``|iota| <= eta`` holds the given energy fraction."""
    k1, k2, k3 = f.frequencies()
    k = np.sqrt(k1 ** 2 + k2 ** 2 + k3 ** 2).ravel()
    e = (np.abs(f.coeffs) ** 2).ravel()
    order = np.argsort(k, kind="stable")
    cum = np.cumsum(e[order])
    if cum[-1] == 0:
        return 0.0
    i = int(np.searchsorted(cum, fraction * cum[-1]))
    return float(k[order][min(i, len(k) - 1)])


def tail_bound(f, eta, s):
    """``(sum_{|iota|>eta} |c|^2, ||f||_{H^s}^2 / eta^{2s})`` for the discrete ``H^s`` norm."""
    k1, k2, k3 = f.frequencies()
    k2n = k1 ** 2 + k2 ** 2 + k3 ** 2
    e = np.abs(f.coeffs) ** 2
    tail = float(np.sum(e[k2n > eta ** 2]))
    cs2 = float(np.sum((1 + k2n) ** s * e))
    return tail, cs2 / eta ** (2 * s)
