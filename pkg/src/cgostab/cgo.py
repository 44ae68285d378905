"""Complex geometric optics solutions ``u = exp(i theta.x) (1 + p)``.

The remainder ``p`` lives on the shifted lattice and solves

    Delta_theta^2 p + q p = -q,

which in coefficients reads ``W p + (q (1 + p))^ = 0``.  It is found by the
fixed point ``p <- -W^{-1} (q (1 + p))`` started at zero.  All fields are
expressed in a rotated frame ``x' = Q x`` in which ``Im theta`` lies along the
lattice shift axis; evaluation helpers accept points in the original frame.
"""

from __future__ import annotations

import json
from math import factorial
from dataclasses import dataclass, field

import numpy as np

from .errors import (CalibrationError, NonConvergenceError, ParameterError,
                     PreconditionError)
from .lattice import (SHIFTED, STANDARD, SpectralField, coeffs_to_grid, derivative,
                      derivative_symbol, fast_len, grid_to_coeffs, multi_indices,
                      multiply, norm, shift_phase, synthesize_coeffs, to_grid)
from .potentials import project_potential
from .symbols import (ComplexDirection, OperatorParams, bdot, check_lattice_frame,
                      symbol_on_field)

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 200


@dataclass(frozen=True)
class BetaPolicy:
    """Admissible lower bound on ``|Im theta|`` for a given potential.

    ``beta0 = max(1, S, 2 C_cal ||q||_inf)``; solves run at ``margin * beta0``.
    """

    beta0: float
    C_cal: float
    margin: float = 1.25
    q_sup: float = 0.0
    S: float = 1.0
    beta_cal: float = 0.0

    def __post_init__(self):
        if self.beta0 < 1 or self.beta0 < self.S - 1e-12:
            raise ParameterError("beta0 must dominate 1 and S")
        if self.margin < 1:
            raise ParameterError("margin must be at least 1")

    @property
    def beta_operating(self):
        return self.margin * self.beta0

    def to_dict(self):
        return {"beta0": self.beta0, "C_cal": self.C_cal, "margin": self.margin,
                "q_sup": self.q_sup, "S": self.S, "beta_cal": self.beta_cal}


@dataclass(frozen=True, eq=False)
class CgoSolution:
    """A solved remainder together with the direction and frame it belongs to.

    ``theta`` is expressed in the rotated frame; ``frame`` is ``Q``.
    """

    theta: ComplexDirection
    p: SpectralField
    params: OperatorParams
    frame: np.ndarray = field(default_factory=lambda: np.eye(3))
    iterations: int = 0
    kappas: tuple = ()
    increments: tuple = ()
    residual_norm: float = 0.0
    relative_residual: float = 0.0
    truncation_tail: float = 0.0
    pair: object = None
    which: int | None = None

    @property
    def beta(self):
        return self.theta.im_mag

    @property
    def theta_original(self):
        return np.asarray(self.frame).T @ self.theta.theta

    def summary(self):
        return {"iterations": self.iterations, "residual": self.residual_norm,
                "p_l2": self.p.l2(), "truncation_tail": self.truncation_tail}


# ---------------------------------------------------------------------------
# forward operator


def apply_forward_symbol(p, theta, gamma):
    """``Delta_theta^2 p`` by coefficientwise multiplication with ``W``."""
    return p.with_coeffs(symbol_on_field(p, theta, gamma) * p.coeffs)


def _directional(f, th, order):
    # (theta . grad)^order f, built from the multi-index derivative op
    out = np.zeros_like(f.coeffs)
    for alpha in multi_indices(order):
        mult = 1.0
        for j, a in enumerate(alpha):
            mult *= th[j] ** a
        w = factorial(order) / np.prod([factorial(a) for a in alpha])
        out = out + w * mult * derivative(f, alpha).coeffs
    return out


def faddeev_operator_expanded(p, theta, gamma):
    """The conjugated operator applied term by term with derivative fields.

    ``e^{-i theta.x} (Delta^2 + gamma Delta - k^4) e^{i theta.x}`` expands to
    seven differential terms once ``theta.theta`` is substituted for ``k``.
    """
    th = theta.theta if isinstance(theta, ComplexDirection) else np.asarray(theta, complex)
    S = complex(bdot(th, th))
    lap = sum(derivative(p, a).coeffs for a in ((2, 0, 0), (0, 2, 0), (0, 0, 2)))
    bilap = sum(derivative(p, a).coeffs * w for a, w in
                (((4, 0, 0), 1), ((0, 4, 0), 1), ((0, 0, 4), 1), ((2, 2, 0), 2),
                 ((2, 0, 2), 2), ((0, 2, 2), 2)))
    d1 = _directional(p, th, 1)
    d2 = _directional(p, th, 2)
    # Delta (theta . grad) p: third-order mixed terms
    lap_d1 = np.zeros_like(p.coeffs)
    for j in range(3):
        for i in range(3):
            alpha = [0, 0, 0]
            alpha[i] += 2
            alpha[j] += 1
            lap_d1 = lap_d1 + th[j] * derivative(p, alpha).coeffs
    out = (bilap - 4j * S * d1 - 2 * S * lap - 4 * d2 + 4j * lap_d1
           + gamma * lap + 2j * gamma * d1)
    return p.with_coeffs(out)


# ---------------------------------------------------------------------------
# fixed point


class _Trace:
    def __init__(self, sink):
        self._own = False
        self._fh = None
        if sink is None:
            return
        if hasattr(sink, "write"):
            self._fh = sink
        else:
            self._fh = open(sink, "w")
            self._own = True

    def emit(self, rec):
        if self._fh is not None:
            self._fh.write(json.dumps(rec) + "\n")

    def close(self):
        if self._own:
            self._fh.close()


def solve_remainder(q, theta, params=None, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER,
                    beta0=None, trace=None, frame=None, check_residual=True, pad=2):
    """Solve ``Delta_theta^2 p + q p = -q`` on the shifted lattice.

    Parameters
    ----------
    q : SpectralField
        Standard-lattice potential, already expressed in the frame of ``theta``.
    theta : ComplexDirection
        Direction with ``Im theta`` along the shift axis.
    params : OperatorParams
    tol : float
        Stop when the L2 norm of an increment drops below this.
    max_iter : int
    beta0 : float, optional
        If given, ``|Im theta| < beta0`` raises ``PreconditionError``.
    trace : path or file-like, optional
        Receives one JSON line per iteration and a final summary line.
    frame : (3, 3) array, optional
        Stored on the solution so points can be mapped into this frame.
    check_residual : bool
        Recompute the residual with an exact product after convergence.

    Returns
    -------
    CgoSolution
    """
    params = params or OperatorParams()
    theta = theta if isinstance(theta, ComplexDirection) else ComplexDirection(theta)
    if q.kind != STANDARD:
        raise ParameterError("potential must be a standard-lattice field")
    check_lattice_frame(theta)
    if beta0 is not None and theta.im_mag < beta0:
        raise PreconditionError(f"|Im theta| = {theta.im_mag:.6g} below beta0 = {beta0:.6g}")
    R, N = q.R, q.N
    p = SpectralField.zeros(R, N, SHIFTED)
    W = symbol_on_field(p, theta, params.gamma)
    sink = _Trace(trace)
    # padded grid: the product of band-N factors truncated to band N is exact here
    M = fast_len(max(pad * (2 * N + 1), 3 * N + 1))
    Vq = to_grid(q, M)
    phase = shift_phase(R, M)
    rhs = grid_to_coeffs(Vq * phase, N, R)
    cur = np.zeros_like(rhs)
    incs, kappas = [], []
    converged = False
    n = 0
    try:
        for n in range(1, max_iter + 1):
            if np.any(cur):
                qp = grid_to_coeffs(Vq * coeffs_to_grid(cur, N, R, M), N, R)
                new = -(rhs + qp) / W
            else:
                new = -rhs / W
            inc = float(np.sqrt(np.sum(np.abs(new - cur) ** 2)))
            kappa = inc / incs[-1] if incs and incs[-1] > 0 else None
            incs.append(inc)
            if kappa is not None:
                kappas.append(kappa)
            sink.emit({"n": n, "increment_norm": inc, "kappa": kappa})
            cur = new
            if inc <= tol:
                converged = True
                break
        if not converged:
            raise NonConvergenceError(
                f"no convergence within {max_iter} iterations (last increment {incs[-1]:.3e})",
                kappas)
        p = p.with_coeffs(cur)
        res, rel, tail = _residual(q, p, W, rhs) if check_residual else (0.0, 0.0, 0.0)
        sol = CgoSolution(theta, p, params, np.eye(3) if frame is None else np.asarray(frame),
                          n, tuple(kappas), tuple(incs), res, rel, tail)
        sink.emit(sol.summary())
    finally:
        sink.close()
    return sol


def _residual(q, p, W, rhs):
    """Residual of the coefficient equation with an independently computed product."""
    full = multiply(q, p)                       # exact, band 2N
    N = p.N
    inner = full.resized(N).coeffs
    qn = float(np.sqrt(np.sum(np.abs(rhs) ** 2)))
    r = W * p.coeffs + rhs + inner
    res = float(np.sqrt(np.sum(np.abs(r) ** 2)))
    tail2 = full.l2() ** 2 - float(np.sum(np.abs(inner) ** 2))
    return res, res / qn if qn > 0 else 0.0, float(np.sqrt(max(tail2, 0.0)))


def solve_pair_member(pot, pair, which, R, N, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER,
                      beta0=None, trace=None, check_residual=True):
    """Solve for one member of a direction pair using the pair's rotated frame."""
    Q = pair.frame
    theta = pair.member(which).rotated(Q)
    if pot.is_zero:
        sol = plane_wave_solution(theta, pair.params, R, N, frame=Q)
    else:
        q = project_potential(pot, R, N, frame=Q)
        sol = solve_remainder(q, theta, pair.params, tol, max_iter, beta0, trace,
                              frame=Q, check_residual=check_residual)
    return CgoSolution(sol.theta, sol.p, sol.params, sol.frame, sol.iterations, sol.kappas,
                       sol.increments, sol.residual_norm, sol.relative_residual,
                       sol.truncation_tail, pair, which)


def plane_wave_solution(theta, params, R, N, frame=None):
    """The solution for ``q = 0``: ``p = 0``."""
    theta = theta if isinstance(theta, ComplexDirection) else ComplexDirection(theta)
    return CgoSolution(theta, SpectralField.zeros(R, N, SHIFTED), params,
                       np.eye(3) if frame is None else np.asarray(frame))


def derivative_norm_profile(sol):
    """Largest ``||D^alpha p||_{L2}`` over multi-indices of each total order 0..4."""
    out = []
    for order in range(5):
        best = 0.0
        for alpha in multi_indices(order):
            c = sol.p.coeffs * derivative_symbol(sol.p, alpha)
            best = max(best, float(np.sqrt(np.sum(np.abs(c) ** 2))))
        out.append(best)
    return out


# ---------------------------------------------------------------------------
# calibration


def _probe_operator(q, theta, gamma, N):
    """Return ``A`` and its adjoint for ``g -> P_N(q W^{-1} g)`` on band ``N``."""
    qn = q.resized(N)
    M = fast_len(3 * N + 1)
    R = q.R
    Vq = to_grid(qn, M)
    Winv = 1.0 / symbol_on_field(SpectralField.zeros(R, N, SHIFTED), theta, gamma)

    def A(g):
        return grid_to_coeffs(Vq * coeffs_to_grid(g * Winv, N, R, M), N, R)

    def AH(h):
        return np.conj(Winv) * grid_to_coeffs(np.conj(Vq) * coeffs_to_grid(h, N, R, M), N, R)

    return A, AH


def operator_norm_estimate(q, theta, gamma, probes, power_steps=2):
    """Norm of ``g -> q Delta_theta^{-2} g`` estimated from a probe batch."""
    N = (probes.shape[-1] - 1) // 2
    A, AH = _probe_operator(q, theta, gamma, N)
    g = probes
    axes = (-3, -2, -1)
    for _ in range(power_steps):
        g = AH(A(g))
        g = g / np.sqrt(np.sum(np.abs(g) ** 2, axis=axes, keepdims=True))
    Ag = A(g)
    num = np.sqrt(np.sum(np.abs(Ag) ** 2, axis=axes))
    den = np.sqrt(np.sum(np.abs(g) ** 2, axis=axes))
    return float(np.max(num / den))


def calibrate_beta0(q, params=None, n_probes=32, seed=0, band=8, margin=1.25,
                    target=0.5, bracket=(1e-2, 1e4), steps=18, power_steps=2):
    """Smallest ``beta`` at which the measured Neumann operator norm is ``<= target``.

    The probes are seeded random shifted-lattice fields reused for every
    trial ``beta`` so the bisection sees a deterministic function.
    """
    params = params or OperatorParams()
    S = params.S
    if not np.any(q.coeffs):
        return BetaPolicy(max(1.0, S), 0.0, margin, 0.0, S, 0.0)
    N = min(band, q.N)
    n = 2 * N + 1
    rng = np.random.default_rng(seed)
    probes = rng.standard_normal((n_probes, n, n, n)) + 1j * rng.standard_normal(
        (n_probes, n, n, n))

    def measured(beta):
        th = ComplexDirection.canonical(beta, S)
        return operator_norm_estimate(q, th, params.gamma, probes, power_steps)

    lo, hi = np.log(bracket[0]), np.log(bracket[1])
    if measured(np.exp(hi)) > target:
        raise CalibrationError(f"operator norm exceeds {target} even at beta = {bracket[1]}")
    if measured(np.exp(lo)) <= target:
        beta_cal = float(np.exp(lo))
    else:
        for _ in range(steps):
            mid = 0.5 * (lo + hi)
            if measured(np.exp(mid)) > target:
                lo = mid
            else:
                hi = mid
        beta_cal = float(np.exp(hi))
    q_sup = norm(q, "Linf")
    C = beta_cal / (2 * q_sup)
    beta0 = max(1.0, S, 2 * C * q_sup)
    return BetaPolicy(beta0, C, margin, q_sup, S, beta_cal)


# ---------------------------------------------------------------------------
# evaluation


@dataclass(frozen=True, eq=False)
class Envelope:
    """``a + P`` with ``a`` constant and ``P`` a shifted-lattice coefficient array.

    Stands for the function ``exp(i theta.x') (a + P(x'))`` in the rotated frame.
    """

    const: complex
    coeffs: np.ndarray

    def __add__(self, other):
        return Envelope(self.const + other.const, self.coeffs + other.coeffs)

    def scale(self, s):
        return Envelope(s * self.const, s * self.coeffs)


class EnvelopeAlgebra:
    """Derivatives of ``exp(i theta.x)(a + P)`` acting on envelopes."""

    def __init__(self, theta, R, N):
        self.th = theta.theta if isinstance(theta, ComplexDirection) else np.asarray(theta)
        z = SpectralField.zeros(R, N, SHIFTED)
        self.k = z.frequencies()
        self.R, self.N = R, N
        self.S = complex(bdot(self.th, self.th))
        k1, k2, k3 = self.k
        self._lap = -((k1 + self.th[0]) ** 2 + (k2 + self.th[1]) ** 2 + (k3 + self.th[2]) ** 2)

    def d(self, env, j):
        mult = 1j * (self.k[j] + self.th[j])
        return Envelope(1j * self.th[j] * env.const, mult * env.coeffs)

    def lap(self, env):
        return Envelope(-self.S * env.const, self._lap * env.coeffs)

    def values(self, envs, pts):
        """Envelope values (without the carrier) at frame points."""
        envs = list(envs)
        c = np.stack([e.coeffs for e in envs])
        vals = synthesize_coeffs(c, self.N, self.R, SHIFTED, pts)
        return vals + np.array([e.const for e in envs])[:, None]


def _frame_points(sol, pts):
    pts = np.atleast_2d(np.asarray(pts, float))
    return pts @ np.asarray(sol.frame).T


def evaluate_all(sol, pts):
    """``u, grad u, Delta u, grad Delta u, Delta^2 u`` at points in the original frame.

    Returns a dict of arrays; gradients have shape ``(P, 3)``.
    """
    xp = _frame_points(sol, pts)
    alg = EnvelopeAlgebra(sol.theta, sol.p.R, sol.p.N)
    base = Envelope(1.0 + 0j, sol.p.coeffs)
    lap = alg.lap(base)
    envs = ([base] + [alg.d(base, j) for j in range(3)] + [lap]
            + [alg.d(lap, j) for j in range(3)] + [alg.lap(lap)])
    vals = alg.values(envs, xp)
    carrier = np.exp(1j * (xp @ sol.theta.theta))
    vals = vals * carrier[None, :]
    Q = np.asarray(sol.frame)
    return {"u": vals[0], "grad": vals[1:4].T @ Q, "lap": vals[4],
            "grad_lap": vals[5:8].T @ Q, "bilap": vals[8]}


def evaluate_u(sol, pts):
    """``exp(i theta.x)(1 + p(x))``."""
    xp = _frame_points(sol, pts)
    if not np.any(sol.p.coeffs):
        pv = np.zeros(len(xp), complex)
    else:
        pv = synthesize_coeffs(sol.p.coeffs, sol.p.N, sol.p.R, SHIFTED, xp)
    return np.exp(1j * (xp @ sol.theta.theta)) * (1.0 + pv)


def evaluate_grad_u(sol, pts):
    return evaluate_all(sol, pts)["grad"]


def evaluate_lap_u(sol, pts):
    return evaluate_all(sol, pts)["lap"]


def evaluate_grad_lap_u(sol, pts):
    return evaluate_all(sol, pts)["grad_lap"]


def pde_residual(sol, pot, pts):
    """``Delta^2 u + gamma Delta u - k^4 u + q u`` pointwise (original frame)."""
    ev = evaluate_all(sol, pts)
    g, k = sol.params.gamma, sol.params.k
    return ev["bilap"] + g * ev["lap"] - k ** 4 * ev["u"] + pot(pts) * ev["u"]


def remainder_values(sol, pts):
    """``p`` at points in the original frame (true values, phase included)."""
    xp = _frame_points(sol, pts)
    return synthesize_coeffs(sol.p.coeffs, sol.p.N, sol.p.R, SHIFTED, xp)
