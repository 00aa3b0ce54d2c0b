"""Disturbance-augmented model and its gated state observer.

The model state is extended with an integrated output disturbance d so
constant plant-model offsets become estimable; the observer injects the
output innovation into the f/i/o gate preactivations and integrates the
innovation into d with saturation. A 3x3 contraction matrix A_d over
(cell error, hidden error, disturbance error) certifies convergence and
yields all constants consumed by the constraint-tightening controller.
"""

from dataclasses import dataclass, field

import numpy as np

from . import lstm
from .errors import DimensionError, DomainViolationError, GainSelectionError
from .lstm import LstmState, sigmoid
from .numerics import (
    eig_extrema_spd,
    induced_inf_norm,
    induced_two_norm,
    solve_discrete_lyapunov,
    spectral_radius,
)


@dataclass
class AugmentedState:
    """Model state plus the integrated output disturbance."""

    x: LstmState
    d: np.ndarray

    def copy(self):
        return AugmentedState(self.x.copy(), np.asarray(self.d, dtype=float).copy())

    def as_vector(self):
        return np.concatenate([self.x.c, self.x.h, self.d])


def augmented_output(w, chi):
    """y = W_y h + b_y + d."""
    return lstm.output(w, chi.x) + chi.d


def augmented_step(w, chi, u, w_k=None, d_max=None):
    """Advance the augmented model; d integrates the increment w_k."""
    d = np.asarray(chi.d, dtype=float)
    if w_k is not None:
        d = d + np.asarray(w_k, dtype=float)
    if d_max is not None and np.max(np.abs(d)) > d_max * (1.0 + 1e-12):
        raise DomainViolationError(
            f"disturbance magnitude {np.max(np.abs(d)):.4g} exceeds d_max={d_max}")
    return AugmentedState(lstm.step(w, chi.x, u), d)


@dataclass
class ObserverSpec:
    """Observer gains plus every derived convergence constant.

    Treated as immutable once populated by select_gains/derive_constants.
    """

    L_f: np.ndarray
    L_i: np.ndarray
    L_o: np.ndarray
    L_d: np.ndarray
    d_max: float
    sigma_hat_f: float = 0.0
    sigma_hat_i: float = 0.0
    sigma_hat_o: float = 0.0
    alpha_hat: float = 0.0
    beta_hat: float = 0.0
    gamma_hat: float = 0.0
    A_d: np.ndarray | None = None
    P_o: np.ndarray | None = None
    rho_o: float | None = None
    c_ol: float | None = None
    c_ou: float | None = None
    c_o: np.ndarray | None = None
    L_mat: np.ndarray | None = None
    L_max: float | None = None
    w_bar: float = 0.0
    w_bar_analytic: float | None = None
    cell_radius_hat: float = 0.0

    def __post_init__(self):
        for name in ("L_f", "L_i", "L_o", "L_d"):
            setattr(self, name, np.atleast_2d(np.asarray(getattr(self, name), dtype=float)))
        if not self.d_max > 0:
            raise ValueError("d_max must be positive")

    def to_dict(self):
        return {
            "L_f": self.L_f.tolist(), "L_i": self.L_i.tolist(),
            "L_o": self.L_o.tolist(), "L_d": self.L_d.tolist(),
            "d_max": self.d_max, "w_bar": self.w_bar,
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(L_f=doc["L_f"], L_i=doc["L_i"], L_o=doc["L_o"], L_d=doc["L_d"],
                   d_max=float(doc["d_max"]), w_bar=float(doc.get("w_bar", 0.0)))


def observer_step(w, spec, chi_hat, u, y_measured):
    """One observer update driven by the measured output.

    The innovation enters the forget/input/output gate preactivations;
    the disturbance estimate integrates it and is saturated at +-d_max.
    """
    u = np.atleast_1d(np.asarray(u, dtype=float))
    y_measured = np.atleast_1d(np.asarray(y_measured, dtype=float))
    if u.shape != (w.m,) or y_measured.shape != (w.p,):
        raise DimensionError("input/measurement shape mismatch")
    x, d = chi_hat.x, np.asarray(chi_hat.d, dtype=float)
    innov = y_measured - (w.W_y @ x.h + w.b_y + d)
    f = sigmoid(w.W_f @ u + w.U_f @ x.h + w.b_f + spec.L_f @ innov)
    i = sigmoid(w.W_i @ u + w.U_i @ x.h + w.b_i + spec.L_i @ innov)
    g = np.tanh(w.W_c @ u + w.U_c @ x.h + w.b_c)
    o = sigmoid(w.W_o @ u + w.U_o @ x.h + w.b_o + spec.L_o @ innov)
    c_next = f * x.c + i * g
    h_next = o * np.tanh(c_next)
    d_next = np.clip(d + spec.L_d @ innov, -spec.d_max, spec.d_max)
    return AugmentedState(LstmState(c_next, h_next), d_next)


def observer_matrices(w, spec):
    """Hatted worst-case gate bounds and the 3x3 error-contraction matrix.

    Coordinates of the error vector: (||c - chat||, ||h - hhat||, ||d - dhat||).
    Fills the sigma_hat/alpha_hat/beta_hat/gamma_hat/A_d fields of ``spec``
    and returns A_d.
    """
    g = lstm.gate_bounds(w)

    def hat_sigma(w_in, u_rec, b, l_gain):
        lw = l_gain @ w.W_y
        block = np.hstack([w_in * w.u_max, u_rec - lw, b.reshape(-1, 1),
                           lw, l_gain * spec.d_max, l_gain * spec.d_max])
        return float(sigmoid(induced_inf_norm(block)))

    sf = hat_sigma(w.W_f, w.U_f, w.b_f, spec.L_f)
    si = hat_sigma(w.W_i, w.U_i, w.b_i, spec.L_i)
    so = hat_sigma(w.W_o, w.U_o, w.b_o, spec.L_o)
    sc = g.sigma_c                      # no injection in the candidate gate
    c_rad = si * sc / (1.0 - sf)
    sx = float(np.tanh(c_rad))
    a_hat = 0.25 * c_rad * induced_two_norm(w.U_f - spec.L_f @ w.W_y) \
        + si * induced_two_norm(w.U_c) \
        + 0.25 * sc * induced_two_norm(w.U_i - spec.L_i @ w.W_y)
    b_hat = 0.25 * c_rad * induced_two_norm(spec.L_f) \
        + 0.25 * sc * induced_two_norm(spec.L_i)
    g_hat = so * a_hat + 0.25 * sx * induced_two_norm(w.U_o - spec.L_o @ w.W_y)
    p = w.p
    a_d = np.array([
        [sf, a_hat, b_hat],
        [so * sf, g_hat, so * b_hat + 0.25 * sx * induced_two_norm(spec.L_o)],
        [0.0, induced_two_norm(spec.L_d @ w.W_y),
         induced_two_norm(np.eye(p) - spec.L_d)],
    ])
    spec.sigma_hat_f, spec.sigma_hat_i, spec.sigma_hat_o = sf, si, so
    spec.alpha_hat, spec.beta_hat, spec.gamma_hat = a_hat, b_hat, g_hat
    spec.cell_radius_hat = c_rad
    spec.A_d = a_d
    return a_d


def _sensitivity_matrix(w, spec):
    """3x3 gain-to-innovation sensitivity used for the L_max constant."""
    g = lstm.gate_bounds(w)
    sc = g.sigma_c
    c_rad = spec.cell_radius_hat
    a_bar = 0.25 * c_rad * induced_two_norm(spec.L_f @ w.W_y) \
        + 0.25 * sc * induced_two_norm(spec.L_i @ w.W_y)
    b_bar = 0.25 * c_rad * induced_two_norm(spec.L_f) \
        + 0.25 * sc * induced_two_norm(spec.L_i)
    g_bar = 0.25 * float(np.tanh(c_rad))
    so = spec.sigma_hat_o
    return np.array([
        [0.0, a_bar, b_bar],
        [0.0, g_bar * induced_two_norm(spec.L_o @ w.W_y) + so * a_bar,
         g_bar * induced_two_norm(spec.L_o) + so * b_bar],
        [0.0, induced_two_norm(spec.L_d @ w.W_y), induced_two_norm(spec.L_d)],
    ])


def derive_constants(w, spec, q_o=None, w_max=0.0, w_bar=None):
    """Populate P_o, rho_o, the norm constants, L_max and w_bar.

    ``w_bar`` overrides the analytic disturbance-increment bound when
    given (the analytic corner bound over the full invariant box is very
    conservative); the analytic value is always reported alongside.
    """
    if spec.A_d is None:
        observer_matrices(w, spec)
    if spectral_radius(spec.A_d) >= 1.0:
        raise GainSelectionError(f"rho(A_d) = {spectral_radius(spec.A_d):.4f} >= 1")
    q_o = np.asarray(q_o, dtype=float) if q_o is not None else 1000.0 * np.eye(3)
    p_o = solve_discrete_lyapunov(spec.A_d, q_o)
    lam_min, lam_max = eig_extrema_spd(p_o)
    qmin, _ = eig_extrema_spd(q_o)
    spec.P_o = p_o
    spec.rho_o = float(np.sqrt(1.0 - qmin / lam_max))
    spec.c_ol = float(np.sqrt(lam_min))
    spec.c_ou = float(np.sqrt(lam_max))
    w_y_bar = np.hstack([np.zeros((w.p, w.n)), w.W_y, np.eye(w.p)])
    spec.c_o = np.linalg.norm(w_y_bar, axis=1) / np.sqrt(lam_min)
    spec.L_mat = _sensitivity_matrix(w, spec)
    spec.L_max = induced_two_norm(spec.L_mat) / np.sqrt(lam_min)
    # Worst-case one-step Lyapunov inflation from the disturbance increment,
    # evaluated at the corner of the invariant error box (P_o and A_d are
    # entrywise nonnegative, so the corner attains the maximum).
    cert = lstm.delta_iss_check(w)
    e_corner = np.array([cert.cell_radius + spec.cell_radius_hat, 2.0, 2.0 * spec.d_max])
    e3 = np.array([0.0, 0.0, 1.0])
    cross = float(e_corner @ spec.A_d.T @ p_o @ e3)
    spec.w_bar_analytic = float(np.sqrt(max(2.0 * cross * w_max + w_max ** 2 * p_o[2, 2], 0.0)))
    spec.w_bar = float(w_bar) if w_bar is not None else spec.w_bar_analytic
    return spec


def select_gains(w, d_max=0.1, strategy="suboptimal", l_d=0.1, q_o=None,
                 w_max=0.0, w_bar=None, seed=0, budget=10000):
    """Pick observer gains and return the fully populated spec.

    "suboptimal": zero state-injection gains and L_d = l_d I (l_d in (0,2)),
    so the error spectrum is the model's contraction spectrum plus |l_d - 1|.
    "search": random perturbations around that choice keeping rho(A_d) < 1.
    """
    cert = lstm.delta_iss_check(w)
    if not cert.certified:
        raise GainSelectionError("model is not certified contractive")
    n, p = w.n, w.p
    if strategy == "suboptimal":
        if not 0.0 < l_d < 2.0:
            raise GainSelectionError(f"l_d = {l_d} outside (0, 2)")
        spec = ObserverSpec(L_f=np.zeros((n, p)), L_i=np.zeros((n, p)),
                            L_o=np.zeros((n, p)), L_d=l_d * np.eye(p), d_max=d_max)
    elif strategy == "search":
        rng = np.random.default_rng(seed)
        best_spec, best_rho = None, np.inf
        base = select_gains(w, d_max, "suboptimal", l_d, q_o, w_max, w_bar)
        best_spec, best_rho = base, spectral_radius(base.A_d)
        for _ in range(budget):
            cand = ObserverSpec(
                L_f=rng.normal(0.0, 0.05, (n, p)), L_i=rng.normal(0.0, 0.05, (n, p)),
                L_o=rng.normal(0.0, 0.05, (n, p)),
                L_d=np.eye(p) * rng.uniform(0.0, 2.0), d_max=d_max)
            rho = spectral_radius(observer_matrices(w, cand))
            if rho < best_rho:
                best_spec, best_rho = cand, rho
        if best_rho >= 1.0:
            raise GainSelectionError("search budget exhausted without rho(A_d) < 1")
        spec = best_spec
    else:
        raise ValueError(f"unknown strategy {strategy!r}")
    observer_matrices(w, spec)
    return derive_constants(w, spec, q_o=q_o, w_max=w_max, w_bar=w_bar)


def v_o(spec, chi_hat, chi):
    """Observer incremental Lyapunov value of an (estimate, truth) pair."""
    if spec.P_o is None:
        raise ValueError("spec has no Lyapunov data; call derive_constants")
    e = np.array([np.linalg.norm(chi_hat.x.c - chi.x.c),
                  np.linalg.norm(chi_hat.x.h - chi.x.h),
                  np.linalg.norm(np.atleast_1d(chi_hat.d) - np.atleast_1d(chi.d))])
    return float(np.sqrt(e @ spec.P_o @ e))
