"""LSTM dynamical model and its incremental-stability analysis.

The model is the standard gated recurrence

    c+ = sigma(W_f u + U_f h + b_f) o c
       + sigma(W_i u + U_i h + b_i) o tanh(W_c u + U_c h + b_c)
    h+ = sigma(W_o u + U_o h + b_o) o tanh(c+)
    y  = W_y h + b_y

Besides simulation, this module computes worst-case gate bounds, the
2x2 contraction matrix of the state-increment dynamics, the associated
spectral-radius / Jury certificates, and the incremental Lyapunov
function used downstream for constraint tightening.
"""

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, InstabilityError
from .numerics import (
    eig_extrema_spd,
    induced_inf_norm,
    induced_two_norm,
    solve_discrete_lyapunov,
    spectral_radius,
)


def sigmoid(z):
    """Numerically safe logistic function (no overflow for large |z|)."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out if out.ndim else float(out)


@dataclass
class LstmState:
    """Cell and hidden state of the network."""

    c: np.ndarray
    h: np.ndarray

    def as_vector(self):
        return np.concatenate([self.c, self.h])

    def copy(self):
        return LstmState(self.c.copy(), self.h.copy())


@dataclass
class LstmWeights:
    """All trainable parameters plus the normalized-input bound.

    ``u_range`` / ``y_range`` carry the physical (lo, hi) pairs used to
    normalize signals to [-1, 1]; they travel with the weights so a saved
    model is self-contained.
    """

    W_f: np.ndarray
    W_i: np.ndarray
    W_c: np.ndarray
    W_o: np.ndarray
    U_f: np.ndarray
    U_i: np.ndarray
    U_c: np.ndarray
    U_o: np.ndarray
    b_f: np.ndarray
    b_i: np.ndarray
    b_c: np.ndarray
    b_o: np.ndarray
    W_y: np.ndarray
    b_y: np.ndarray
    u_max: float = 1.0
    u_range: tuple | None = None
    y_range: tuple | None = None

    def __post_init__(self):
        for name in ("W_f", "W_i", "W_c", "W_o", "U_f", "U_i", "U_c", "U_o",
                     "b_f", "b_i", "b_c", "b_o", "W_y", "b_y"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        n, m = self.W_f.shape
        p = self.W_y.shape[0]
        for w in (self.W_i, self.W_c, self.W_o):
            if w.shape != (n, m):
                raise DimensionError("input-weight shapes disagree")
        for u in (self.U_f, self.U_i, self.U_c, self.U_o):
            if u.shape != (n, n):
                raise DimensionError("recurrent-weight shapes disagree")
        for b in (self.b_f, self.b_i, self.b_c, self.b_o):
            if b.shape != (n,):
                raise DimensionError("bias shapes disagree")
        if self.W_y.shape != (p, n) or self.b_y.shape != (p,):
            raise DimensionError("readout shapes disagree")
        if not self.u_max > 0:
            raise ValueError("u_max must be positive")

    @property
    def n(self):
        return self.W_f.shape[0]

    @property
    def m(self):
        return self.W_f.shape[1]

    @property
    def p(self):
        return self.W_y.shape[0]

    def zero_state(self):
        return LstmState(np.zeros(self.n), np.zeros(self.n))

    def copy(self):
        return LstmWeights(
            self.W_f.copy(), self.W_i.copy(), self.W_c.copy(), self.W_o.copy(),
            self.U_f.copy(), self.U_i.copy(), self.U_c.copy(), self.U_o.copy(),
            self.b_f.copy(), self.b_i.copy(), self.b_c.copy(), self.b_o.copy(),
            self.W_y.copy(), self.b_y.copy(), self.u_max, self.u_range, self.y_range)


MATRIX_FIELDS = ("W_f", "W_i", "W_c", "W_o", "U_f", "U_i", "U_c", "U_o",
                 "b_f", "b_i", "b_c", "b_o", "W_y", "b_y")


def step(w, x, u):
    """One state update. Warns (does not reject) if u leaves its box."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if u.shape != (w.m,):
        raise DimensionError(f"input shape {u.shape} != ({w.m},)")
    if np.max(np.abs(u)) > w.u_max * (1.0 + 1e-12):
        warnings.warn("input exceeds u_max; upstream saturation expected", stacklevel=2)
    f = sigmoid(w.W_f @ u + w.U_f @ x.h + w.b_f)
    i = sigmoid(w.W_i @ u + w.U_i @ x.h + w.b_i)
    g = np.tanh(w.W_c @ u + w.U_c @ x.h + w.b_c)
    o = sigmoid(w.W_o @ u + w.U_o @ x.h + w.b_o)
    c_next = f * x.c + i * g
    h_next = o * np.tanh(c_next)
    return LstmState(c_next, h_next)


def output(w, x):
    """Affine readout of the hidden state."""
    if x.h.shape != (w.n,):
        raise DimensionError(f"state shape {x.h.shape} != ({w.n},)")
    return w.W_y @ x.h + w.b_y


def simulate(w, x0, u_seq):
    """Roll the model over an input sequence; returns (outputs, final state).

    ``outputs[k]`` is the readout *before* applying ``u_seq[k]`` (the model
    is strictly proper).
    """
    x = x0.copy()
    u_seq = np.atleast_2d(np.asarray(u_seq, dtype=float).reshape(len(u_seq), -1))
    ys = np.empty((len(u_seq), w.p))
    for k, u in enumerate(u_seq):
        ys[k] = output(w, x)
        x = step(w, x, u)
    return ys, x


@dataclass
class GateBounds:
    """Worst-case gate magnitudes over the invariant operating sets."""

    sigma_f: float
    sigma_i: float
    sigma_o: float
    sigma_c: float
    sigma_x: float
    alpha: float
    beta: float


def gate_bounds(w):
    """Gate bounds and the increment-gain scalars alpha, beta."""
    sf = float(sigmoid(induced_inf_norm(_gate_block(w.W_f, w.U_f, w.b_f, w.u_max))))
    si = float(sigmoid(induced_inf_norm(_gate_block(w.W_i, w.U_i, w.b_i, w.u_max))))
    so = float(sigmoid(induced_inf_norm(_gate_block(w.W_o, w.U_o, w.b_o, w.u_max))))
    sc = float(np.tanh(induced_inf_norm(_gate_block(w.W_c, w.U_c, w.b_c, w.u_max))))
    c_rad = si * sc / (1.0 - sf)
    sx = float(np.tanh(c_rad))
    alpha = 0.25 * induced_two_norm(w.U_f) * c_rad \
        + si * induced_two_norm(w.U_c) \
        + 0.25 * induced_two_norm(w.U_i) * sc
    beta = 0.25 * induced_two_norm(w.W_f) * c_rad \
        + si * induced_two_norm(w.W_c) \
        + 0.25 * induced_two_norm(w.W_i) * sc
    return GateBounds(sf, si, so, sc, sx, alpha, beta)


def _gate_block(w_in, u_rec, b, u_max):
    return np.hstack([w_in * u_max, u_rec, b.reshape(-1, 1)])


def cell_radius(w, bounds=None):
    """Infinity-norm radius of the invariant set for the cell state."""
    g = bounds or gate_bounds(w)
    return g.sigma_i * g.sigma_c / (1.0 - g.sigma_f)


@dataclass
class StabilityCertificate:
    """Contraction certificate of the state-increment dynamics.

    ``certified`` tracks rho(A_delta) < 1; the Jury margins r1, r2 give the
    equivalent pair of inequalities used as soft training penalties.
    The Lyapunov fields (P_s onward) are filled by incremental_lyapunov.
    """

    bounds: GateBounds
    A_delta: np.ndarray
    B_delta: np.ndarray
    rho_A: float
    r1: float
    r2: float
    certified: bool
    Q_s: np.ndarray | None = None
    P_s: np.ndarray | None = None
    rho_s: float | None = None
    c_sl: float | None = None
    c_su: float | None = None
    c_s: np.ndarray | None = None
    cell_radius: float = field(default=0.0)


def contraction_matrices(w, bounds=None):
    """(A_delta, B_delta): componentwise gains of the increment dynamics."""
    g = bounds or gate_bounds(w)
    uo = induced_two_norm(w.U_o)
    wo = induced_two_norm(w.W_o)
    a = np.array([
        [g.sigma_f, g.alpha],
        [g.sigma_o * g.sigma_f, g.alpha * g.sigma_o + 0.25 * g.sigma_x * uo],
    ])
    b = np.array([[g.beta], [g.beta * g.sigma_o + 0.25 * g.sigma_x * wo]])
    return a, b


def jury_margins(w, bounds=None):
    """(r1, r2): both negative iff rho(A_delta) < 1."""
    g = bounds or gate_bounds(w)
    uo = induced_two_norm(w.U_o)
    r1 = -1.0 + g.sigma_f + g.alpha * g.sigma_o + 0.25 * g.sigma_x * uo \
        - 0.25 * g.sigma_f * g.sigma_x * uo
    r2 = 0.25 * g.sigma_f * g.sigma_x * uo - 1.0
    return r1, r2


def delta_iss_check(w):
    """Build the contraction certificate; ``certified`` marks acceptance."""
    g = gate_bounds(w)
    a, b = contraction_matrices(w, g)
    rho = spectral_radius(a)
    r1, r2 = jury_margins(w, g)
    return StabilityCertificate(
        bounds=g, A_delta=a, B_delta=b, rho_A=rho, r1=r1, r2=r2,
        certified=rho < 1.0, cell_radius=cell_radius(w, g))


def incremental_lyapunov(w, q_s=None):
    """Complete the certificate with the incremental Lyapunov data.

    Solves A_delta^T P_s A_delta - P_s = -Q_s and derives the contraction
    rate rho_s, the norm-equivalence constants and the per-output
    sensitivity vector c_s.
    """
    cert = delta_iss_check(w)
    if not cert.certified:
        raise InstabilityError(f"rho(A_delta) = {cert.rho_A:.4f} >= 1, model not certified")
    q_s = np.asarray(q_s, dtype=float) if q_s is not None else 1000.0 * np.eye(2)
    p_s = solve_discrete_lyapunov(cert.A_delta, q_s)
    lam_min, lam_max = eig_extrema_spd(p_s)
    qmin, _ = eig_extrema_spd(q_s)
    cert.Q_s = q_s
    cert.P_s = p_s
    cert.rho_s = float(np.sqrt(1.0 - qmin / lam_max))
    cert.c_sl = float(np.sqrt(lam_min))
    cert.c_su = float(np.sqrt(lam_max))
    cert.c_s = np.linalg.norm(w.W_y, axis=1) / np.sqrt(lam_min)
    return cert


def v_s(cert, x_a, x_b):
    """Incremental Lyapunov value of a state pair."""
    if cert.P_s is None:
        raise ValueError("certificate has no Lyapunov data; call incremental_lyapunov")
    v = np.array([np.linalg.norm(x_a.c - x_b.c), np.linalg.norm(x_a.h - x_b.h)])
    return float(np.sqrt(v @ cert.P_s @ v))


def save_weights(w, path, observer=None):
    """Serialize weights (and optionally an observer section) to JSON."""
    doc = {name: getattr(w, name).tolist() for name in MATRIX_FIELDS}
    doc.update(n=w.n, m=w.m, p=w.p, u_max=w.u_max)
    doc["u_range"] = list(w.u_range) if w.u_range is not None else None
    doc["y_range"] = list(w.y_range) if w.y_range is not None else None
    if observer is not None:
        doc["observer"] = observer
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


def load_weights(path):
    """Inverse of save_weights; returns (weights, observer-dict-or-None)."""
    with open(path) as fh:
        doc = json.load(fh)
    kwargs = {name: np.asarray(doc[name], dtype=float) for name in MATRIX_FIELDS}
    w = LstmWeights(
        u_max=float(doc["u_max"]),
        u_range=tuple(doc["u_range"]) if doc.get("u_range") else None,
        y_range=tuple(doc["y_range"]) if doc.get("y_range") else None,
        **kwargs)
    return w, doc.get("observer")
