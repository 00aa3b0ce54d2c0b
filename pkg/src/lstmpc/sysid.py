"""Identification pipeline: excitation design, dataset handling, training.

The trainer is plain backpropagation-through-time in numpy with an Adam
update, and the loss carries soft penalties on the two stability margins
r1, r2 so the final network is certifiable. Training only terminates
once both margins are negative.
"""

import csv
import json
import pathlib
from dataclasses import dataclass, field

import numpy as np

from . import lstm, plant
from .errors import TrainingError, UndefinedMetricError
from .lstm import LstmWeights, sigmoid


def generate_excitation(seed, levels_range, hold_range, total_steps):
    """Multilevel pseudo-random staircase signal.

    Levels are uniform in ``levels_range``; each level is held for a
    uniformly random integer number of steps in ``hold_range`` (inclusive).
    """
    lo, hi = levels_range
    h_lo, h_hi = int(hold_range[0]), int(hold_range[1])
    if hi < lo or h_hi < h_lo or h_lo < 1 or total_steps < 1:
        raise ValueError("empty excitation ranges")
    rng = np.random.default_rng(seed) if not isinstance(seed, np.random.Generator) else seed
    out = np.empty(total_steps)
    k = 0
    while k < total_steps:
        hold = int(rng.integers(h_lo, h_hi + 1))
        out[k:k + hold] = rng.uniform(lo, hi)
        k += hold
    return out


@dataclass
class Dataset:
    """Normalized input/output sequences with their train/val/test split."""

    train: list
    val: list
    test: list
    normalizer: plant.Normalizer

    @property
    def all_sequences(self):
        return list(self.train) + list(self.val) + list(self.test)


def generate_dataset(params=None, seed=0, n_train=10, n_val=3, n_test=2,
                     steps=1500, t_s=plant.T_S, hold_range=(10, 100)):
    """Excite the pH plant and package the sampled responses.

    Every sequence starts at the nominal equilibrium with the buffer flow
    held at its nominal value; u and y are normalized by the min/max seen
    in the training split.
    """
    params = params or plant.PhParams()
    raws = []
    for s in range(n_train + n_val + n_test):
        u_phi = generate_excitation(seed * 1000 + s, plant.U_PHI_RANGE, hold_range, steps)
        x = plant.equilibrium(params)
        y_phi = np.empty(steps)
        for k in range(steps):
            y_phi[k] = plant.measure_ph(params, x)
            x = plant.plant_step(params, x, u_phi[k], params.q2_nominal, t_s)
        raws.append((u_phi, y_phi))
    u_train = np.concatenate([u for u, _ in raws[:n_train]])
    y_train = np.concatenate([y for _, y in raws[:n_train]])
    nrm = plant.Normalizer(u_train.min(), u_train.max(), y_train.min(), y_train.max())
    seqs = [(nrm.normalize_u(u), nrm.normalize_y(y)) for u, y in raws]
    return Dataset(train=seqs[:n_train],
                   val=seqs[n_train:n_train + n_val],
                   test=seqs[n_train + n_val:],
                   normalizer=nrm)


def save_dataset(ds, directory, t_s=plant.T_S):
    """One CSV per sequence (t, u_raw, y_raw) plus a JSON manifest."""
    directory = pathlib.Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {"normalization": {"u_lo": ds.normalizer.u_lo, "u_hi": ds.normalizer.u_hi,
                                  "y_lo": ds.normalizer.y_lo, "y_hi": ds.normalizer.y_hi},
                "splits": {}}
    idx = 0
    for split in ("train", "val", "test"):
        names = []
        for u, y in getattr(ds, split):
            name = f"seq_{idx:03d}.csv"
            with open(directory / name, "w", newline="") as fh:
                wr = csv.writer(fh)
                wr.writerow(["t", "u_raw", "y_raw"])
                u_raw = ds.normalizer.denormalize_u(u)
                y_raw = ds.normalizer.denormalize_y(y)
                for k in range(len(u)):
                    wr.writerow([k * t_s, repr(float(u_raw[k])), repr(float(y_raw[k]))])
            names.append(name)
            idx += 1
        manifest["splits"][split] = names
    with open(directory / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1)


def load_dataset(directory):
    directory = pathlib.Path(directory)
    with open(directory / "manifest.json") as fh:
        manifest = json.load(fh)
    nz = manifest["normalization"]
    nrm = plant.Normalizer(nz["u_lo"], nz["u_hi"], nz["y_lo"], nz["y_hi"])
    splits = {}
    for split, names in manifest["splits"].items():
        seqs = []
        for name in names:
            rows = np.loadtxt(directory / name, delimiter=",", skiprows=1)
            seqs.append((nrm.normalize_u(rows[:, 1]), nrm.normalize_y(rows[:, 2])))
        splits[split] = seqs
    return Dataset(train=splits["train"], val=splits["val"], test=splits["test"],
                   normalizer=nrm)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 1000
    lambda1: float = 0.03
    lambda2: float = 0.02
    washout: int = 50
    seed: int = 0
    n_neurons: int = 5
    init_scale: float = 0.1
    extension_factor: int = 5   # hard cap on the certification-driven overrun

    def __post_init__(self):
        if self.epochs < 0 or self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("epochs and penalty weights must be nonnegative")


# Order in which weight tensors are packed for the optimizer.
_TENSORS = lstm.MATRIX_FIELDS


def _stacked(w):
    wz = np.vstack([w.W_f, w.W_i, w.W_c, w.W_o])
    uz = np.vstack([w.U_f, w.U_i, w.U_c, w.U_o])
    bz = np.concatenate([w.b_f, w.b_i, w.b_c, w.b_o])
    return wz, uz, bz


def _forward(w, u_seq):
    """Unrolled forward pass from the zero state; returns caches for BPTT."""
    t = len(u_seq)
    n = w.n
    wz, uz, bz = _stacked(w)
    h = np.zeros((t, n))
    c = np.zeros((t, n))
    fio = np.zeros((t - 1, 4 * n))   # gate activations per transition
    tc = np.zeros((t - 1, n))        # tanh of the updated cell
    u2 = np.atleast_2d(np.asarray(u_seq, dtype=float).reshape(t, -1))
    pre = u2 @ wz.T + bz             # input contribution, all steps at once
    for k in range(t - 1):
        z = pre[k] + uz @ h[k]
        f = sigmoid(z[:n])
        i = sigmoid(z[n:2 * n])
        g = np.tanh(z[2 * n:3 * n])
        o = sigmoid(z[3 * n:])
        c[k + 1] = f * c[k] + i * g
        tc[k] = np.tanh(c[k + 1])
        h[k + 1] = o * tc[k]
        fio[k, :n] = f
        fio[k, n:2 * n] = i
        fio[k, 2 * n:3 * n] = g
        fio[k, 3 * n:] = o
    y_hat = h @ w.W_y.T + w.b_y
    return y_hat, h, c, fio, tc, u2


def predict(w, u_seq):
    """Open-loop prediction from the zero initial state."""
    return _forward(w, u_seq)[0]


def loss(w, u_seq, y_seq, cfg):
    """Training loss (MSE past washout + stability-margin penalties) and
    its gradient with respect to every weight tensor."""
    t = len(u_seq)
    n = w.n
    y_seq = np.asarray(y_seq, dtype=float).reshape(t, -1)
    y_hat, h, c, fio, tc, u2 = _forward(w, u_seq)
    mask = np.arange(t) >= cfg.washout
    n_eval = int(mask.sum())
    if n_eval == 0:
        raise TrainingError("washout leaves no evaluated steps")
    err = np.where(mask[:, None], y_hat - y_seq, 0.0)
    if not np.all(np.isfinite(err)):
        raise TrainingError("non-finite forward pass")
    mse = float(np.sum(err ** 2)) / n_eval

    grads = {name: np.zeros_like(getattr(w, name)) for name in _TENSORS}
    scale = 2.0 / n_eval
    grads["W_y"] = scale * err.T @ h
    grads["b_y"] = scale * err.sum(axis=0)
    out_grad = scale * err @ w.W_y

    _, uz, _ = _stacked(w)
    dz_all = np.zeros((t - 1, 4 * n))
    dh = out_grad[t - 1].copy()
    dc = np.zeros(n)
    for k in range(t - 2, -1, -1):
        f = fio[k, :n]
        i = fio[k, n:2 * n]
        g = fio[k, 2 * n:3 * n]
        o = fio[k, 3 * n:]
        do = dh * tc[k]
        dct = dc + dh * o * (1.0 - tc[k] ** 2)
        dz = dz_all[k]
        dz[:n] = dct * c[k] * f * (1.0 - f)
        dz[n:2 * n] = dct * g * i * (1.0 - i)
        dz[2 * n:3 * n] = dct * i * (1.0 - g ** 2)
        dz[3 * n:] = do * o * (1.0 - o)
        dc = dct * f
        dh = uz.T @ dz + out_grad[k]
    dwz = dz_all.T @ u2[:t - 1]
    duz = dz_all.T @ h[:t - 1]
    dbz = dz_all.sum(axis=0)
    for j, gate in enumerate(("f", "i", "c", "o")):
        grads[f"W_{gate}"] += dwz[j * n:(j + 1) * n]
        grads[f"U_{gate}"] += duz[j * n:(j + 1) * n]
        grads[f"b_{gate}"] += dbz[j * n:(j + 1) * n]

    pen, r1, r2 = _penalty_with_grads(w, cfg, grads)
    return mse + pen, grads, (r1, r2)


def stability_margins(w):
    """(r1, r2) certification margins of the current weights."""
    return lstm.jury_margins(w)


def _two_norm_pair(m):
    """Largest singular value and its rank-one gradient u1 v1^T."""
    u, s, vt = np.linalg.svd(m)
    return float(s[0]), np.outer(u[:, 0], vt[0])


def _inf_norm_grads(w_in, u_rec, b, u_max):
    """Value and subgradients of || [W u_max, U, b] ||_inf (argmax row)."""
    rows = u_max * np.sum(np.abs(w_in), axis=1) + np.sum(np.abs(u_rec), axis=1) + np.abs(b)
    j = int(np.argmax(rows))
    gw = np.zeros_like(w_in)
    gu = np.zeros_like(u_rec)
    gb = np.zeros_like(b)
    gw[j] = u_max * np.sign(w_in[j])
    gu[j] = np.sign(u_rec[j])
    gb[j] = np.sign(b[j])
    return float(rows[j]), gw, gu, gb


def _penalty_with_grads(w, cfg, grads):
    """Add the r1/r2 penalty gradients into ``grads``; return its value."""
    nf, gwf, guf, gbf = _inf_norm_grads(w.W_f, w.U_f, w.b_f, w.u_max)
    ni, gwi, gui, gbi = _inf_norm_grads(w.W_i, w.U_i, w.b_i, w.u_max)
    nc, gwc, guc, gbc = _inf_norm_grads(w.W_c, w.U_c, w.b_c, w.u_max)
    no, gwo, guo, gbo = _inf_norm_grads(w.W_o, w.U_o, w.b_o, w.u_max)
    sf = float(sigmoid(nf))
    si = float(sigmoid(ni))
    so = float(sigmoid(no))
    sc = float(np.tanh(nc))
    n_uf, g_uf2 = _two_norm_pair(w.U_f)
    n_ui, g_ui2 = _two_norm_pair(w.U_i)
    n_uc, g_uc2 = _two_norm_pair(w.U_c)
    n_uo, g_uo2 = _two_norm_pair(w.U_o)
    cr = si * sc / (1.0 - sf)
    sx = float(np.tanh(cr))
    alpha = 0.25 * n_uf * cr + si * n_uc + 0.25 * n_ui * sc
    k1 = 0.25 * n_uo
    r1 = -1.0 + sf + alpha * so + k1 * sx - k1 * sf * sx
    r2 = k1 * sf * sx - 1.0
    pen = (cfg.lambda1 * max(r1, 0.0) + cfg.lambda1 * max(r2, 0.0)
           + cfg.lambda2 * min(r1, 0.0) + cfg.lambda2 * min(r2, 0.0))
    a_r1 = cfg.lambda1 if r1 > 0 else cfg.lambda2
    a_r2 = cfg.lambda1 if r2 > 0 else cfg.lambda2
    # Adjoints of the scalar pipeline (reverse order of its definition).
    a_sf = a_r1 * (1.0 - k1 * sx) + a_r2 * k1 * sx
    a_alpha = a_r1 * so
    a_so = a_r1 * alpha
    a_sx = a_r1 * k1 * (1.0 - sf) + a_r2 * k1 * sf
    a_nuo = a_r1 * 0.25 * sx * (1.0 - sf) + a_r2 * 0.25 * sf * sx
    a_nuf = a_alpha * 0.25 * cr
    a_cr = a_alpha * 0.25 * n_uf
    a_si = a_alpha * n_uc
    a_nuc = a_alpha * si
    a_nui = a_alpha * 0.25 * sc
    a_sc = a_alpha * 0.25 * n_ui
    a_cr += a_sx * (1.0 - sx ** 2)
    a_si += a_cr * sc / (1.0 - sf)
    a_sc += a_cr * si / (1.0 - sf)
    a_sf += a_cr * si * sc / (1.0 - sf) ** 2
    # Push into the weight tensors.
    for a_s, s, gw, gu, gb, names in (
            (a_sf, sf, gwf, guf, gbf, ("W_f", "U_f", "b_f")),
            (a_si, si, gwi, gui, gbi, ("W_i", "U_i", "b_i")),
            (a_so, so, gwo, guo, gbo, ("W_o", "U_o", "b_o"))):
        d = a_s * s * (1.0 - s)
        grads[names[0]] += d * gw
        grads[names[1]] += d * gu
        grads[names[2]] += d * gb
    d = a_sc * (1.0 - sc ** 2)
    grads["W_c"] += d * gwc
    grads["U_c"] += d * guc
    grads["b_c"] += d * gbc
    grads["U_f"] += a_nuf * g_uf2
    grads["U_i"] += a_nui * g_ui2
    grads["U_c"] += a_nuc * g_uc2
    grads["U_o"] += a_nuo * g_uo2
    return pen, r1, r2


def init_weights(cfg, m=1, p=1, u_range=None, y_range=None):
    """Uniform small-weight initialization; keeps gates near 1/2."""
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_neurons
    s = cfg.init_scale

    def mat(r, c):
        return rng.uniform(-s, s, size=(r, c))

    return LstmWeights(
        W_f=mat(n, m), W_i=mat(n, m), W_c=mat(n, m), W_o=mat(n, m),
        U_f=mat(n, n), U_i=mat(n, n), U_c=mat(n, n), U_o=mat(n, n),
        b_f=rng.uniform(-s, s, n), b_i=rng.uniform(-s, s, n),
        b_c=rng.uniform(-s, s, n), b_o=rng.uniform(-s, s, n),
        W_y=mat(p, n), b_y=rng.uniform(-s, s, p),
        u_max=1.0, u_range=u_range, y_range=y_range)


def train(data, cfg, init=None, callback=None):
    """Adam training over the training split, one sequence per update.

    The epoch loop runs for cfg.epochs epochs and then keeps going (up to
    ``extension_factor`` times as long) until both stability margins are
    negative; it fails rather than return an uncertified model.
    """
    u_range = (data.normalizer.u_lo, data.normalizer.u_hi)
    y_range = (data.normalizer.y_lo, data.normalizer.y_hi)
    w = init.copy() if init is not None else init_weights(
        cfg, m=1, p=1, u_range=u_range, y_range=y_range)
    if cfg.epochs == 0 and lstm.delta_iss_check(w).certified:
        return w
    rng = np.random.default_rng(cfg.seed + 1)
    mom = {name: np.zeros_like(getattr(w, name)) for name in _TENSORS}
    vel = {name: np.zeros_like(getattr(w, name)) for name in _TENSORS}
    step_count = 0
    b1, b2, eps = 0.9, 0.999, 1e-8
    margins = stability_margins(w)
    max_epochs = max(cfg.epochs, 1) * cfg.extension_factor
    for epoch in range(max_epochs):
        order = rng.permutation(len(data.train))
        epoch_loss = 0.0
        for s in order:
            u_seq, y_seq = data.train[s]
            try:
                value, grads, margins = loss(w, u_seq, y_seq, cfg)
            except TrainingError as exc:
                raise TrainingError(f"epoch {epoch}, sequence {s}: {exc}") from exc
            epoch_loss += value
            step_count += 1
            corr1 = 1.0 - b1 ** step_count
            corr2 = 1.0 - b2 ** step_count
            for name in _TENSORS:
                g = grads[name]
                mom[name] = b1 * mom[name] + (1 - b1) * g
                vel[name] = b2 * vel[name] + (1 - b2) * g * g
                upd = (mom[name] / corr1) / (np.sqrt(vel[name] / corr2) + eps)
                getattr(w, name)[...] -= cfg.learning_rate * upd
        if callback is not None:
            callback(epoch, epoch_loss / max(len(order), 1), margins)
        if epoch + 1 >= cfg.epochs and margins[0] < 0 and margins[1] < 0:
            break
    else:
        raise TrainingError(
            f"no certificate after {max_epochs} epochs (r1={margins[0]:.4f}, r2={margins[1]:.4f})")
    if not lstm.delta_iss_check(w).certified:
        raise TrainingError("margins negative but spectral radius >= 1 (inconsistent state)")
    return w


def fit_index(y_real, y_pred):
    """FIT percentage: 100 (1 - ||y_real - y_pred|| / ||y_real - mean||)."""
    y_real = np.asarray(y_real, dtype=float).ravel()
    y_pred = np.asarray(y_pred, dtype=float).ravel()
    if len(y_real) != len(y_pred) or len(y_real) < 2:
        raise ValueError("traces must have equal length >= 2")
    denom = np.linalg.norm(y_real - y_real.mean())
    if denom == 0.0:
        raise UndefinedMetricError("reference trace is constant")
    return float(100.0 * (1.0 - np.linalg.norm(y_real - y_pred) / denom))


def evaluate_fit(w, sequences, washout=50):
    """Mean FIT of open-loop predictions over a list of (u, y) sequences."""
    fits = []
    for u_seq, y_seq in sequences:
        y_hat = predict(w, u_seq)[:, 0]
        fits.append(fit_index(np.asarray(y_seq)[washout:], y_hat[washout:]))
    return float(np.mean(fits))
