"""GRU and SRU cells, masked sequence execution, and backpropagation through time.

Sequences are time-major (T, B, F) with per-column valid prefix lengths.
Masked steps propagate state unchanged and emit zero outputs, so padded
tails never touch the loss.

The SRU recurrence is elementwise only: all input-side matrix products for
a sequence are computed as one batched product (sru_precompute), and the
per-step loop touches nothing but (B, H) elementwise arrays. The reset gate
and highway output do not feed the recurrence at all, so both are computed
batched outside the loop, in forward and backward alike. That asymmetry
against the GRU (whose hidden-to-hidden product must run every step) is
the whole point of the cell.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .numcore import (ConfigurationError, DimensionError, ParamTensor,
                      UsageError, glorot, sigmoid, zeros_param)

FORWARD = "forward"
BACKWARD = "backward"  # backward in time


try:
    from scipy.special import expit as _sig_into_base

    def _sig_into(x):
        return _sig_into_base(x, out=x)
except ImportError:   # pragma: no cover - scipy is a normal install here
    def _sig_into(x):
        """In-place logistic; callers hold an errstate(over='ignore') guard."""
        np.negative(x, out=x)
        np.exp(x, out=x)
        x += 1.0
        np.reciprocal(x, out=x)
        return x


def _sig(x):
    # hot-loop logistic: saturation yields exact 0/1 in IEEE, callers guard
    # the overflow warning once per run instead of clamping per step
    return _sig_into(np.array(x, dtype=np.float64, copy=True))


@dataclass
class SequenceBatch:
    """Time-major batch of per-link windows.

    x        : (T, B, F) float64, zero padded past each column's length
    lengths  : (B,) valid prefix length per column
    link_ids : provenance, one id per column
    start_times : first frame timestamp per column
    labels   : optional (T, B) int class labels, -1 at padding
    """

    x: np.ndarray
    lengths: np.ndarray
    link_ids: tuple = ()
    start_times: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.lengths = np.asarray(self.lengths, dtype=np.int64)
        if self.x.ndim != 3:
            raise DimensionError(f"sequence batch must be (T,B,F), got {self.x.shape}")
        if self.lengths.shape != (self.x.shape[1],):
            raise DimensionError("lengths must have one entry per column")
        if self.lengths.max(initial=0) > self.x.shape[0]:
            raise DimensionError("column length exceeds window size")

    @property
    def window(self) -> int:
        return self.x.shape[0]

    @property
    def n_columns(self) -> int:
        return self.x.shape[1]

    def mask(self) -> Optional[np.ndarray]:
        """(T, B) float 0/1 validity mask, or None when every column is full."""
        T, B = self.x.shape[0], self.x.shape[1]
        if np.all(self.lengths == T):
            return None
        return (np.arange(T)[:, None] < self.lengths[None, :]).astype(np.float64)


def full_batch(x: np.ndarray) -> SequenceBatch:
    """Wrap a dense (T, B, F) array with all columns valid."""
    x = np.asarray(x, dtype=np.float64)
    return SequenceBatch(x, np.full(x.shape[1], x.shape[0], dtype=np.int64))


# ----------------------------------------------------------------------
# GRU
# ----------------------------------------------------------------------

class GruCell:
    """Standard GRU with sigmoid gates and tanh candidate:

        z  = sigmoid(x Wz + h Uz + bz)
        r  = sigmoid(x Wr + h Ur + br)
        hc = tanh(x Wc + (r*h) Uc + bc)
        h' = (1 - z)*h + z*hc

    Input projections for the three gates are fused into w_x (I, 3H) in
    z|r|c order; recurrent weights are u_zr (H, 2H) and u_c (H, H).
    """

    def __init__(self, input_dim: int, hidden_size: int, rng: np.random.Generator,
                 name: str = "gru"):
        I, H = input_dim, hidden_size
        self.input_dim = I
        self.hidden_size = H
        self.name = name
        self.w_x = glorot(rng, I, H, shape=(I, 3 * H), name=f"{name}.w_x")
        self.u_zr = glorot(rng, H, H, shape=(H, 2 * H), name=f"{name}.u_zr")
        self.u_c = glorot(rng, H, H, name=f"{name}.u_c")
        self.b = zeros_param((1, 3 * H), f"{name}.b")

    @property
    def params(self) -> list[ParamTensor]:
        return [self.w_x, self.u_zr, self.u_c, self.b]


def gru_step(cell: GruCell, x_t: np.ndarray, h_prev: np.ndarray) -> np.ndarray:
    """One GRU step for a (B, I) slice; no cache, no mask."""
    H = cell.hidden_size
    if x_t.shape[1] != cell.input_dim:
        raise DimensionError(f"gru_step: input {x_t.shape} vs input_dim {cell.input_dim}")
    if h_prev.shape != (x_t.shape[0], H):
        raise DimensionError(f"gru_step: state {h_prev.shape} vs hidden {H}")
    xp = x_t @ cell.w_x.value + cell.b.value
    g = h_prev @ cell.u_zr.value
    z = sigmoid(xp[:, :H] + g[:, :H])
    r = sigmoid(xp[:, H:2 * H] + g[:, H:])
    c = np.tanh(xp[:, 2 * H:] + (r * h_prev) @ cell.u_c.value)
    return h_prev + z * (c - h_prev)


class GruRun:
    """Cached forward pass of a GRU over one sequence batch."""

    def __init__(self, cell: GruCell, batch: SequenceBatch, reverse: bool = False):
        x = batch.x
        T, B, F = x.shape
        if F != cell.input_dim:
            raise DimensionError(f"sequence feature dim {F} != cell input_dim {cell.input_dim}")
        H = cell.hidden_size
        self.cell = cell
        self.batch = batch
        self.reverse = reverse
        self._mask = batch.mask()

        xp = (x.reshape(T * B, F) @ cell.w_x.value).reshape(T, B, 3 * H) + cell.b.value
        u_zr = cell.u_zr.value
        u_c = cell.u_c.value

        Z = np.empty((T, B, H))
        R = np.empty((T, B, H))
        C = np.empty((T, B, H))
        S = np.empty((T, B, H))          # post-mask state after each step
        h = np.zeros((B, H))
        g = np.empty((B, 2 * H))
        tmp = np.empty((B, H))
        order = range(T - 1, -1, -1) if reverse else range(T)
        mask = self._mask
        out = S if mask is None else np.empty((T, B, H))
        # the loop writes gates straight into the caches via out= to keep the
        # sequential section free of temporaries
        with np.errstate(over="ignore"):
            for t in order:
                np.matmul(h, u_zr, out=g)
                np.add(xp[t, :, :H], g[:, :H], out=Z[t])
                z = _sig_into(Z[t])
                np.add(xp[t, :, H:2 * H], g[:, H:], out=R[t])
                r = _sig_into(R[t])
                np.multiply(r, h, out=tmp)
                c = np.matmul(tmp, u_c, out=C[t])
                c += xp[t, :, 2 * H:]
                np.tanh(c, out=c)
                np.subtract(c, h, out=tmp)
                tmp *= z
                hn = np.add(h, tmp, out=S[t])
                if mask is None:
                    h = hn
                else:
                    m = mask[t][:, None]
                    np.multiply(m, hn, out=out[t])
                    h = h + m * (hn - h)
                    S[t] = h
        self.outputs = out
        self._cache = (Z, R, C, S)

    def backward(self, d_out: np.ndarray) -> np.ndarray:
        """Exact gradients of the unrolled run; accumulates into cell params."""
        if self._cache is None:
            raise UsageError("backward called after cache release")
        cell = self.cell
        x = self.batch.x
        T, B, F = x.shape
        H = cell.hidden_size
        Z, R, C, S = self._cache
        mask = self._mask
        # state before each step = post-mask state of the previously processed step
        hprev = np.empty_like(S)
        if self.reverse:
            hprev[T - 1] = 0.0
            hprev[:T - 1] = S[1:]
            order = range(0, T)          # reverse of processing order
        else:
            hprev[0] = 0.0
            hprev[1:] = S[:T - 1]
            order = range(T - 1, -1, -1)
        u_zr = cell.u_zr.value
        u_c = cell.u_c.value
        dxp = np.empty((T, B, 3 * H))
        dh = np.zeros((B, H))
        for t in order:
            hp = hprev[t]
            z = Z[t]
            r = R[t]
            c = C[t]
            if mask is None:
                dhn = dh + d_out[t]
                dh_pass = None
            else:
                m = mask[t][:, None]
                dhn = m * (dh + d_out[t])
                dh_pass = dh - m * dh
            dz = dhn * (c - hp)
            dc_pre = (dhn * z) * (1.0 - c * c)
            dh_new = dhn - dhn * z
            cell.u_c.grad += (r * hp).T @ dc_pre
            d_rh = dc_pre @ u_c.T
            dr = d_rh * hp
            dh_new += d_rh * r
            dxp[t, :, :H] = dz * z * (1.0 - z)
            dxp[t, :, H:2 * H] = dr * r * (1.0 - r)
            dxp[t, :, 2 * H:] = dc_pre
            dzr = dxp[t, :, :2 * H]
            cell.u_zr.grad += hp.T @ dzr
            dh_new += dzr @ u_zr.T
            dh = dh_new if dh_pass is None else dh_new + dh_pass
        flat = dxp.reshape(T * B, 3 * H)
        cell.w_x.grad += x.reshape(T * B, F).T @ flat
        cell.b.grad += flat.sum(axis=0, keepdims=True)
        return (flat @ cell.w_x.value.T).reshape(T, B, F)

    def release(self):
        self._cache = None


# ----------------------------------------------------------------------
# SRU
# ----------------------------------------------------------------------

class SruCell:
    """Simple recurrent unit with elementwise recurrence and highway output:

        f  = sigmoid(x Wf + v_f*c + b_f)
        c' = f*c + (1 - f)*(x W)
        r  = sigmoid(x Wr + v_r*c + b_r)
        h  = r*c' + (1 - r)*xt        xt = x, or x Wp when input_dim != hidden

    w fuses [W | Wf | Wr] as (I, 3H); v_f, v_r, b_f, b_r are (1, H).
    """

    def __init__(self, input_dim: int, hidden_size: int, rng: np.random.Generator,
                 name: str = "sru"):
        I, H = input_dim, hidden_size
        self.input_dim = I
        self.hidden_size = H
        self.name = name
        self.w = glorot(rng, I, H, shape=(I, 3 * H), name=f"{name}.w")
        lim = np.sqrt(6.0 / (2 * H))
        self.v_f = ParamTensor(rng.uniform(-lim, lim, size=(1, H)), f"{name}.v_f")
        self.v_r = ParamTensor(rng.uniform(-lim, lim, size=(1, H)), f"{name}.v_r")
        self.b_f = zeros_param((1, H), f"{name}.b_f")
        self.b_r = zeros_param((1, H), f"{name}.b_r")
        self.w_proj = glorot(rng, I, H, name=f"{name}.w_proj") if I != H else None

    @property
    def params(self) -> list[ParamTensor]:
        ps = [self.w, self.v_f, self.v_r, self.b_f, self.b_r]
        if self.w_proj is not None:
            ps.append(self.w_proj)
        return ps


def sru_precompute(cell: SruCell, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """All input-side products for a (T, B, F) sequence in one batched matmul.

    Returns (u3, xt): u3 is (T, B, 3H) holding [W x | Wf x | Wr x] without
    biases, xt is the highway input (projected when dims differ).
    """
    T, B, F = x.shape
    if F != cell.input_dim:
        raise DimensionError(f"sequence feature dim {F} != cell input_dim {cell.input_dim}")
    flat = x.reshape(T * B, F)
    u3 = (flat @ cell.w.value).reshape(T, B, 3 * cell.hidden_size)
    if cell.w_proj is None:
        xt = x
    else:
        xt = (flat @ cell.w_proj.value).reshape(T, B, cell.hidden_size)
    return u3, xt


def sru_step(cell: SruCell, pre_t: tuple[np.ndarray, np.ndarray],
             c_prev: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One SRU step from precomputed products: pre_t = (u3 row (B,3H), xt row (B,H))."""
    H = cell.hidden_size
    u3, xt = pre_t
    u = u3[:, :H]
    f = sigmoid((u3[:, H:2 * H] + cell.b_f.value) + c_prev * cell.v_f.value)
    c_t = u + f * (c_prev - u)
    r = sigmoid((u3[:, 2 * H:] + cell.b_r.value) + c_prev * cell.v_r.value)
    h_t = xt + r * (c_t - xt)
    return c_t, h_t


class SruRun:
    """Cached forward pass of an SRU over one sequence batch.

    Only the forget-gate/state recurrence runs step by step; the reset gate
    and highway output are computed batched over all T afterwards, and the
    backward pass mirrors that split.
    """

    def __init__(self, cell: SruCell, batch: SequenceBatch, reverse: bool = False):
        x = batch.x
        T, B, F = x.shape
        H = cell.hidden_size
        self.cell = cell
        self.batch = batch
        self.reverse = reverse
        self._mask = batch.mask()

        u3, xt = sru_precompute(cell, x)
        U = u3[:, :, :H]
        UF = u3[:, :, H:2 * H]
        UF += cell.b_f.value             # u3 is owned here; fold biases in place
        UR = u3[:, :, 2 * H:]
        UR += cell.b_r.value
        v_f = cell.v_f.value

        Fg = np.empty((T, B, H))
        C = np.empty((T, B, H))
        c = np.zeros((B, H))
        tmp = np.empty((B, H))
        mask = self._mask
        order = range(T - 1, -1, -1) if reverse else range(T)
        # only this elementwise loop is sequential; gates write straight into
        # the caches and the reset/highway path is computed batched below
        with np.errstate(over="ignore"):
            for t in order:
                ft = Fg[t]
                np.multiply(c, v_f, out=ft)
                ft += UF[t]
                f = _sig_into(ft)
                ut = U[t]
                np.subtract(c, ut, out=tmp)
                tmp *= f
                cn = np.add(ut, tmp, out=C[t])
                if mask is None:
                    c = cn
                else:
                    m = mask[t][:, None]
                    c = c + m * (cn - c)
                    C[t] = c

        cprev = np.empty_like(C)
        if reverse:
            cprev[T - 1] = 0.0
            cprev[:T - 1] = C[1:]
        else:
            cprev[0] = 0.0
            cprev[1:] = C[:T - 1]
        R = np.multiply(cprev, cell.v_r.value)
        R += UR
        with np.errstate(over="ignore"):
            _sig_into(R)
        out = np.subtract(C, xt)
        out *= R
        out += xt
        if mask is not None:
            out *= mask[:, :, None]
        self.outputs = out
        self._cache = (U, xt, Fg, C, cprev, R)

    def backward(self, d_out: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise UsageError("backward called after cache release")
        cell = self.cell
        x = self.batch.x
        T, B, F = x.shape
        H = cell.hidden_size
        U, xt, Fg, C, cprev, R = self._cache
        mask = self._mask

        dh = d_out if mask is None else d_out * mask[:, :, None]
        dc_from_h = dh * R
        dxt = dh - dc_from_h
        dr_pre = np.subtract(C, xt)
        dr_pre *= dh
        dr_pre *= R
        tmp_big = 1.0 - R
        dr_pre *= tmp_big
        cell.v_r.grad += (dr_pre * cprev).sum(axis=(0, 1))
        cell.b_r.grad += dr_pre.sum(axis=(0, 1))
        D = dr_pre * cell.v_r.value            # per-step dc_prev from the r gate
        KU = 1.0 - Fg
        G = np.subtract(cprev, U)              # df_pre = dc_new * G
        G *= Fg
        G *= KU

        du3 = np.empty((T, B, 3 * H))
        du3[:, :, 2 * H:] = dr_pre
        v_f = cell.v_f.value
        dc = np.zeros((B, H))
        tmp = np.empty((B, H))
        order = range(0, T) if self.reverse else range(T - 1, -1, -1)
        for t in order:
            if mask is None:
                dcn = dc
                dcn += dc_from_h[t]
                dc_pass = None
            else:
                m = mask[t][:, None]
                dcn = m * dc + dc_from_h[t]
                dc_pass = dc - m * dc
            df_pre = np.multiply(dcn, G[t], out=du3[t, :, H:2 * H])
            np.multiply(dcn, KU[t], out=du3[t, :, :H])
            dc = dcn
            dc *= Fg[t]
            np.multiply(df_pre, v_f, out=tmp)
            dc += tmp
            dc += D[t]
            if dc_pass is not None:
                dc += dc_pass

        dfp = du3[:, :, H:2 * H]
        cell.v_f.grad += (dfp * cprev).sum(axis=(0, 1))
        cell.b_f.grad += dfp.sum(axis=(0, 1))
        flat = du3.reshape(T * B, 3 * H)
        xflat = x.reshape(T * B, F)
        cell.w.grad += xflat.T @ flat
        dx = (flat @ cell.w.value.T).reshape(T, B, F)
        if cell.w_proj is None:
            dx += dxt
        else:
            dxt_flat = dxt.reshape(T * B, H)
            cell.w_proj.grad += xflat.T @ dxt_flat
            dx += (dxt_flat @ cell.w_proj.value.T).reshape(T, B, F)
        return dx

    def release(self):
        self._cache = None


# ----------------------------------------------------------------------
# sequence drivers
# ----------------------------------------------------------------------

Cell = Union[GruCell, SruCell]
Run = Union[GruRun, SruRun]


def run_sequence(cell: Cell, batch: SequenceBatch, direction: str = FORWARD) -> Run:
    """Run a cell over a sequence batch; the returned run holds .outputs (T,B,H)
    and the cache needed by bptt_backward."""
    if direction not in (FORWARD, BACKWARD):
        raise ConfigurationError(f"unknown direction {direction!r}")
    reverse = direction == BACKWARD
    if isinstance(cell, GruCell):
        return GruRun(cell, batch, reverse=reverse)
    if isinstance(cell, SruCell):
        return SruRun(cell, batch, reverse=reverse)
    raise ConfigurationError(f"unsupported cell type {type(cell).__name__}")


def bptt_backward(run: Run, d_outputs: np.ndarray) -> np.ndarray:
    """Backpropagate through a cached run. Accumulates parameter grads,
    returns dLoss/dInputs with the same shape as the run's input."""
    if d_outputs.shape != run.outputs.shape:
        raise DimensionError(
            f"d_outputs shape {d_outputs.shape} != outputs shape {run.outputs.shape}")
    return run.backward(d_outputs)


class BiRun:
    """Forward + backward-in-time runs of two cells, states concatenated."""

    def __init__(self, fwd_cell: Cell, bwd_cell: Cell, batch: SequenceBatch):
        if fwd_cell.hidden_size != bwd_cell.hidden_size:
            raise ConfigurationError(
                f"bidirectional cells disagree on hidden size: "
                f"{fwd_cell.hidden_size} vs {bwd_cell.hidden_size}")
        self.fwd = run_sequence(fwd_cell, batch, FORWARD)
        self.bwd = run_sequence(bwd_cell, batch, BACKWARD)
        self.outputs = np.concatenate([self.fwd.outputs, self.bwd.outputs], axis=2)

    def backward(self, d_out: np.ndarray) -> np.ndarray:
        H = self.fwd.cell.hidden_size
        dx = self.fwd.backward(np.ascontiguousarray(d_out[:, :, :H]))
        dx += self.bwd.backward(np.ascontiguousarray(d_out[:, :, H:]))
        return dx

    def release(self):
        self.fwd.release()
        self.bwd.release()


def bidirectional_run(fwd_cell: Cell, bwd_cell: Cell, batch: SequenceBatch) -> BiRun:
    return BiRun(fwd_cell, bwd_cell, batch)
