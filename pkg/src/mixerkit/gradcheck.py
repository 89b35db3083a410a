"""Hand-written reverse-mode derivatives for every operation on the
training path, a central finite-difference oracle to verify them, and the
momentum-SGD step used by the toy task.

The backward passes are statically wired per operation (the architecture
is fixed; there is no tape). Each accepts the saved forward context plus
the upstream gradient and returns gradients for its inputs; parameter
gradients accumulate into a ``GradStore`` keyed by parameter identity, so
arrays shared between scan directions receive summed contributions.

The scan saves all intermediate states h_t during the forward pass
(O(L * N * P) memory) and the adjoint runs the reverse-time recurrence

    lambda_t = c_t (x) g_t + abar_{t+1} * lambda_{t+1}
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import sigmoid
from .framework import depthwise_conv_centered
from .ptree import GradStore
from . import blocks, ssm

FD_STEP = 1e-5
FD_TOL = 1e-5


# ---------------------------------------------------------------------------
# Finite-difference oracle
# ---------------------------------------------------------------------------

def finite_difference_grad(f, theta: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central differences (f(theta + h e_k) - f(theta - h e_k)) / 2h,
    one coordinate at a time. f must be a scalar-valued function that does
    not mutate its argument."""
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.zeros_like(theta)
    flat = theta.reshape(-1)
    gflat = grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        fp = f(theta)
        flat[k] = orig - h
        fm = f(theta)
        flat[k] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError("non-finite objective during finite differencing")
        gflat[k] = (fp - fm) / (2.0 * h)
    return grad


@dataclass
class GradReport:
    op: str
    max_rel_error: float
    fd_step: float = FD_STEP
    tolerance: float = FD_TOL

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def grad_deviation(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max deviation relative to max(1, largest gradient magnitude); the
    floor keeps near-zero gradients from inflating the ratio past what
    the O(h^2) truncation of the oracle can resolve."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(1.0, float(np.max(np.abs(analytic))), float(np.max(np.abs(numeric))))
    return float(np.max(np.abs(analytic - numeric))) / scale


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

def sgd_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             lr: float, momentum: float = 0.0,
             velocity: dict[str, np.ndarray] | None = None) -> dict[str, np.ndarray]:
    """Classic momentum update, in place:
    vel <- momentum * vel + grad; param <- param - lr * vel.
    Returns the velocity dict to thread into the next call."""
    if velocity is None:
        velocity = {name: np.zeros_like(p) for name, p in params.items()}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"{name}: grad shape {g.shape} != param {p.shape}")
        v = velocity[name]
        v *= momentum
        v += g
        p -= lr * v
    return velocity


# ---------------------------------------------------------------------------
# Elementwise backwards
# ---------------------------------------------------------------------------

def silu_backward(x: np.ndarray, gout: np.ndarray) -> np.ndarray:
    s = sigmoid(x)
    return gout * (s * (1.0 + x * (1.0 - s)))


def softplus_backward(x: np.ndarray, gout: np.ndarray) -> np.ndarray:
    return gout * sigmoid(x)


def softmax_rows_backward(y: np.ndarray, gout: np.ndarray) -> np.ndarray:
    """y is the forward output; g = y * (gout - sum(gout * y))."""
    dot = np.sum(gout * y, axis=-1, keepdims=True)
    return y * (gout - dot)


def rms_norm_backward(x: np.ndarray, scale: np.ndarray, inv: np.ndarray,
                      gout: np.ndarray):
    """Backward of blocks.rms_norm; inv is the saved 1/rms."""
    n = x.shape[-1]
    gscale = (gout * x * inv).reshape(-1, n).sum(axis=0)
    s = np.sum(gout * scale * x, axis=-1, keepdims=True)
    gx = gout * scale * inv - x * (inv ** 3) * s / n
    return gx, gscale


def conv_centered_backward(v: np.ndarray, kernel: np.ndarray, gout: np.ndarray):
    """Backward of the depthwise centered convolution (+ bias)."""
    b, length, d = v.shape
    k = kernel.shape[1]
    half = k // 2
    gv = depthwise_conv_centered(gout, kernel[:, ::-1])
    padded = np.zeros((b, length + 2 * half, d))
    padded[:, half:half + length] = v
    gk = np.empty_like(kernel)
    for m in range(k):
        gk[:, m] = np.einsum("btd,btd->d", gout, padded[:, m:m + length])
    gb = gout.sum(axis=(0, 1))
    return gv, gk, gb


def _shift_left(g: np.ndarray) -> np.ndarray:
    """Adjoint of core.shift_right on (B, L, ...) arrays."""
    out = np.zeros_like(g)
    if g.shape[1] > 1:
        out[:, :-1] = g[:, 1:]
    return out


# ---------------------------------------------------------------------------
# Scan and discretization backwards
# ---------------------------------------------------------------------------

def backward_ss_scan(xv: np.ndarray, abar: np.ndarray, bbar: np.ndarray,
                     c: np.ndarray, states: np.ndarray, gy: np.ndarray):
    """Adjoint of ``ssm.ss_scan``; needs the saved states (B, L, H, N, P).

    Returns (gxv, gabar, gbbar, gc)."""
    if states is None:
        raise ValueError("backward_ss_scan needs the saved forward states")
    b, length, d = xv.shape
    h = abar.shape[2]
    p = d // h
    n = bbar.shape[3]
    xh = xv.reshape(b, length, h, p)
    gyh = gy.reshape(b, length, h, p)
    lam = np.zeros((b, h, n, p))
    gxh = np.empty((b, length, h, p))
    gabar = np.empty((b, length, h))
    gbbar = np.empty((b, length, h, n))
    gc = np.empty((b, length, h, n))
    for t in range(length - 1, -1, -1):
        gc[:, t] = np.einsum("bhnp,bhp->bhn", states[:, t], gyh[:, t])
        lam += c[:, t, :, :, None] * gyh[:, t, :, None, :]
        prev = states[:, t - 1] if t > 0 else np.zeros((b, h, n, p))
        gabar[:, t] = np.einsum("bhnp,bhnp->bh", lam, prev)
        gbbar[:, t] = np.einsum("bhnp,bhp->bhn", lam, xh[:, t])
        gxh[:, t] = np.einsum("bhnp,bhn->bhp", lam, bbar[:, t])
        lam *= abar[:, t, :, None, None]
    return gxh.reshape(b, length, d), gabar, gbbar, gc


def backward_discretize(params: ssm.SsmHeadParams, x: np.ndarray,
                        coeffs: ssm.SsmCoeffs, dt: np.ndarray,
                        gabar: np.ndarray, gbbar: np.ndarray, gc: np.ndarray,
                        store: GradStore):
    """Adjoint of ``ssm.discretize``. dt is the saved softplus output; the
    pre-activation sigmoid is recovered as 1 - exp(-dt). Returns gx."""
    a = -np.exp(params.a_log)                       # (H,)
    # recomputed rather than divided out of bbar: dt can underflow to 0
    braw = np.einsum("blc,chn->blhn", x, params.b_w)
    # c = x @ c_w
    store.add(params.c_w, np.einsum("blc,blhn->chn", x, gc))
    gx = np.einsum("blhn,chn->blc", gc, params.c_w)
    # bbar = dt * braw
    gbraw = gbbar * dt[..., None]
    gdt = np.einsum("blhn,blhn->blh", gbbar, braw)
    store.add(params.b_w, np.einsum("blc,blhn->chn", x, gbraw))
    gx += np.einsum("blhn,chn->blc", gbraw, params.b_w)
    # abar = exp(dt * a)
    gdt += gabar * coeffs.abar * a
    ga = np.einsum("blh,blh->h", gabar * coeffs.abar, dt)
    store.add(params.a_log, ga * a)                 # d a / d a_log = a
    # dt = softplus(x @ dt_w + dt_bias)
    gdtraw = gdt * (1.0 - np.exp(-dt))
    store.add(params.dt_bias, gdtraw.sum(axis=(0, 1)))
    store.add(params.dt_w, np.einsum("blc,blh->ch", x, gdtraw))
    gx += np.einsum("blh,ch->blc", gdtraw, params.dt_w)
    return gx


def backward_mix(p: blocks.SsmLayerParams, ctx: dict, gy: np.ndarray,
                 store: GradStore):
    """Adjoint of ``blocks.mix_forward``; returns (gu, gv)."""
    u, v = ctx["u"], ctx["v"]
    b, length, d = v.shape
    h = p.fwd.n_heads
    vh = v.reshape(b, length, h, d // h)
    gyh = gy.reshape(b, length, h, d // h)
    # diagonal branch: y_d = delta * v per head
    gdelta = np.einsum("blhp,blhp->blh", gyh, vh)
    gv = (ctx["delta"][..., None] * gyh).reshape(b, length, d)
    store.add(p.delta_w, np.einsum("blc,blh->ch", u, gdelta))
    gu = np.einsum("blh,ch->blc", gdelta, p.delta_w)
    # forward scan branch
    cf = ctx["cf"]
    g_fscan = _shift_left(gy) if p.bidirectional else gy
    gxv, gabar, gbbar, gc = backward_ss_scan(v, *cf, ctx["states_f"], g_fscan)
    gv += gxv
    gu += backward_discretize(p.fwd, u, cf, ctx["dt_f"], gabar, gbbar, gc, store)
    # backward scan branch
    if p.bidirectional:
        u_flip, v_flip, cb = ctx["u_flip"], ctx["v_flip"], ctx["cb"]
        g_bscan = _shift_left(gy[:, ::-1])
        gxvf, gabar, gbbar, gc = backward_ss_scan(v_flip, *cb, ctx["states_b"],
                                                  g_bscan)
        gv += gxvf[:, ::-1]
        gu += backward_discretize(p.bwd, u_flip, cb, ctx["dt_b"], gabar, gbbar,
                                  gc, store)[:, ::-1]
    return gu, gv


# ---------------------------------------------------------------------------
# Layer and encoder backwards
# ---------------------------------------------------------------------------

def backward_layer(p: blocks.SsmLayerParams, ctx: dict, gout: np.ndarray,
                   store: GradStore) -> np.ndarray:
    """Adjoint of ``blocks.layer_forward``; returns the gradient w.r.t. the
    layer input (residual path included)."""
    x, u, z, y = ctx["x"], ctx["u"], ctx["z"], ctx["y"]
    # out = x + gn @ w_out
    g_gn = gout @ p.w_out.T
    store.add(p.w_out, np.einsum("bld,blc->dc", ctx["gn"], gout))
    # gated norm
    g_g, g_gate = rms_norm_backward(ctx["g"], p.gate_scale, ctx["g_inv"], g_gn)
    store.add(p.gate_scale, g_gate)
    # g = y * silu(z)
    g_y = g_g * ctx["gz"]
    g_z = silu_backward(z, g_g * y)
    # mixing
    gu, gv = backward_mix(p, ctx["mix"], g_y, store)
    # v = silu(conv(u @ w_v) + conv_b)
    g_vconv = silu_backward(ctx["v_conv"], gv)
    g_v0, g_ck, g_cb = conv_centered_backward(ctx["v0"], p.conv_w, g_vconv)
    store.add(p.conv_w, g_ck)
    store.add(p.conv_b, g_cb)
    # the three projections off the normed stream
    store.add(p.w_v, np.einsum("blc,bld->cd", u, g_v0))
    store.add(p.w_z, np.einsum("blc,bld->cd", u, g_z))
    gu = gu + g_v0 @ p.w_v.T + g_z @ p.w_z.T
    # pre-norm
    gx_norm, g_scale = rms_norm_backward(x, p.norm_scale, ctx["u_inv"], gu)
    store.add(p.norm_scale, g_scale)
    return gout + gx_norm


def backward_encoder(cfg: blocks.EncoderConfig, params: blocks.EncoderParams,
                     ctx: dict, glogits: np.ndarray, store: GradStore) -> None:
    """Adjoint of ``blocks.encoder_forward``; the tied embedding collects
    gradients from both the lookup and the unembedding."""
    tokens = ctx["tokens"]
    # logits = normed @ embed.T
    store.add(params.embed, np.einsum("blv,blc->vc", glogits, ctx["normed"]))
    g_normed = glogits @ params.embed
    g_hidden, g_fnorm = rms_norm_backward(ctx["hidden"], params.final_norm,
                                          ctx["f_inv"], g_normed)
    store.add(params.final_norm, g_fnorm)
    for layer, layer_ctx in zip(reversed(params.layers), reversed(ctx["layers"])):
        g_hidden = backward_layer(layer, layer_ctx, g_hidden, store)
    g_embed = np.zeros_like(params.embed)
    np.add.at(g_embed, tokens.reshape(-1),
              g_hidden.reshape(-1, g_hidden.shape[-1]))
    store.add(params.embed, g_embed)


def cross_entropy(logits: np.ndarray, targets: np.ndarray,
                  weights: np.ndarray | None = None):
    """Mean weighted cross entropy over (B, L); returns (loss, glogits)."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    logz = np.log(np.sum(np.exp(shifted), axis=-1))
    picked = np.take_along_axis(shifted, targets[..., None], axis=-1)[..., 0]
    nll = logz - picked
    if weights is None:
        weights = np.ones_like(nll)
    total = weights.sum()
    if total <= 0:
        raise ValueError("cross entropy needs positive total weight")
    loss = float(np.sum(weights * nll) / total)
    probs = np.exp(shifted - logz[..., None])
    glogits = probs * (weights / total)[..., None]
    np.put_along_axis(
        glogits, targets[..., None],
        np.take_along_axis(glogits, targets[..., None], axis=-1)
        - (weights / total)[..., None], axis=-1)
    return loss, glogits
