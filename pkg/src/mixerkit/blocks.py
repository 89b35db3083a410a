"""Gated SSM layer with quasiseparable (bidirectional) or semiseparable
(causal) mixing, the encoder stack built from it, parameter counting, and
checkpoint I/O.

Layer forward, with x the (B, L, C) residual stream:

    u   = rmsnorm(x) * norm_scale                      # pre-norm, width C
    v   = silu(conv_centered(u @ w_v) + conv_b)        # value branch, width D
    z   = u @ w_z                                      # gate branch, width D
    y   = mix(values=v, construction=u)                # see below
    g   = rmsnorm(y * silu(z)) * gate_scale            # gated norm, width D
    out = x + g @ w_out

The construction channels (dt/b/c/delta inputs) are per-token linear maps
of the same normed stream u that feeds the value and gate branches — one
shared input projection split into blocks, which is where the parameter
saving over two independent mixers comes from.

mix, bidirectional:  shift(scan_fwd(v)) + flip(shift(scan_bwd(flip(v)))) + delta * v
mix, causal:         scan_fwd(v) + delta * v

The short convolution is centered (odd width, zero padding), so a single
layer reaches both directions even before mixing; the causal variant
keeps it for architectural parity and is only causal beyond the conv
half-width.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .core import Rng, as_tensor, flip_seq, shift_right, silu
from .framework import depthwise_conv_centered
from .ptree import count_params, load_named_arrays, named_arrays
from . import ssm

NORM_EPS = 1e-8
CHECKPOINT_MAGIC = b"MIXERKIT"
CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------------------
# Configuration and parameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EncoderConfig:
    """Stack geometry. ``expand`` is the nominal width multiplier (the
    default head layout satisfies n_heads * head_dim = expand * c_model);
    the inner width actually used is always n_heads * head_dim, which the
    toy task nudges away from the nominal value to match parameter
    budgets across variants."""

    n_layers: int = 4
    c_model: int = 64
    expand: int = 2
    n_heads: int = 4
    head_dim: int = 32
    n_state: int = 16
    vocab: int = 16
    conv_width: int = 7
    bidirectional: bool = True

    def __post_init__(self):
        if self.conv_width % 2 != 1:
            raise ValueError("conv_width must be odd (centered kernel)")
        if self.n_layers < 0:
            raise ValueError("n_layers must be >= 0")
        if min(self.c_model, self.n_heads, self.head_dim,
               self.n_state, self.vocab) < 1:
            raise ValueError(f"all dimensions must be >= 1: {self}")

    @property
    def d_inner(self) -> int:
        return self.n_heads * self.head_dim


@dataclass
class SsmLayerParams:
    """One gated mixing layer. ``bwd is None`` makes the layer causal."""

    norm_scale: np.ndarray   # (C,)
    w_v: np.ndarray          # (C, D)
    w_z: np.ndarray          # (C, D)
    conv_w: np.ndarray       # (D, k) depthwise, centered
    conv_b: np.ndarray       # (D,)
    fwd: ssm.SsmHeadParams
    bwd: ssm.SsmHeadParams | None
    delta_w: np.ndarray      # (C, H)
    gate_scale: np.ndarray   # (D,)
    w_out: np.ndarray        # (D, C)

    @property
    def bidirectional(self) -> bool:
        return self.bwd is not None


@dataclass
class EncoderParams:
    embed: np.ndarray        # (vocab, C); also the tied unembedding
    layers: list[SsmLayerParams] = field(default_factory=list)
    final_norm: np.ndarray = None  # (C,)


def init_layer(cfg: EncoderConfig, rng: Rng,
               bidirectional: bool | None = None) -> SsmLayerParams:
    bidir = cfg.bidirectional if bidirectional is None else bidirectional
    c = cfg.c_model
    d = cfg.d_inner
    k = cfg.conv_width
    h = cfg.n_heads
    fwd = ssm.init_ssm_head(rng, c, h, cfg.n_state)
    if bidir:
        bwd = ssm.init_ssm_head(rng, c, h, cfg.n_state)
        bwd.a_log = fwd.a_log  # one transition rate per head, both directions
    else:
        bwd = None
    return SsmLayerParams(
        norm_scale=np.ones(c),
        w_v=rng.xavier_normal((c, d), c, d),
        w_z=rng.xavier_normal((c, d), c, d),
        conv_w=rng.normal((d, k), std=1.0 / np.sqrt(k)),
        conv_b=np.zeros(d),
        fwd=fwd,
        bwd=bwd,
        delta_w=rng.xavier_normal((c, h), c, h),
        gate_scale=np.ones(d),
        w_out=rng.xavier_normal((d, c), d, c),
    )


def init_encoder(cfg: EncoderConfig, rng: Rng) -> EncoderParams:
    embed = rng.normal((cfg.vocab, cfg.c_model), std=0.02)
    layers = [init_layer(cfg, rng) for _ in range(cfg.n_layers)]
    return EncoderParams(embed=embed, layers=layers, final_norm=np.ones(cfg.c_model))


# ---------------------------------------------------------------------------
# Forward passes (with saved context for the hand-written backward)
# ---------------------------------------------------------------------------

def rms_norm(x: np.ndarray, scale: np.ndarray):
    """x / sqrt(mean(x^2) + eps) * scale over the channel axis; returns
    (out, inverse-rms) so the backward can reuse the normalizer."""
    inv = 1.0 / np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + NORM_EPS)
    return x * inv * scale, inv


def mix_forward(p: SsmLayerParams, u: np.ndarray, v: np.ndarray):
    """Sequence mixing of values v driven by construction stream u.

    Returns (y, ctx); ctx carries the scan coefficients and states the
    adjoint pass replays.
    """
    b, length, d = v.shape
    h = p.fwd.n_heads
    cf, dt_f = ssm.discretize_with_dt(p.fwd, u)
    yf_scan, states_f = ssm.ss_scan(v, *cf, return_states=True)
    delta = u @ p.delta_w                         # (B, L, H)
    vh = v.reshape(b, length, h, d // h)
    y_d = (delta[..., None] * vh).reshape(b, length, d)
    ctx = {"u": u, "v": v, "cf": cf, "dt_f": dt_f, "states_f": states_f,
           "delta": delta}
    if p.bidirectional:
        u_flip = flip_seq(u)
        v_flip = flip_seq(v)
        cb, dt_b = ssm.discretize_with_dt(p.bwd, u_flip)
        yb_scan, states_b = ssm.ss_scan(v_flip, *cb, return_states=True)
        y = shift_right(yf_scan) + flip_seq(shift_right(yb_scan)) + y_d
        ctx.update({"u_flip": u_flip, "v_flip": v_flip, "cb": cb,
                    "dt_b": dt_b, "states_b": states_b})
    else:
        y = yf_scan + y_d
    return y, ctx


def layer_forward(p: SsmLayerParams, x: np.ndarray, layer_index: int = 0):
    """One gated mixing layer; returns (out, ctx)."""
    x = as_tensor(x)
    u, u_inv = rms_norm(x, p.norm_scale)
    v0 = u @ p.w_v
    z = u @ p.w_z
    v_conv = depthwise_conv_centered(v0, p.conv_w) + p.conv_b
    v = silu(v_conv)
    y, mix_ctx = mix_forward(p, u, v)
    gz = silu(z)
    g = y * gz
    gn, g_inv = rms_norm(g, p.gate_scale)
    out = x + gn @ p.w_out
    if not np.all(np.isfinite(out)):
        raise ValueError(f"layer {layer_index}: non-finite output")
    ctx = {"x": x, "u": u, "u_inv": u_inv, "v0": v0, "z": z, "v_conv": v_conv,
           "v": v, "y": y, "gz": gz, "g": g, "gn": gn, "g_inv": g_inv,
           "mix": mix_ctx}
    return out, ctx


def encoder_forward(cfg: EncoderConfig, params: EncoderParams,
                    tokens: np.ndarray, with_ctx: bool = False):
    """Embed -> layers -> final norm -> tied unembed; logits (B, L, vocab)."""
    tokens = np.asarray(tokens)
    if tokens.min() < 0 or tokens.max() >= params.embed.shape[0]:
        raise ValueError(f"token id outside [0, {params.embed.shape[0]})")
    hidden = params.embed[tokens]  # (B, L, C)
    ctxs = []
    for idx, layer in enumerate(params.layers):
        hidden, ctx = layer_forward(layer, hidden, layer_index=idx)
        if with_ctx:
            ctxs.append(ctx)
    normed, f_inv = rms_norm(hidden, params.final_norm)
    logits = normed @ params.embed.T
    if with_ctx:
        return logits, {"tokens": tokens, "layers": ctxs, "hidden": hidden,
                        "normed": normed, "f_inv": f_inv}
    return logits


# ---------------------------------------------------------------------------
# Parameter accounting
# ---------------------------------------------------------------------------

def layer_param_counts(p: SsmLayerParams) -> dict[str, int]:
    counts = {
        "pre_norm": p.norm_scale.size,
        "in_proj_values": p.w_v.size,
        "in_proj_gate": p.w_z.size,
        "short_conv": p.conv_w.size + p.conv_b.size,
        "scan_fwd": count_params(p.fwd),
        "scan_bwd": 0,
        "diagonal": p.delta_w.size,
        "gated_norm": p.gate_scale.size,
        "out_proj": p.w_out.size,
    }
    if p.bwd is not None:
        shared = {id(a) for _, a in named_arrays(p.fwd)}
        counts["scan_bwd"] = sum(a.size for _, a in named_arrays(p.bwd)
                                 if id(a) not in shared)
    return counts


def parameter_count_report(cfg: EncoderConfig, rng_seed: int = 0) -> dict:
    """Per-submodule counts for one bidirectional layer against a baseline
    of two independent causal mixers (every projection duplicated).

    The construction channels ride on the shared input projection, so the
    bidirectional layer only adds the backward dt/b/c maps — well under
    the 2x of the duplicated baseline.
    """
    rng = Rng(rng_seed)
    bidir = init_layer(cfg, rng, bidirectional=True)
    causal = init_layer(cfg, rng, bidirectional=False)
    bidir_counts = layer_param_counts(bidir)
    bidir_total = sum(bidir_counts.values())
    causal_total = sum(layer_param_counts(causal).values())
    baseline_total = 2 * causal_total
    return {
        "config": {"c_model": cfg.c_model, "expand": cfg.expand,
                   "n_heads": cfg.n_heads, "head_dim": cfg.head_dim,
                   "n_state": cfg.n_state, "n_layers": cfg.n_layers},
        "bidirectional_layer": bidir_counts,
        "bidirectional_layer_total": bidir_total,
        "two_independent_baseline_total": baseline_total,
        "ratio": bidir_total / baseline_total,
        "model_total": cfg.n_layers * bidir_total
                       + cfg.vocab * cfg.c_model + cfg.c_model,
    }


def full_scale_config() -> EncoderConfig:
    """12-layer, 768-wide geometry (30k vocab) used for the printed
    full-scale count; lands near 70M parameters."""
    return EncoderConfig(n_layers=12, c_model=768, expand=2, n_heads=12,
                         head_dim=128, n_state=16, vocab=30522)


# ---------------------------------------------------------------------------
# Checkpoint I/O
# ---------------------------------------------------------------------------
# Layout (all integers little-endian):
#   8s   magic "MIXERKIT"
#   I    container version (1)
#   c    endianness tag b"<"
#   I    header length, then UTF-8 JSON of the EncoderConfig fields
#   I    number of arrays, then for each:
#          H name length, name bytes (UTF-8, tree path),
#          B ndim, ndim * Q dims,
#          raw float64 data, C order
# Shared arrays are stored once under their canonical path; loading
# re-populates an initialized skeleton in place, preserving the sharing.

def save_checkpoint(path: str, cfg: EncoderConfig, params: EncoderParams) -> None:
    header = json.dumps({
        "n_layers": cfg.n_layers, "c_model": cfg.c_model, "expand": cfg.expand,
        "n_heads": cfg.n_heads, "head_dim": cfg.head_dim, "n_state": cfg.n_state,
        "vocab": cfg.vocab, "conv_width": cfg.conv_width,
        "bidirectional": cfg.bidirectional,
    }).encode("utf-8")
    arrays = named_arrays(params)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<8sIc", CHECKPOINT_MAGIC, CHECKPOINT_VERSION, b"<"))
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays:
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path: str) -> tuple[EncoderConfig, EncoderParams]:
    with open(path, "rb") as fh:
        magic, version, endian = struct.unpack("<8sIc", fh.read(13))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a mixerkit checkpoint: magic {magic!r}")
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        if endian != b"<":
            raise ValueError(f"unsupported endianness tag {endian!r}")
        (hlen,) = struct.unpack("<I", fh.read(4))
        cfg = EncoderConfig(**json.loads(fh.read(hlen).decode("utf-8")))
        (n_arrays,) = struct.unpack("<I", fh.read(4))
        arrays: dict[str, np.ndarray] = {}
        for _ in range(n_arrays):
            (nlen,) = struct.unpack("<H", fh.read(2))
            name = fh.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim)) if ndim else ()
            size = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(8 * size), dtype="<f8").reshape(shape)
            arrays[name] = data.astype(np.float64)
    params = init_encoder(cfg, Rng(0))
    load_named_arrays(params, arrays)
    return cfg, params
