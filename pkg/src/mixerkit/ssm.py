"""Semiseparable and quasiseparable sequence mixing.

A diagonal-state recurrence with per-token coefficients

    h_t = abar_t * h_{t-1} + bbar_t (x) v_t ,   y_t = c_t^T h_t

realizes, as a matrix on the length axis, a lower-triangular matrix whose
entries are ``m_ij = c_i^T (prod_{k=j+1..i} abar_k) bbar_j`` (empty product
= 1 on the diagonal). Every on-or-below-diagonal submatrix of such a
matrix has rank at most N (the state width): the semiseparable class.

Allowing a free diagonal and an independent upper triangle built the same
way from the reversed sequence gives the quasiseparable class. Its apply
decomposes into two shifted scans plus a diagonal term:

    QS(v) = shift(SS_fwd(v)) + flip(shift(SS_bwd(flip(v)))) + delta * v

which is the sub-quadratic path used here; dense materializers of both
classes serve as oracles for it.

Shapes: value streams are (B, L, D) with D = H * P; scan coefficients are
abar (B, L, H) — one scalar transition per head — bbar and c (B, L, H, N).
Materializers take per-sequence coefficients (no batch axis).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import as_tensor, check_finite, flip_seq, numerical_rank, shift_right, softplus
from .framework import MaterializedMixer
from .report import VerificationReport


# ---------------------------------------------------------------------------
# Parameter containers
# ---------------------------------------------------------------------------

@dataclass
class SsmHeadParams:
    """Projection-form parameters of one scan direction.

    The state transition is a negative scalar per head, A = -exp(a_log),
    so the discretized transition exp(dt * A) stays in (0, 1). dt comes
    from a softplus-activated projection with bias; b and c are per-head
    linear maps of the construction stream.
    """

    a_log: np.ndarray    # (H,)
    dt_w: np.ndarray     # (C, H)
    dt_bias: np.ndarray  # (H,)
    b_w: np.ndarray      # (C, H, N)
    c_w: np.ndarray      # (C, H, N)

    @property
    def n_heads(self) -> int:
        return self.a_log.shape[0]

    @property
    def n_state(self) -> int:
        return self.b_w.shape[2]

    @property
    def in_channels(self) -> int:
        return self.dt_w.shape[0]


@dataclass
class QuasiParams:
    """Two scan directions plus the data-dependent diagonal projection.

    The backward direction consumes the flipped construction stream with
    its own projections (``share_directions=True`` reuses the forward
    ones, which is equivalent to applying one projection to the flipped
    sequence). ``delta_w`` produces one free diagonal value per head and
    token; it is unconstrained.
    """

    fwd: SsmHeadParams
    bwd: SsmHeadParams
    delta_w: np.ndarray  # (C, H)
    share_directions: bool = False

    @property
    def n_heads(self) -> int:
        return self.fwd.n_heads

    @property
    def n_state(self) -> int:
        return self.fwd.n_state


class SsmCoeffs(NamedTuple):
    """Discretized per-token scan coefficients."""

    abar: np.ndarray  # (B, L, H)
    bbar: np.ndarray  # (B, L, H, N)
    c: np.ndarray     # (B, L, H, N)


def init_ssm_head(rng, in_channels: int, n_heads: int, n_state: int,
                  dt_min: float = 1e-3, dt_max: float = 1e-1) -> SsmHeadParams:
    """Random head parameters: |A| log-uniform in [e^-4, 1], dt bias set so
    softplus lands in [dt_min, dt_max], Xavier-normal projections."""
    a_log = rng.uniform((n_heads,), -4.0, 0.0)
    dt0 = np.exp(rng.uniform((n_heads,), np.log(dt_min), np.log(dt_max)))
    dt_bias = np.log(np.expm1(dt0))  # softplus(dt_bias) == dt0
    return SsmHeadParams(
        a_log=a_log,
        dt_w=rng.xavier_normal((in_channels, n_heads), in_channels, n_heads),
        dt_bias=dt_bias,
        b_w=rng.xavier_normal((in_channels, n_heads, n_state), in_channels, n_state),
        c_w=rng.xavier_normal((in_channels, n_heads, n_state), in_channels, n_state),
    )


def init_quasi_params(rng, in_channels: int, n_heads: int, n_state: int,
                      share_a_log: bool = True,
                      share_directions: bool = False) -> QuasiParams:
    fwd = init_ssm_head(rng, in_channels, n_heads, n_state)
    if share_directions:
        bwd = fwd
    else:
        bwd = init_ssm_head(rng, in_channels, n_heads, n_state)
        if share_a_log:
            bwd.a_log = fwd.a_log
    delta_w = rng.xavier_normal((in_channels, n_heads), in_channels, n_heads)
    return QuasiParams(fwd=fwd, bwd=bwd, delta_w=delta_w,
                       share_directions=share_directions)


# ---------------------------------------------------------------------------
# Discretization and the scan
# ---------------------------------------------------------------------------

def discretize_with_dt(params: SsmHeadParams, x: np.ndarray):
    """Per-token coefficients from the construction stream x (B, L, C):

        dt   = softplus(x @ dt_w + dt_bias)        > 0
        abar = exp(dt * A),  A = -exp(a_log)       in (0, 1)
        bbar = dt * (x @ b_w)
        c    = x @ c_w

    Returns (coeffs, dt); the adjoint pass reuses dt.
    """
    x = as_tensor(x)
    if x.ndim != 3 or x.shape[2] != params.in_channels:
        raise ValueError(f"expected (B, L, {params.in_channels}), got {x.shape}")
    dt = softplus(x @ params.dt_w + params.dt_bias)             # (B, L, H)
    a = -np.exp(params.a_log)                                   # (H,)
    abar = np.exp(dt * a)
    braw = np.einsum("blc,chn->blhn", x, params.b_w)
    bbar = dt[..., None] * braw
    c = np.einsum("blc,chn->blhn", x, params.c_w)
    for name, arr in (("abar", abar), ("bbar", bbar), ("c", c)):
        check_finite(arr, f"discretized {name}")
    return SsmCoeffs(abar=abar, bbar=bbar, c=c), dt


def discretize(params: SsmHeadParams, x: np.ndarray) -> SsmCoeffs:
    return discretize_with_dt(params, x)[0]


def ss_scan(xv: np.ndarray, abar: np.ndarray, bbar: np.ndarray, c: np.ndarray,
            return_states: bool = False):
    """One left-to-right recurrent pass; O(L * N * P) per head.

    xv: (B, L, D) values with D = H * P. Returns (B, L, D), plus the
    stacked states (B, L, H, N, P) when ``return_states`` (the backward
    pass needs them).
    """
    xv = as_tensor(xv)
    b, length, d = xv.shape
    h = abar.shape[2]
    if d % h != 0:
        raise ValueError(f"value channels {d} not divisible by {h} heads")
    if abar.shape[:2] != (b, length):
        raise ValueError(f"coefficient batch/length {abar.shape[:2]} != values {(b, length)}")
    p = d // h
    n = bbar.shape[3]
    xh = xv.reshape(b, length, h, p)
    state = np.zeros((b, h, n, p))
    out = np.empty((b, length, h, p))
    states = np.empty((b, length, h, n, p)) if return_states else None
    for t in range(length):
        state = abar[:, t, :, None, None] * state \
            + bbar[:, t, :, :, None] * xh[:, t, :, None, :]
        if return_states:
            states[:, t] = state
        out[:, t] = np.einsum("bhnp,bhn->bhp", state, c[:, t])
    y = out.reshape(b, length, d)
    return (y, states) if return_states else y


# ---------------------------------------------------------------------------
# Dense materializers (the oracles)
# ---------------------------------------------------------------------------

def _squeeze_batch(arr: np.ndarray) -> np.ndarray:
    if arr.ndim >= 3 and arr.shape[0] == 1:
        return arr[0]
    return arr


def ss_materialize(abar: np.ndarray, bbar: np.ndarray, c: np.ndarray,
                   seq_len: int | None = None) -> MaterializedMixer:
    """Dense lower-triangular matrices of the scan, per head.

    Entry (i, j) for i >= j is c_i^T (prod_{k=j+1..i} abar_k) bbar_j; the
    product is empty (= 1) on the diagonal. Strictly-upper entries are
    exactly zero. Coefficients are per-sequence: abar (L, H), bbar and c
    (L, H, N); a leading batch axis of size 1 is squeezed.
    """
    abar = _squeeze_batch(as_tensor(abar))
    bbar = _squeeze_batch(as_tensor(bbar))
    c = _squeeze_batch(as_tensor(c))
    length, h = abar.shape
    if seq_len is not None and seq_len != length:
        raise ValueError(f"seq_len {seq_len} != coefficient length {length}")
    if length > 256:
        raise ValueError("dense materialization is capped at L = 256")
    per_head = np.zeros((h, length, length))
    for head in range(h):
        # G[i, j] = prod_{k=j+1..i} abar_k, built row by row
        g = np.zeros((length, length))
        g[0, 0] = 1.0
        for i in range(1, length):
            g[i, :i] = abar[i, head] * g[i - 1, :i]
            g[i, i] = 1.0
        cb = c[:, head] @ bbar[:, head].T  # (L, L): c_i . bbar_j
        per_head[head] = np.tril(cb * g)
    return MaterializedMixer(per_head=per_head, causal=True)


def ss_materialize_general(a_mats: np.ndarray, b_vecs: np.ndarray,
                           c_vecs: np.ndarray) -> np.ndarray:
    """Single-head semiseparable matrix with full N x N transitions.

    a_mats (L, N, N), b_vecs and c_vecs (L, N). Entry (i, j), i >= j, is
    c_i^T A_i A_{i-1} ... A_{j+1} b_j. Only used as a rank-test oracle —
    the scan path is scalar-transition.
    """
    a_mats = as_tensor(a_mats)
    b_vecs = as_tensor(b_vecs)
    c_vecs = as_tensor(c_vecs)
    length = a_mats.shape[0]
    m = np.zeros((length, length))
    for j in range(length):
        w = b_vecs[j]
        m[j, j] = c_vecs[j] @ w
        for i in range(j + 1, length):
            w = a_mats[i] @ w
            m[i, j] = c_vecs[i] @ w
    return m


def quasi_matrix_from_coeffs(fwd: SsmCoeffs | tuple, bwd: SsmCoeffs | tuple,
                             delta: np.ndarray) -> MaterializedMixer:
    """Dense quasiseparable matrices directly from coefficient sequences.

    Lower triangle (i > j) uses the forward coefficients as in
    ``ss_materialize``; the upper triangle is the strictly-lower part of
    the backward matrix composed with a flip of both axes (the backward
    coefficients are indexed along the *reversed* sequence, matching how
    the scan consumes them); the diagonal is the free ``delta`` (L, H).
    """
    mf = ss_materialize(*fwd).per_head
    mb = ss_materialize(*bwd).per_head
    delta = _squeeze_batch(as_tensor(delta))
    h, length, _ = mf.shape
    per_head = np.empty_like(mf)
    for head in range(h):
        lower = np.tril(mf[head], k=-1)
        upper = np.tril(mb[head], k=-1)[::-1, ::-1]
        per_head[head] = lower + upper + np.diag(delta[:, head])
    return MaterializedMixer(per_head=per_head)


# ---------------------------------------------------------------------------
# Quasiseparable apply and materialization (projection form)
# ---------------------------------------------------------------------------

def qs_build_coeffs(params: QuasiParams, x: np.ndarray):
    """Forward coefficients from x, backward from flip(x), diagonal deltas."""
    x = as_tensor(x)
    fwd = discretize(params.fwd, x)
    bwd = discretize(params.bwd, flip_seq(x))
    delta = x @ params.delta_w  # (B, L, H)
    return fwd, bwd, delta


def qs_apply_branches(params: QuasiParams, x: np.ndarray, xv: np.ndarray):
    """The three terms of the decomposition, separately (each (B, L, D))."""
    x = as_tensor(x)
    xv = as_tensor(xv)
    if xv.shape[:2] != x.shape[:2]:
        raise ValueError(f"construction/value batch or length mismatch: "
                         f"{x.shape[:2]} vs {xv.shape[:2]}")
    fwd, bwd, delta = qs_build_coeffs(params, x)
    y_f = shift_right(ss_scan(xv, *fwd))
    y_b = flip_seq(shift_right(ss_scan(flip_seq(xv), *bwd)))
    b, length, d = xv.shape
    h = params.n_heads
    y_d = (delta[..., None] * xv.reshape(b, length, h, d // h)).reshape(b, length, d)
    return y_f, y_b, y_d


def qs_apply(params: QuasiParams, x: np.ndarray, xv: np.ndarray) -> np.ndarray:
    """Quasiseparable mixing of the value stream xv, construction driven
    by x: shift(SS(xv)) + flip(shift(SS(flip(xv)))) + delta * xv."""
    y_f, y_b, y_d = qs_apply_branches(params, x, xv)
    return y_f + y_b + y_d


def qs_materialize(params: QuasiParams, x: np.ndarray,
                   seq_len: int | None = None) -> MaterializedMixer:
    """Dense per-head matrices that reproduce ``qs_apply`` exactly.

    Composed the same way as the apply path: with S the right-shift matrix
    and F the flip, M = S @ M_fwd + F @ S @ M_bwd @ F + diag(delta). x
    must carry a single sequence (batch axis of size 1 is accepted).
    """
    x = as_tensor(x)
    if x.ndim == 2:
        x = x[None]
    if x.shape[0] != 1:
        raise ValueError("materialization is per-sequence; pass batch size 1")
    if seq_len is not None and seq_len != x.shape[1]:
        raise ValueError(f"seq_len {seq_len} != sequence length {x.shape[1]}")
    fwd, bwd, delta = qs_build_coeffs(params, x)
    mf = ss_materialize(*fwd).per_head
    mb = ss_materialize(*bwd).per_head
    delta = delta[0]  # (L, H)
    h, length, _ = mf.shape
    per_head = np.empty_like(mf)
    for head in range(h):
        lower = np.zeros((length, length))
        lower[1:] = mf[head][:-1]             # S @ M_fwd
        upper = np.zeros((length, length))
        upper[1:] = mb[head][:-1]
        upper = upper[::-1, ::-1]             # F @ (S @ M_bwd) @ F
        per_head[head] = lower + upper + np.diag(delta[:, head])
    return MaterializedMixer(per_head=per_head)


# ---------------------------------------------------------------------------
# Rank characterization checks
# ---------------------------------------------------------------------------

def check_semisep_rank(m: np.ndarray, n_bound: int,
                       rel_tol: float = 1e-8) -> VerificationReport:
    """Every maximal on-or-below-diagonal block m[i:, :i+1] must have rank
    <= n_bound. Any lower-triangle submatrix sits inside one of these, so
    checking the maximal blocks suffices."""
    m = as_tensor(m)
    length = m.shape[0]
    if m.shape != (length, length) or length > 64:
        raise ValueError(f"expected square matrix with L <= 64, got {m.shape}")
    if np.any(np.triu(m, k=1) != 0.0):
        raise ValueError("semiseparable rank check expects a lower-triangular matrix")
    report = VerificationReport(suite="semiseparable-rank")
    max_rank, worst = 0, 0
    for i in range(length):
        r = numerical_rank(m[i:, :i + 1], rel_tol)
        if r > max_rank:
            max_rank, worst = r, i
    report.add("max_block_rank", measured=max_rank, threshold=n_bound,
               detail=f"worst split i={worst} over {length} maximal blocks")
    return report


def check_quasi_rank(m: np.ndarray, n_bound: int,
                     rel_tol: float = 1e-8) -> VerificationReport:
    """Every maximal strictly-lower block m[i+1:, :i+1] and strictly-upper
    block m[:i+1, i+1:] must have rank <= n_bound."""
    m = as_tensor(m)
    length = m.shape[0]
    if m.shape != (length, length) or length > 64:
        raise ValueError(f"expected square matrix with L <= 64, got {m.shape}")
    report = VerificationReport(suite="quasiseparable-rank")
    max_rank, worst = 0, ("lower", 0)
    for i in range(length - 1):
        rl = numerical_rank(m[i + 1:, :i + 1], rel_tol)
        ru = numerical_rank(m[:i + 1, i + 1:], rel_tol)
        if rl > max_rank:
            max_rank, worst = rl, ("lower", i)
        if ru > max_rank:
            max_rank, worst = ru, ("upper", i)
    report.add("max_block_rank", measured=max_rank, threshold=n_bound,
               detail=f"worst {worst[0]} split i={worst[1]} over {length - 1} splits")
    return report


# ---------------------------------------------------------------------------
# Class-inclusion embeddings
# ---------------------------------------------------------------------------

def embed_lowrank_as_quasi(q: np.ndarray, k: np.ndarray):
    """Coefficients realizing the low-rank matrix q k^T as quasiseparable.

    All transitions are 1; forward c_i = q_i and bbar_j = k_j give the
    strictly-lower entries, reversed copies give the upper ones, and the
    diagonal is q_i . k_i. Returns (fwd, bwd, delta) suitable for
    ``quasi_matrix_from_coeffs``; the off-diagonal rank is at most d.
    """
    q = as_tensor(q)
    k = as_tensor(k)
    if q.shape != k.shape or q.ndim != 2:
        raise ValueError(f"q and k must share a (L, d) shape, got {q.shape} and {k.shape}")
    length, d = q.shape
    ones = np.ones((length, 1))
    fwd = SsmCoeffs(abar=ones, bbar=k[:, None, :], c=q[:, None, :])
    bwd = SsmCoeffs(abar=ones, bbar=k[::-1][:, None, :], c=q[::-1][:, None, :])
    delta = np.sum(q * k, axis=1)[:, None]  # (L, 1)
    return fwd, bwd, delta


def embed_addition_bidir_as_quasi(fwd: SsmHeadParams, bwd: SsmHeadParams,
                                  x: np.ndarray,
                                  tol: float = 1e-12) -> VerificationReport:
    """Show the addition-style bidirectional mixer is quasiseparable.

    The addition mixer SS_fwd + flip-composed SS_bwd (no shifts, diagonals
    included) constrains its diagonal to c_i^T bbar_i summed over both
    directions. Setting delta to exactly that value reproduces it
    entrywise; perturbing one delta then yields a matrix no addition
    model with the same off-diagonals can reach, which is recorded (the
    perturbation moves a single diagonal entry and nothing else).
    """
    x = as_tensor(x)
    if x.ndim == 2:
        x = x[None]
    if x.shape[0] != 1:
        raise ValueError("embedding check is per-sequence; pass batch size 1")
    if x.shape[1] > 64:
        raise ValueError("embedding check capped at L = 64")
    cf = discretize(fwd, x)
    cb = discretize(bwd, flip_seq(x))
    mf = ss_materialize(*cf).per_head
    mb = ss_materialize(*cb).per_head
    h, length, _ = mf.shape
    report = VerificationReport(suite="addition-bidirectional-embedding")
    for head in range(h):
        addition = mf[head] + mb[head][::-1, ::-1]
        delta = np.diag(addition)[:, None]  # the constrained diagonal
        quasi = quasi_matrix_from_coeffs(
            SsmCoeffs(cf.abar[0, :, head][:, None], cf.bbar[0, :, head][:, None],
                      cf.c[0, :, head][:, None]),
            SsmCoeffs(cb.abar[0, :, head][:, None], cb.bbar[0, :, head][:, None],
                      cb.c[0, :, head][:, None]),
            delta).per_head[0]
        err = float(np.max(np.abs(quasi - addition)))
        report.add(f"head{head}/addition_equals_quasi", measured=err, threshold=tol)
        # Strictness demo: bump one diagonal entry past the constraint.
        perturbed = quasi.copy()
        perturbed[0, 0] += 1.0
        off_diag_change = float(np.max(np.abs((perturbed - addition)
                                              - np.diag(np.diag(perturbed - addition)))))
        report.add(f"head{head}/delta_freedom_off_diagonal", measured=off_diag_change,
                   threshold=tol,
                   detail="perturbed delta differs from the addition mixer only on "
                          f"the diagonal (entry (0,0) by {perturbed[0, 0] - addition[0, 0]:+g})")
    return report
