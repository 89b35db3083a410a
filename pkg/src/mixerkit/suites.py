"""Verification suites behind ``mixerkit verify``: oracle equivalence of
every fast path against dense materialization, the shift/flip
decomposition identity, rank characterizations with negative controls,
sequence-alignment checks, the class-inclusion embeddings, and the
gradient checks.

Each suite returns a ``VerificationReport``; the CLI merges them and maps
the overall verdict to the exit code. Every check derives its randomness
from an explicit seed, so fan-out order cannot change results.
"""

from __future__ import annotations

import numpy as np

from . import core, families, gradcheck, sam, ssm, blocks
from .core import Rng, rel_error
from .framework import MixerConfig, apply_mixer
from .ptree import GradStore, named_arrays
from .report import VerificationReport

ORACLE_TOL = 1e-10
DECOMP_TOL = 1e-11
EMBED_TOL = 1e-12

SUITE_NAMES = ("oracle", "rank", "sam", "corollaries", "gradcheck")

_SMALL = dict(in_channels=8, n_heads=2, head_dim=4, qk_dim=4)
_N_STATE = 4


def _config(seq_len: int, dd: bool) -> MixerConfig:
    return MixerConfig(seq_len=seq_len, inner_dim=_SMALL["n_heads"] * _SMALL["head_dim"],
                       data_dependent=dd, **_SMALL)


def family_mode_pairs(family: str | None = None, mode: str | None = None):
    pairs = []
    for fam, modes in families.FAMILY_MODES.items():
        if family and fam != family:
            continue
        for m in modes:
            if mode and m != mode:
                continue
            pairs.append((fam, m))
    return pairs


# ---------------------------------------------------------------------------
# Oracle equivalence (fast/naive apply == materialize-then-mix)
# ---------------------------------------------------------------------------

def oracle_error(family: str, mode: str, seq_len: int, seed: int) -> float:
    rng = Rng(seed)
    cfg = _config(seq_len, dd=(mode == "dd"))
    spec = families.build_mixer(family, mode, cfg, rng, n_state=_N_STATE)
    x = rng.normal((1, seq_len, cfg.in_channels))
    v = rng.normal((1, seq_len, cfg.inner_dim))
    mixed = families.apply_family(spec, v, x if mode == "dd" else None) - v
    m = families.materialize_family(spec, x if mode == "dd" else None)
    oracle = apply_mixer(m, v)
    return rel_error(mixed, oracle)


def suite_oracle(family: str | None = None, mode: str | None = None,
                 seq_lens=(4, 16, 64), n_seeds: int = 50,
                 base_seed: int = 0) -> VerificationReport:
    report = VerificationReport(suite="oracle-equivalence")
    for fam, m in family_mode_pairs(family, mode):
        for seq_len in seq_lens:
            worst = 0.0
            for s in range(n_seeds):
                err = oracle_error(fam, m, seq_len, base_seed + 1000 + 17 * s)
                worst = max(worst, err)
            report.add(f"{fam}/{m}/L{seq_len}", measured=worst, threshold=ORACLE_TOL,
                       detail=f"max over {n_seeds} seeds")
    return report


def suite_decomposition_identity(n_instances: int = 200, base_seed: int = 0,
                                 tol: float = DECOMP_TOL) -> VerificationReport:
    """shift/flip decomposition: the quasiseparable apply must equal its
    dense materialization acting on the values."""
    report = VerificationReport(suite="decomposition-identity")
    seq_lens = (2, 3, 4, 8, 16, 64)
    worst, worst_case = 0.0, ""
    for i in range(n_instances):
        seq_len = seq_lens[i % len(seq_lens)]
        rng = Rng(base_seed + 5000 + i)
        params = ssm.init_quasi_params(rng, in_channels=6, n_heads=2, n_state=3)
        x = rng.normal((1, seq_len, 6))
        xv = rng.normal((1, seq_len, 8))
        fast = ssm.qs_apply(params, x, xv)
        dense = apply_mixer(ssm.qs_materialize(params, x), xv)
        err = rel_error(fast, dense)
        if err > worst:
            worst, worst_case = err, f"instance {i}, L={seq_len}"
    report.add("qs_apply_vs_materialize", measured=worst, threshold=tol,
               detail=f"{n_instances} instances, worst at {worst_case}")
    return report


# ---------------------------------------------------------------------------
# Rank characterizations
# ---------------------------------------------------------------------------

def _random_ss_coeffs(rng: Rng, seq_len: int, n_state: int):
    abar = rng.uniform((seq_len, 1), 0.75, 0.98)
    bbar = rng.normal((seq_len, 1, n_state))
    c = rng.normal((seq_len, 1, n_state))
    return ssm.SsmCoeffs(abar=abar, bbar=bbar, c=c)


def suite_rank(base_seed: int = 0, bounds=(1, 2, 4, 8),
               seq_lens=(8, 16, 32)) -> VerificationReport:
    report = VerificationReport(suite="rank-characterization")
    for n in bounds:
        for seq_len in seq_lens:
            if seq_len <= n:
                continue
            rng = Rng(base_seed + 9000 + 31 * n + seq_len)
            # semiseparable: scalar-transition materialization
            m = ssm.ss_materialize(*_random_ss_coeffs(rng, seq_len, n)).per_head[0]
            rep = ssm.check_semisep_rank(m, n)
            report.add(f"semisep/N{n}/L{seq_len}", rep.max_measured, n)
            neg = ssm.check_semisep_rank(m, n - 1)
            report.add(f"semisep/N{n}/L{seq_len}/negative_control",
                       measured=0.0 if not neg.passed else 1.0, threshold=0.0,
                       detail="bound N-1 must fail on a generic instance")
            # semiseparable with dense N x N transitions (oracle-only path)
            a_mats = rng.normal((seq_len, n, n), std=1.0 / np.sqrt(n))
            a_mats = 0.9 * a_mats / np.maximum(
                np.linalg.norm(a_mats, ord=2, axis=(1, 2)), 1e-12)[:, None, None]
            mg = ssm.ss_materialize_general(a_mats, rng.normal((seq_len, n)),
                                            rng.normal((seq_len, n)))
            repg = ssm.check_semisep_rank(np.tril(mg), n)
            report.add(f"semisep_denseA/N{n}/L{seq_len}", repg.max_measured, n)
            # quasiseparable via the projection-form materializer; the
            # construction stream needs >= N channels or the coefficient
            # vectors cannot span the full state width
            c_in = max(6, 2 * n)
            params = ssm.init_quasi_params(rng, in_channels=c_in, n_heads=1,
                                           n_state=n)
            x = rng.normal((1, seq_len, c_in))
            qm = ssm.qs_materialize(params, x).per_head[0]
            qrep = ssm.check_quasi_rank(qm, n)
            report.add(f"quasi/N{n}/L{seq_len}", qrep.max_measured, n)
            qneg = ssm.check_quasi_rank(qm, n - 1)
            report.add(f"quasi/N{n}/L{seq_len}/negative_control",
                       measured=0.0 if not qneg.passed else 1.0, threshold=0.0,
                       detail="bound N-1 must fail on a generic instance")
    # dense random matrices are not low-rank structured: the check must fail
    rng = Rng(base_seed + 99)
    dense = rng.normal((16, 16))
    dense_rep = ssm.check_quasi_rank(dense, 4)
    report.add("dense/negative_control", measured=0.0 if not dense_rep.passed else 1.0,
               threshold=0.0, detail="bound below min block dimension must fail")
    # the low-rank family satisfies a global rank bound of qk_dim
    cfg = _config(16, dd=True)
    spec = families.build_mixer("lowrank", "dd", cfg, Rng(base_seed + 123))
    x = Rng(base_seed + 124).normal((1, 16, cfg.in_channels))
    fam_rep = families.family_rank_report(families.materialize_family(spec, x),
                                          cfg.qk_dim)
    report.merge(fam_rep)
    return report


# ---------------------------------------------------------------------------
# Sequence alignment
# ---------------------------------------------------------------------------

SAM_FAMILIES = ("toeplitz", "vandermonde", "cauchy", "lowrank", "attention",
                "quasiseparable")


def suite_sam(base_seed: int = 0, family: str | None = None,
              parts=("prefix", "extendability")) -> VerificationReport:
    report = VerificationReport(suite="sequence-alignment")
    fams = [family] if family else list(SAM_FAMILIES) + ["dense"]
    for fam_idx, fam in enumerate(fams):
        if "dd" not in families.FAMILY_MODES[fam]:
            report.add_skipped(f"{fam}/alignment",
                               "no data-dependent construction; parameters are "
                               "tied to a fixed length")
            continue
        rng = Rng(base_seed + 2000 + 13 * fam_idx)
        if "prefix" in parts:
            seq_len = 12
            cfg = _config(seq_len, dd=True)
            spec = families.build_mixer(fam, "dd", cfg, rng, n_state=_N_STATE)
            x = rng.normal((seq_len, cfg.in_channels))
            for i in (0, seq_len // 2, seq_len - 1):
                report.merge(sam.check_prefix_consistency(spec, x, i))
        if "extendability" in parts:
            cfg8 = _config(8, dd=True)
            spec8 = families.build_mixer(fam, "dd", cfg8, rng, n_state=_N_STATE)
            x_short = rng.normal((8, cfg8.in_channels))
            x_long = np.concatenate([x_short, rng.normal((8, cfg8.in_channels))])
            report.merge(sam.check_extendability(spec8, x_short, x_long))
    return report


# ---------------------------------------------------------------------------
# Class-inclusion embeddings
# ---------------------------------------------------------------------------

def suite_corollaries(n_instances: int = 50, base_seed: int = 0) -> VerificationReport:
    report = VerificationReport(suite="corollary-embeddings")
    worst_lr = 0.0
    for i in range(n_instances):
        rng = Rng(base_seed + 3000 + i)
        q = rng.normal((8, 2))
        k = rng.normal((8, 2))
        quasi = ssm.quasi_matrix_from_coeffs(*ssm.embed_lowrank_as_quasi(q, k))
        worst_lr = max(worst_lr, float(np.max(np.abs(quasi.per_head[0] - q @ k.T))))
    report.add("lowrank_embedding", measured=worst_lr, threshold=EMBED_TOL,
               detail=f"{n_instances} instances at L=8, d=2")
    worst_add = 0.0
    for i in range(n_instances):
        rng = Rng(base_seed + 4000 + i)
        fwd = ssm.init_ssm_head(rng, in_channels=5, n_heads=1, n_state=2)
        bwd = ssm.init_ssm_head(rng, in_channels=5, n_heads=1, n_state=2)
        x = rng.normal((1, 8, 5))
        rep = ssm.embed_addition_bidir_as_quasi(fwd, bwd, x, tol=EMBED_TOL)
        worst_add = max(worst_add, max(c.measured for c in rep.checks
                                       if c.name.endswith("addition_equals_quasi")))
        if not rep.passed:
            report.merge(rep)
    report.add("addition_bidirectional_embedding", measured=worst_add,
               threshold=EMBED_TOL, detail=f"{n_instances} instances at L=8, N=2")
    return report


# ---------------------------------------------------------------------------
# Gradient checks
# ---------------------------------------------------------------------------

def _fd_against(loss_fn, target: np.ndarray, analytic: np.ndarray) -> float:
    base = target.copy()

    def f(theta):
        np.copyto(target, theta)
        try:
            return loss_fn()
        finally:
            np.copyto(target, base)

    fd = gradcheck.finite_difference_grad(f, base.copy())
    np.copyto(target, base)
    return gradcheck.grad_deviation(analytic, fd)


def _check_elementwise(rng: Rng) -> float:
    x = rng.normal((3, 5))
    w = rng.normal((3, 5))
    errs = [
        _fd_against(lambda: float(np.sum(w * core.silu(x))), x,
                    gradcheck.silu_backward(x, w)),
        _fd_against(lambda: float(np.sum(w * core.softplus(x))), x,
                    gradcheck.softplus_backward(x, w)),
        _fd_against(lambda: float(np.sum(w * core.softmax_rows(x))), x,
                    gradcheck.softmax_rows_backward(core.softmax_rows(x), w)),
    ]
    return max(errs)


def _check_rms_norm(rng: Rng) -> float:
    x = rng.normal((2, 4, 6))
    scale = rng.normal((6,)) + 1.5
    w = rng.normal((2, 4, 6))

    def loss():
        out, _ = blocks.rms_norm(x, scale)
        return float(np.sum(w * out))

    _, inv = blocks.rms_norm(x, scale)
    gx, gscale = gradcheck.rms_norm_backward(x, scale, inv, w)
    return max(_fd_against(loss, x, gx), _fd_against(loss, scale, gscale))


def _check_conv(rng: Rng) -> float:
    from .framework import depthwise_conv_centered
    v = rng.normal((2, 7, 3))
    kern = rng.normal((3, 5))
    bias = rng.normal((3,))
    w = rng.normal((2, 7, 3))

    def loss():
        return float(np.sum(w * (depthwise_conv_centered(v, kern) + bias)))

    gv, gk, gb = gradcheck.conv_centered_backward(v, kern, w)
    return max(_fd_against(loss, v, gv), _fd_against(loss, kern, gk),
               _fd_against(loss, bias, gb))


def _check_linear(rng: Rng) -> float:
    x = rng.normal((3, 4))
    wmat = rng.normal((4, 5))
    w = rng.normal((3, 5))

    def loss():
        return float(np.sum(w * (x @ wmat)))

    return max(_fd_against(loss, x, w @ wmat.T),
               _fd_against(loss, wmat, x.T @ w))


def _check_embedding(rng: Rng) -> float:
    table = rng.normal((6, 4))
    tokens = rng.integers(0, 6, (2, 5))
    w = rng.normal((2, 5, 4))

    def loss():
        return float(np.sum(w * table[tokens]))

    g = np.zeros_like(table)
    np.add.at(g, tokens.reshape(-1), w.reshape(-1, 4))
    return _fd_against(loss, table, g)


def _check_ss_scan(rng: Rng) -> float:
    b, seq_len, h, n, p = 2, 6, 2, 3, 2
    xv = rng.normal((b, seq_len, h * p))
    abar = rng.uniform((b, seq_len, h), 0.3, 0.95)
    bbar = rng.normal((b, seq_len, h, n))
    c = rng.normal((b, seq_len, h, n))
    w = rng.normal((b, seq_len, h * p))

    def loss():
        return float(np.sum(w * ssm.ss_scan(xv, abar, bbar, c)))

    _, states = ssm.ss_scan(xv, abar, bbar, c, return_states=True)
    gxv, ga, gb, gc = gradcheck.backward_ss_scan(xv, abar, bbar, c, states, w)
    return max(_fd_against(loss, xv, gxv), _fd_against(loss, abar, ga),
               _fd_against(loss, bbar, gb), _fd_against(loss, c, gc))


def _check_discretize(rng: Rng) -> float:
    c_in, h, n = 4, 2, 2
    params = ssm.init_ssm_head(rng, c_in, h, n)
    x = rng.normal((1, 5, c_in))
    wa = rng.normal((1, 5, h))
    wb = rng.normal((1, 5, h, n))
    wc = rng.normal((1, 5, h, n))

    def loss():
        co = ssm.discretize(params, x)
        return float(np.sum(wa * co.abar) + np.sum(wb * co.bbar) + np.sum(wc * co.c))

    coeffs, dt = ssm.discretize_with_dt(params, x)
    store = GradStore(params)
    gx = gradcheck.backward_discretize(params, x, coeffs, dt, wa, wb, wc, store)
    errs = [_fd_against(loss, x, gx)]
    grads = store.by_path()
    for name, arr in named_arrays(params):
        errs.append(_fd_against(loss, arr, grads[name]))
    return max(errs)


def _mix_layer(rng: Rng, bidirectional: bool) -> blocks.SsmLayerParams:
    cfg = blocks.EncoderConfig(n_layers=1, c_model=4, expand=1, n_heads=2,
                               head_dim=2, n_state=2, vocab=5, conv_width=3,
                               bidirectional=bidirectional)
    return blocks.init_layer(cfg, rng)


def _check_mix(rng: Rng, bidirectional: bool = True) -> float:
    layer = _mix_layer(rng, bidirectional)
    u = rng.normal((1, 5, 4))
    v = rng.normal((1, 5, 4))
    w = rng.normal((1, 5, 4))

    def loss():
        y, _ = blocks.mix_forward(layer, u, v)
        return float(np.sum(w * y))

    _, ctx = blocks.mix_forward(layer, u, v)
    store = GradStore(layer)
    gu, gv = gradcheck.backward_mix(layer, ctx, w, store)
    errs = [_fd_against(loss, u, gu), _fd_against(loss, v, gv)]
    grads = store.by_path()
    for name, arr in named_arrays(layer):
        if name in ("norm_scale", "w_v", "w_z", "conv_w", "conv_b",
                    "gate_scale", "w_out"):
            continue  # not on the mix path
        errs.append(_fd_against(loss, arr, grads[name]))
    return max(errs)


def _check_layer(rng: Rng) -> float:
    layer = _mix_layer(rng, True)
    x = rng.normal((1, 6, 4))
    w = rng.normal((1, 6, 4))

    def loss():
        out, _ = blocks.layer_forward(layer, x)
        return float(np.sum(w * out))

    _, ctx = blocks.layer_forward(layer, x)
    store = GradStore(layer)
    gx = gradcheck.backward_layer(layer, ctx, w, store)
    errs = [_fd_against(loss, x, gx)]
    grads = store.by_path()
    for name, arr in named_arrays(layer):
        errs.append(_fd_against(loss, arr, grads[name]))
    return max(errs)


def _check_encoder(rng: Rng, bidirectional: bool = True) -> float:
    cfg = blocks.EncoderConfig(n_layers=1, c_model=6, expand=1, n_heads=2,
                               head_dim=3, n_state=2, vocab=5, conv_width=3,
                               bidirectional=bidirectional)
    params = blocks.init_encoder(cfg, rng)
    # unit-scale embedding: near zero the pre-norm curvature (~1/||x||^3)
    # swamps the O(h^2) oracle without any gradient being wrong
    params.embed[:] = rng.normal(params.embed.shape, std=0.5)
    tokens = rng.integers(0, 5, (1, 8))
    targets = rng.integers(0, 5, (1, 8))

    def loss():
        logits = blocks.encoder_forward(cfg, params, tokens)
        return gradcheck.cross_entropy(logits, targets)[0]

    logits, ctx = blocks.encoder_forward(cfg, params, tokens, with_ctx=True)
    _, glogits = gradcheck.cross_entropy(logits, targets)
    store = GradStore(params)
    gradcheck.backward_encoder(cfg, params, ctx, glogits, store)
    grads = store.by_path()
    errs = []
    for name, arr in named_arrays(params):
        errs.append(_fd_against(loss, arr, grads[name]))
    return max(errs)


GRADCHECK_OPS = (
    ("elementwise", _check_elementwise, 20),
    ("rms_norm", _check_rms_norm, 20),
    ("conv_centered", _check_conv, 20),
    ("linear", _check_linear, 20),
    ("embedding", _check_embedding, 20),
    ("ss_scan", _check_ss_scan, 20),
    ("discretize", _check_discretize, 20),
    ("mix_bidirectional", lambda rng: _check_mix(rng, True), 10),
    ("mix_causal", lambda rng: _check_mix(rng, False), 10),
    ("layer", _check_layer, 5),
    ("encoder_e2e", _check_encoder, 3),
)


def suite_gradcheck(base_seed: int = 0) -> VerificationReport:
    report = VerificationReport(suite="gradcheck")
    for name, fn, n_seeds in GRADCHECK_OPS:
        worst = 0.0
        for s in range(n_seeds):
            worst = max(worst, fn(Rng(base_seed + 7000 + 97 * s)))
        report.add(name, measured=worst, threshold=gradcheck.FD_TOL,
                   detail=f"max over {n_seeds} random configurations, "
                          f"h={gradcheck.FD_STEP}")
    return report


# ---------------------------------------------------------------------------
# Composition
# ---------------------------------------------------------------------------

def build_suite_jobs(checks=None, family: str | None = None,
                     mode: str | None = None, seq_len: int = 16,
                     seed: int = 0, sam_parts=("prefix", "extendability")):
    """(name, callable) pairs for the requested check groups."""
    selected = set(checks or SUITE_NAMES)
    unknown = selected - set(SUITE_NAMES)
    if unknown:
        raise ValueError(f"unknown checks: {sorted(unknown)}")
    jobs = []
    if "oracle" in selected:
        sweep = tuple(dict.fromkeys((4, seq_len, 64)))
        jobs.append(("oracle", lambda: suite_oracle(
            family, mode, seq_lens=sweep, n_seeds=10, base_seed=seed)))
        if family in (None, "quasiseparable"):
            jobs.append(("decomposition", lambda: suite_decomposition_identity(
                n_instances=60, base_seed=seed)))
    if "rank" in selected:
        jobs.append(("rank", lambda: suite_rank(base_seed=seed)))
    if "sam" in selected:
        jobs.append(("sam", lambda: suite_sam(base_seed=seed, family=family,
                                              parts=sam_parts)))
    if "corollaries" in selected:
        jobs.append(("corollaries", lambda: suite_corollaries(
            n_instances=25, base_seed=seed)))
    if "gradcheck" in selected:
        jobs.append(("gradcheck", lambda: suite_gradcheck(base_seed=seed)))
    return jobs
