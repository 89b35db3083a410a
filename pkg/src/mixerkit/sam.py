"""Sequence-alignment checks.

A mixer construction is sequence aligned when its parameters partition
into per-token values, so every leading principal submatrix depends only
on the corresponding token prefix. Two observable consequences are
checked here: materializing on a prefix reproduces the leading block of
the full matrix, and the same parametric functions extend the mixer to
longer sequences with the leading block unchanged.

Softmax attention is checked at the pre-normalization logit level: the
row softmax couples each entry to every token, so the alignment property
holds for the logits q_i . k_j only, which is recorded in the report.
"""

from __future__ import annotations

import numpy as np

from .core import as_tensor, rel_error
from .families import (MixerSpec, UnsupportedFamilyError,
                       materialize_attention_logits, materialize_family)
from .report import VerificationReport

PREFIX_TOL = 1e-12

_ATTENTION_CAVEAT = ("alignment holds at the logit level; the row softmax "
                     "normalization couples entries to the full sequence")


def _aligned_materialize(spec: MixerSpec, x_seq: np.ndarray):
    if spec.family == "attention":
        return materialize_attention_logits(spec, x_seq)
    return materialize_family(spec, x_seq)


def _require_dd(spec: MixerSpec, what: str) -> None:
    if spec.mode != "dd":
        raise UnsupportedFamilyError(
            f"{spec.family}/{spec.mode} has no data-dependent construction; "
            f"{what} is undefined (parameters are tied to a fixed length)")


def check_prefix_consistency(spec: MixerSpec, x: np.ndarray, i: int) -> VerificationReport:
    """Materialize on the full sequence and on the prefix x[:i+1]; the
    (i+1) x (i+1) leading blocks must agree to PREFIX_TOL."""
    _require_dd(spec, "prefix consistency")
    x_seq = as_tensor(x)
    if x_seq.ndim == 3:
        if x_seq.shape[0] != 1:
            raise ValueError("prefix check is per-sequence; pass batch size 1")
        x_seq = x_seq[0]
    length = x_seq.shape[0]
    if not (0 <= i < length):
        raise ValueError(f"prefix index {i} outside [0, {length})")
    full = _aligned_materialize(spec, x_seq).per_head
    prefix = _aligned_materialize(spec, x_seq[:i + 1]).per_head
    report = VerificationReport(suite=f"{spec.family}-prefix-consistency")
    detail = _ATTENTION_CAVEAT if spec.family == "attention" else ""
    for head in range(full.shape[0]):
        err = rel_error(full[head, :i + 1, :i + 1], prefix[head])
        report.add(f"head{head}/leading_block_i{i}", measured=err,
                   threshold=PREFIX_TOL, detail=detail)
    return report


def check_extendability(spec: MixerSpec, x_short: np.ndarray,
                        x_long: np.ndarray) -> VerificationReport:
    """Construct the mixer at the longer length with the same parametric
    functions (frozen scales included) and compare the leading L x L block
    against the length-L construction."""
    _require_dd(spec, "extendability")
    x_short = as_tensor(x_short)
    x_long = as_tensor(x_long)
    if x_short.ndim == 3:
        x_short = x_short[0]
    if x_long.ndim == 3:
        x_long = x_long[0]
    length = x_short.shape[0]
    if x_long.shape[0] <= length:
        raise ValueError("x_long must be strictly longer than x_short")
    if not np.array_equal(x_long[:length], x_short):
        raise ValueError("x_long must begin with x_short")
    short_m = _aligned_materialize(spec, x_short).per_head
    long_m = _aligned_materialize(spec, x_long).per_head
    report = VerificationReport(suite=f"{spec.family}-extendability")
    detail = _ATTENTION_CAVEAT if spec.family == "attention" else ""
    for head in range(short_m.shape[0]):
        err = rel_error(long_m[head, :length, :length], short_m[head])
        report.add(f"head{head}/leading_block_L{length}_to_L{x_long.shape[0]}",
                   measured=err, threshold=PREFIX_TOL, detail=detail)
    return report
