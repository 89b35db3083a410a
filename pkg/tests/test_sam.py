"""Sequence-alignment checks: prefix consistency and length extendability
for every data-dependent construction, and the documented unsupported
paths for fixed-length parameterizations."""

import numpy as np
import pytest

from mixerkit.core import Rng
from mixerkit.families import UnsupportedFamilyError, build_mixer
from mixerkit.framework import MixerConfig
from mixerkit.sam import check_extendability, check_prefix_consistency

DD_FAMILIES = ("toeplitz", "vandermonde", "cauchy", "lowrank", "attention",
               "quasiseparable")


def dd_spec(family, seq_len, seed=0):
    cfg = MixerConfig(seq_len=seq_len, in_channels=6, inner_dim=8, n_heads=2,
                      head_dim=4, qk_dim=3, data_dependent=True)
    return build_mixer(family, "dd", cfg, Rng(seed), n_state=3), cfg


@pytest.mark.parametrize("family", DD_FAMILIES)
def test_prefix_consistency_all_indices(family):
    spec, cfg = dd_spec(family, 10)
    x = Rng(1).normal((10, cfg.in_channels))
    for i in range(10):
        rep = check_prefix_consistency(spec, x, i)
        assert rep.passed, f"{family} failed at prefix {i}: {rep.max_measured}"


def test_prefix_full_sequence_trivially_passes():
    spec, cfg = dd_spec("lowrank", 6)
    x = Rng(2).normal((6, cfg.in_channels))
    rep = check_prefix_consistency(spec, x, 5)
    assert rep.passed and rep.max_measured == 0.0


def test_prefix_rejects_di():
    cfg = MixerConfig(seq_len=8, in_channels=6, inner_dim=8, n_heads=2,
                      head_dim=4, qk_dim=3)
    spec = build_mixer("dense", "di", cfg, Rng(3))
    with pytest.raises(UnsupportedFamilyError):
        check_prefix_consistency(spec, np.zeros((8, 6)), 2)
    dft = build_mixer("vandermonde", "dft", cfg, Rng(3))
    with pytest.raises(UnsupportedFamilyError):
        check_prefix_consistency(dft, np.zeros((8, 6)), 2)


def test_prefix_index_validation():
    spec, cfg = dd_spec("cauchy", 6)
    with pytest.raises(ValueError):
        check_prefix_consistency(spec, np.zeros((6, cfg.in_channels)), 6)


@pytest.mark.parametrize("family", DD_FAMILIES)
def test_extendability_8_to_16(family):
    spec, cfg = dd_spec(family, 8, seed=family.__len__())
    rng = Rng(4)
    x_short = rng.normal((8, cfg.in_channels))
    x_long = np.concatenate([x_short, rng.normal((8, cfg.in_channels))])
    rep = check_extendability(spec, x_short, x_long)
    assert rep.passed, f"{family}: {rep.max_measured}"


def test_extendability_rejects_fixed_length_families():
    cfg = MixerConfig(seq_len=8, in_channels=6, inner_dim=8, n_heads=2,
                      head_dim=4, qk_dim=3)
    for family, mode in (("dense", "di"), ("toeplitz", "di"),
                         ("vandermonde", "dft"), ("cauchy", "di")):
        spec = build_mixer(family, mode, cfg, Rng(5))
        with pytest.raises(UnsupportedFamilyError):
            check_extendability(spec, np.zeros((8, 6)), np.zeros((16, 6)))


def test_extendability_requires_prefix_relation():
    spec, cfg = dd_spec("lowrank", 8)
    rng = Rng(6)
    x_short = rng.normal((8, cfg.in_channels))
    x_long = rng.normal((16, cfg.in_channels))  # does not extend x_short
    with pytest.raises(ValueError):
        check_extendability(spec, x_short, x_long)


def test_attention_checked_at_logit_level():
    spec, cfg = dd_spec("attention", 8)
    x = Rng(7).normal((8, cfg.in_channels))
    rep = check_prefix_consistency(spec, x, 3)
    assert rep.passed
    assert any("logit" in c.detail for c in rep.checks)
    # post-softmax rows depend on the whole sequence, so the same leading
    # block taken after normalization genuinely differs
    from mixerkit.families import materialize_family
    full = materialize_family(spec, x).per_head[0][:4, :4]
    prefix = materialize_family(spec, x[:4]).per_head[0]
    assert np.max(np.abs(full - prefix)) > 1e-6
