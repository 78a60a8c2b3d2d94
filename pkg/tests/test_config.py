from fractions import Fraction

import numpy as np
import pytest

from onlinebayes import rng
from onlinebayes.config import (
    ConfigParseError,
    ConfigValidationError,
    DdpConfig,
    GpConfig,
    exact_number,
    parse_text,
    set_path,
    validate,
)


def test_rational_strings_parse_exactly():
    assert exact_number("3/4") == Fraction(3, 4)
    assert exact_number("6/3") == 2
    with pytest.raises(ValueError):
        exact_number(True)


def test_parse_error_reports_position():
    with pytest.raises(ConfigParseError, match="line 3, column 1"):
        parse_text("a: 1\nb: [1, 2\n")
    with pytest.raises(ConfigParseError):
        parse_text("- 1\n- 2\n")


def test_unknown_key_is_named():
    with pytest.raises(ConfigValidationError, match="params.gamma"):
        validate({"family": "gp", "operation": "batch", "seed": 1, "params": {"gamma": 1}})


def test_discriminator_selects_family():
    cfg = validate({"family": "gp", "operation": "batch", "seed": 1})
    assert isinstance(cfg, GpConfig) and cfg.params.n == 200
    doc = {
        "family": "ddp",
        "operation": "sample",
        "seed": 0,
        "params": {"sites": [0.0], "alpha": {"intercept": 1.0}, "base": {"family": "normal"}},
    }
    assert isinstance(validate(doc), DdpConfig)


def test_nonpositive_concentration_is_rejected():
    doc = {
        "family": "ddp",
        "operation": "sample",
        "seed": 0,
        "params": {"sites": [0.0, 2.0], "alpha": {"intercept": 1.0, "slope": -1.0}, "base": {"family": "normal"}},
    }
    with pytest.raises(ConfigValidationError, match="concentration"):
        validate(doc)


def test_deterministic_operations_need_no_seed():
    cfg = validate({"family": "dp", "operation": "posterior", "params": {"alpha": {"atoms": [[1, 1]]}}})
    assert cfg.seed is None


def test_set_path_creates_nested_keys():
    doc = {}
    set_path(doc, "params.alpha.mass", 3)
    assert doc == {"params": {"alpha": {"mass": 3}}}


def test_blocks_cover_total_and_are_seeded_independently():
    sizes = [s for s, _ in rng.blocks(1, 20_000)]
    assert sizes == [rng.BLOCK, rng.BLOCK, 20_000 - 2 * rng.BLOCK]
    first = [g.standard_normal(3) for _, g in rng.blocks(1, 20_000)]
    again = [g.standard_normal(3) for _, g in rng.blocks(1, 100)]
    assert np.array_equal(first[0], again[0])
    assert not np.array_equal(first[0], first[1])
