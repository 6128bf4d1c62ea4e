"""Flat key-value configuration files."""

import pytest

from gshape import PipelineConfig, parse_config
from gshape.config import format_config
from gshape.errors import ConfigError


class TestParsing:
    def test_defaults_round_trip_exactly(self):
        cfg = PipelineConfig()
        again = parse_config(format_config(cfg))
        assert again == cfg

    def test_modified_values_round_trip(self):
        cfg = PipelineConfig(dims=(48, 40), modes=7, membrane=0.125,
                             lambda0=8.5, latent_std=(2.5, 1.25, 0.5),
                             residual_uncertainty="none", seed=99)
        again = parse_config(format_config(cfg))
        assert again == cfg

    def test_comments_and_blanks_ignored(self):
        cfg = parse_config("\n# a comment\nmodes = 5  # trailing\n\n")
        assert cfg.modes == 5

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            parse_config("not_a_key = 3\n")

    def test_duplicate_key_rejected(self):
        with pytest.raises(ConfigError):
            parse_config("modes = 3\nmodes = 4\n")

    def test_bad_value_rejected(self):
        with pytest.raises(ConfigError):
            parse_config("modes = banana\n")

    def test_missing_equals_rejected(self):
        with pytest.raises(ConfigError):
            parse_config("just some words\n")


class TestValidation:
    def test_bad_uncertainty_mode(self):
        with pytest.raises(ConfigError):
            PipelineConfig(residual_uncertainty="full")

    def test_bad_gamma_pair(self):
        with pytest.raises(ConfigError):
            PipelineConfig(gamma1=0.0, gamma2=0.0)

    def test_bad_hyperpriors(self):
        with pytest.raises(ConfigError):
            PipelineConfig(lambda0=-1.0)
