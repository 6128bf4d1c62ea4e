"""Flat key-value pipeline configuration.

The on-disk format is one ``key = value`` assignment per line; blank lines
and ``#`` comments are ignored.  Every key has a typed default, unknown keys
are rejected, and serialising then re-parsing reproduces every value exactly
(floats are written with ``repr``).
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .errors import ConfigError


def _parse_bool(text):
    if text.lower() in ("true", "1", "yes"):
        return True
    if text.lower() in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int_tuple(text):
    return tuple(int(tok) for tok in text.split(",") if tok.strip())


def _parse_float_tuple(text):
    return tuple(float(tok) for tok in text.split(",") if tok.strip())


@dataclass
class PipelineConfig:
    """Every knob of the training/registration/synthesis pipeline."""

    # lattice and data
    dims: tuple = (32, 32)
    classes: int = 2
    voxel_size: tuple = ()
    # model size
    modes: int = 32
    # metric operator weights
    membrane: float = 0.001
    bending: float = 0.02
    elastic_div: float = 0.0025
    elastic_shear: float = 0.005
    absolute: float = 1e-4
    # prior mixture and hyperpriors
    gamma1: float = 1.0
    gamma2: float = 1.0
    lambda0: float = 17.0
    nu0: float = 10.0
    dirichlet_eps: float = 1e-3
    # integration and optimisation
    steps: int = 8
    outer_iterations: int = 32
    tolerance: float = 1e-6
    subject_rounds: int = 2
    register_rounds: int = 16
    pcg_tolerance: float = 1e-6
    pcg_max_iterations: int = 64
    residual_uncertainty: str = "diagonal"
    # execution
    seed: int = 0
    workers: int = 1
    # synthetic-data generation
    true_modes: int = 2
    train_subjects: int = 20
    test_subjects: int = 20
    true_lambda: float = 17.0
    latent_std: tuple = (3.0, 1.5)
    template_amplitude: float = 4.0
    smooth_fwhm: float = 1.5

    def __post_init__(self):
        if self.residual_uncertainty not in ("none", "diagonal"):
            raise ConfigError(
                f"residual_uncertainty must be 'none' or 'diagonal', "
                f"got {self.residual_uncertainty!r}"
            )
        if self.modes < 1:
            raise ConfigError("modes must be >= 1")
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.gamma1 < 0 or self.gamma2 < 0 or self.gamma1 + self.gamma2 <= 0:
            raise ConfigError("gamma weights must be nonnegative, not both zero")
        if self.lambda0 <= 0 or self.nu0 <= 0:
            raise ConfigError("lambda0 and nu0 must be positive")


_PARSERS = {
    tuple: None,  # handled per field below
    int: int,
    float: float,
    str: str,
    bool: _parse_bool,
}

_TUPLE_PARSERS = {
    "dims": _parse_int_tuple,
    "voxel_size": _parse_float_tuple,
    "latent_std": _parse_float_tuple,
}


def parse_config(text: str) -> PipelineConfig:
    """Parse configuration text; unknown keys raise :class:`ConfigError`."""
    known = {f.name: f for f in fields(PipelineConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        ftype = known[key].type
        try:
            if key in _TUPLE_PARSERS:
                values[key] = _TUPLE_PARSERS[key](val)
            elif ftype in ("int", int):
                values[key] = int(val)
            elif ftype in ("float", float):
                values[key] = float(val)
            elif ftype in ("str", str):
                values[key] = val
            else:
                raise ConfigError(f"line {lineno}: unhandled type for {key!r}")
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from exc
    return PipelineConfig(**values)


def load_config(path) -> PipelineConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def format_config(cfg: PipelineConfig) -> str:
    """Serialise a configuration so that parsing reproduces it exactly."""
    lines = []
    for f in fields(PipelineConfig):
        val = getattr(cfg, f.name)
        if isinstance(val, tuple):
            text = ",".join(repr(v) for v in val)
        elif isinstance(val, float):
            text = repr(val)
        else:
            text = str(val)
        lines.append(f"{f.name} = {text}")
    return "\n".join(lines) + "\n"


def save_config(cfg: PipelineConfig, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_config(cfg))
