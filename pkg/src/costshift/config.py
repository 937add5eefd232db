"""Flat key-value configuration for the pipeline and its stages.

A config file holds ``key value`` lines ('#' starts a comment). Unknown and
duplicate keys are rejected, as are values outside their documented ranges.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

from .classify import DEFAULT_CS, DEFAULT_GAMMAS
from .dataset import AffineShift, SynthConfig
from .errors import ConfigError
from .transfer import PSI_CHOICES, TAU_MODES, SimplexSettings, TransferConfig

TASK_NAMES = ("detection", "childlock", "airbag", "unweighted")
SOURCE_MODES = ("all", "single")


@dataclass
class PipelineConfig:
    # reduction
    k: int = 50
    eps: float = 1.0
    # mixtures
    gmm_components: int = 3
    # transfer
    psi: str = "exp"
    tau_mode: str = "centroid_match"
    tau_value: float = 0.0
    norm_power: float = 3.0
    simplex_max_eval_factor: int = 200
    simplex_spread_tol: float = 1e-8
    simplex_init_step_frac: float = 0.05
    transfer_cost: str = "transfer_bias"
    # classifier selection
    grid_gamma: tuple = DEFAULT_GAMMAS
    grid_c: tuple = DEFAULT_CS
    folds: int = 5
    # protocol
    task: str = "detection"
    runs: int = 10
    seed: int = 0
    test_fraction: float = 0.3
    source_mode: str = "all"
    source_index: int = 0
    threads: int = 1
    # synthetic benchmark
    synth: SynthConfig = field(default_factory=SynthConfig)

    def transfer_config(self) -> TransferConfig:
        return TransferConfig(
            psi=self.psi,
            tau_mode=self.tau_mode,
            tau_value=self.tau_value,
            norm_power=self.norm_power,
            simplex=SimplexSettings(
                max_eval_factor=self.simplex_max_eval_factor,
                spread_tol=self.simplex_spread_tol,
                init_step_frac=self.simplex_init_step_frac,
            ),
        )

    def synth_config(self, seed: int | None = None) -> SynthConfig:
        if seed is None:
            return self.synth
        return dataclasses.replace(self.synth, seed=int(seed))


def _parse_int(lo=None, hi=None):
    def parse(tokens):
        if len(tokens) != 1:
            raise ValueError("expected a single integer")
        v = int(tokens[0])
        if lo is not None and v < lo:
            raise ValueError(f"must be >= {lo}")
        if hi is not None and v > hi:
            raise ValueError(f"must be <= {hi}")
        return v

    return parse


def _parse_float(lo=None, lo_open=False, hi=None, hi_open=False):
    def parse(tokens):
        if len(tokens) != 1:
            raise ValueError("expected a single number")
        v = float(tokens[0])
        if not math.isfinite(v):
            raise ValueError("must be a finite number")
        if lo is not None and (v <= lo if lo_open else v < lo):
            raise ValueError(f"must be {'>' if lo_open else '>='} {lo}")
        if hi is not None and (v >= hi if hi_open else v > hi):
            raise ValueError(f"must be {'<' if hi_open else '<='} {hi}")
        return v

    return parse


def _parse_choice(choices):
    def parse(tokens):
        if len(tokens) != 1 or tokens[0] not in choices:
            raise ValueError(f"must be one of {', '.join(choices)}")
        return tokens[0]

    return parse


def _parse_float_list(tokens):
    if not tokens:
        raise ValueError("expected at least one number")
    vals = tuple(float(t) for t in tokens)
    if any(not math.isfinite(v) or v <= 0 for v in vals):
        raise ValueError("all values must be finite and > 0")
    return vals


def _parse_token(tokens):
    if len(tokens) != 1:
        raise ValueError("expected a single token")
    return tokens[0]


def _parse_tokens(tokens):
    if not tokens:
        raise ValueError("expected at least one token")
    return list(tokens)


# key -> (attribute path, parser)
_KEYS = {
    "k": ("k", _parse_int(lo=1)),
    "eps": ("eps", _parse_float(lo=0, lo_open=True)),
    "gmm_components": ("gmm_components", _parse_int(lo=1)),
    "psi": ("psi", _parse_choice(PSI_CHOICES)),
    "tau_mode": ("tau_mode", _parse_choice(TAU_MODES)),
    "tau_value": ("tau_value", _parse_float()),
    "norm_power": ("norm_power", _parse_float(lo=1)),
    "simplex_max_eval_factor": ("simplex_max_eval_factor", _parse_int(lo=1)),
    "simplex_spread_tol": ("simplex_spread_tol", _parse_float(lo=0, lo_open=True)),
    "simplex_init_step_frac": (
        "simplex_init_step_frac",
        _parse_float(lo=0, lo_open=True),
    ),
    "transfer_cost": ("transfer_cost", _parse_token),
    "grid_gamma": ("grid_gamma", _parse_float_list),
    "grid_c": ("grid_c", _parse_float_list),
    "folds": ("folds", _parse_int(lo=2)),
    "task": ("task", _parse_choice(TASK_NAMES)),
    "runs": ("runs", _parse_int(lo=1)),
    "seed": ("seed", _parse_int()),
    "test_fraction": ("test_fraction", _parse_float(lo=0, lo_open=True, hi=1, hi_open=True)),
    "source_mode": ("source_mode", _parse_choice(SOURCE_MODES)),
    "source_index": ("source_index", _parse_int(lo=0)),
    "threads": ("threads", _parse_int(lo=1)),
    "synth_classes": ("synth.n_classes", _parse_int(lo=2)),
    "synth_dims": ("synth.dims", _parse_int(lo=1)),
    "synth_domains": ("synth.n_domains", _parse_int(lo=1)),
    "synth_modes": ("synth.per_class_modes", _parse_int(lo=1)),
    "synth_rotation": ("synth.rotation", _parse_float()),
    "synth_scale": ("synth.scale", _parse_float(lo=0, lo_open=True)),
    "synth_translation": ("synth.translation", _parse_float(lo=0)),
    "synth_noise": ("synth.noise_sigma", _parse_float(lo=0)),
    "synth_samples": ("synth.samples_per_class_per_domain", _parse_int(lo=1)),
    "synth_groups": ("synth.groups_per_class", _parse_int(lo=1)),
    "synth_class_spread": ("synth.class_spread", _parse_float(lo=0, lo_open=True)),
    "synth_mode_spread": ("synth.mode_spread", _parse_float(lo=0, lo_open=True)),
    "synth_class_names": ("synth.class_names", _parse_tokens),
}


def parse_config(text: str, origin: str = "<config>") -> PipelineConfig:
    cfg = PipelineConfig()
    synth_kwargs: dict = {}
    shift_kwargs: dict = {}
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        key, tokens = parts[0], parts[1:]
        if key not in _KEYS:
            raise ConfigError(f"{origin}: line {lineno}: unknown config key {key!r}")
        if key in seen:
            raise ConfigError(f"{origin}: line {lineno}: duplicate config key {key!r}")
        seen.add(key)
        attr, parser = _KEYS[key]
        try:
            value = parser(tokens)
        except ValueError as exc:
            raise ConfigError(
                f"{origin}: line {lineno}: bad value for {key!r}: {exc}"
            ) from None
        if attr.startswith("synth."):
            name = attr.split(".", 1)[1]
            if name in ("rotation", "scale", "translation"):
                shift_kwargs[name] = value
            else:
                synth_kwargs[name] = value
        else:
            setattr(cfg, attr, value)

    try:
        shift = AffineShift(**shift_kwargs)
        synth_kwargs.setdefault("seed", cfg.seed)
        cfg.synth = SynthConfig(shift=shift, **synth_kwargs)
        cfg.transfer_config()  # validate the transfer block eagerly
    except ValueError as exc:
        raise ConfigError(f"{origin}: {exc}") from None
    return cfg


def load_config(path) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(), origin=str(path))
