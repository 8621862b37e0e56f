"""Run configuration and its INI file form.

A RunConfig bundles the stage ladder with the similarity, inversion and overlap
metric settings. dump_config/load_config translate to and from an INI file with
one [stage:k] section per stage; numbers are written with repr so a dump/load
round trip reproduces the configuration exactly.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field

from .errors import ConfigError
from .metrics import Hd95Config
from .registration import StageConfig
from .similarity import SimilarityConfig
from .transforms import InversionConfig


def _default_stages() -> tuple[StageConfig, ...]:
    return (
        StageConfig(kind="translation"),
        StageConfig(kind="rigid"),
        StageConfig(kind="elastic_syn"),
    )


@dataclass
class RunConfig:
    stages: tuple[StageConfig, ...] = field(default_factory=_default_stages)
    similarity: SimilarityConfig = field(default_factory=SimilarityConfig)
    inversion: InversionConfig = field(default_factory=InversionConfig)
    hd95: Hd95Config = field(default_factory=Hd95Config)
    fixed_path: str | None = None
    moving_path: str | None = None
    output_prefix: str | None = None
    seed: int = 0

    def __post_init__(self):
        self.stages = tuple(self.stages)
        if not self.stages:
            raise ConfigError("a run needs at least one stage")


def _fmt_floats(values) -> str:
    return ", ".join(repr(float(v)) for v in values)


def _fmt_ints(values) -> str:
    return ", ".join(str(int(v)) for v in values)


def _parse_floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(tok) for tok in text.split(",") if tok.strip())
    except ValueError as exc:
        raise ConfigError(f"bad float list {text!r}") from exc


def _parse_ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(tok) for tok in text.split(",") if tok.strip())
    except ValueError as exc:
        raise ConfigError(f"bad integer list {text!r}") from exc


def _get(parser: configparser.ConfigParser, section: str, option: str, conv, fallback):
    if not parser.has_option(section, option):
        return fallback
    raw = parser.get(section, option)
    try:
        return conv(raw)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"bad value for {section}.{option}: {raw!r}") from exc


def dumps_config(cfg: RunConfig) -> str:
    parser = configparser.ConfigParser()
    parser["pipeline"] = {"stages": str(len(cfg.stages)), "seed": str(cfg.seed)}
    for key, value in (
        ("fixed", cfg.fixed_path),
        ("moving", cfg.moving_path),
        ("out", cfg.output_prefix),
    ):
        if value is not None:
            parser["pipeline"][key] = str(value)
    parser["similarity"] = {
        "window": str(cfg.similarity.window_n),
        "guard": repr(cfg.similarity.variance_guard),
    }
    parser["inversion"] = {
        "epsilon2": repr(cfg.inversion.epsilon2),
        "max_sweeps": str(cfg.inversion.max_sweeps),
        "step_cap_fraction": repr(cfg.inversion.step_cap_fraction),
    }
    parser["hd95"] = {
        "penalty_mm": repr(cfg.hd95.penalty_mm),
        "percentile": repr(cfg.hd95.percentile),
    }
    for k, st in enumerate(cfg.stages):
        sec = f"stage:{k}"
        parser[sec] = {
            "kind": st.kind,
            "iterations_per_level": _fmt_ints(st.iterations_per_level),
            "shrink_factors": _fmt_ints(st.shrink_factors),
            "smoothing_sigmas_mm": _fmt_floats(st.smoothing_sigmas_mm),
            "step_size": repr(st.step_size),
            "update_sigma_mm": repr(st.update_sigma_mm),
            "total_sigma_mm": repr(st.total_sigma_mm),
        }
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def loads_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse configuration: {exc}") from exc

    base = RunConfig()
    sim = SimilarityConfig(
        window_n=_get(parser, "similarity", "window", int, base.similarity.window_n),
        variance_guard=_get(parser, "similarity", "guard", float, base.similarity.variance_guard),
    )
    inv = InversionConfig(
        epsilon2=_get(parser, "inversion", "epsilon2", float, base.inversion.epsilon2),
        max_sweeps=_get(parser, "inversion", "max_sweeps", int, base.inversion.max_sweeps),
        step_cap_fraction=_get(
            parser, "inversion", "step_cap_fraction", float, base.inversion.step_cap_fraction
        ),
    )
    hd = Hd95Config(
        penalty_mm=_get(parser, "hd95", "penalty_mm", float, base.hd95.penalty_mm),
        percentile=_get(parser, "hd95", "percentile", float, base.hd95.percentile),
    )

    stage_sections = sorted(
        (s for s in parser.sections() if s.startswith("stage:")),
        key=lambda s: int(s.split(":", 1)[1]),
    )
    if parser.has_option("pipeline", "stages"):
        declared = _get(parser, "pipeline", "stages", int, len(stage_sections))
        if declared != len(stage_sections):
            raise ConfigError(
                f"pipeline declares {declared} stages but {len(stage_sections)} sections found"
            )
    if stage_sections:
        stages = []
        defaults = StageConfig(kind="translation")
        for sec in stage_sections:
            if not parser.has_option(sec, "kind"):
                raise ConfigError(f"section [{sec}] is missing its kind")
            stages.append(
                StageConfig(
                    kind=parser.get(sec, "kind").strip(),
                    iterations_per_level=_get(
                        parser, sec, "iterations_per_level", _parse_ints,
                        defaults.iterations_per_level,
                    ),
                    shrink_factors=_get(
                        parser, sec, "shrink_factors", _parse_ints, defaults.shrink_factors
                    ),
                    smoothing_sigmas_mm=_get(
                        parser, sec, "smoothing_sigmas_mm", _parse_floats,
                        defaults.smoothing_sigmas_mm,
                    ),
                    step_size=_get(parser, sec, "step_size", float, None),
                    update_sigma_mm=_get(
                        parser, sec, "update_sigma_mm", float, defaults.update_sigma_mm
                    ),
                    total_sigma_mm=_get(
                        parser, sec, "total_sigma_mm", float, defaults.total_sigma_mm
                    ),
                )
            )
        stages = tuple(stages)
    else:
        stages = base.stages
    return RunConfig(
        stages=stages,
        similarity=sim,
        inversion=inv,
        hd95=hd,
        fixed_path=_get(parser, "pipeline", "fixed", str, None),
        moving_path=_get(parser, "pipeline", "moving", str, None),
        output_prefix=_get(parser, "pipeline", "out", str, None),
        seed=_get(parser, "pipeline", "seed", int, 0),
    )


def dump_config(cfg: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_config(cfg))


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return loads_config(fh.read())
