"""Run configuration: one TOML file drives the whole pipeline.

Dotted sections: [paths], [protocol], [trace], [dataset], [model],
[glitch], [search], [defense]. The seed is mandatory and never defaulted
from the wall clock; every output is a pure function of config plus seed.
Model dimensions always come from the trace section so the compiled trace
and the network can never disagree.
"""
from __future__ import annotations

import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .dataset import GenConfig
from .faults import GlitchConfig, SusceptibilityProfile, default_profile, load_profile
from .model import ModelDims, TrainConfig
from .search import AxisSpec, ObjectiveSpec, SearchMode, SearchSpace, Strategy
from .trace import (TRACE_PRESETS, CostModel, Layer, MicroOpTrace, OpKind,
                    compile_trace)


class ConfigError(ValueError):
    """Invalid or incomplete run configuration."""


@dataclass
class RunConfig:
    raw: dict[str, Any]
    base_dir: Path
    out_dir: Path      # write target; --out moves only this
    input_root: Path   # where earlier stages wrote, from the config file
    seed: int
    reps: int
    jobs: int

    @classmethod
    def load(cls, path: Path, seed_override: int | None = None,
             out_override: Path | None = None, jobs: int = 1) -> "RunConfig":
        try:
            with open(path, "rb") as fp:
                raw = tomllib.load(fp)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config parse error in {path}: {exc}")

        protocol = raw.get("protocol", {})
        seed = seed_override if seed_override is not None else protocol.get("seed")
        if seed is None:
            raise ConfigError("protocol.seed is mandatory (no wall-clock default)")
        reps = int(protocol.get("reps", 3))
        if reps < 1:
            raise ConfigError("protocol.reps must be >= 1")

        base = path.parent
        paths = raw.get("paths", {})
        input_root = base / paths.get("out_dir", "out")
        out_dir = Path(out_override) if out_override else input_root
        return cls(raw=raw, base_dir=base, out_dir=out_dir,
                   input_root=input_root, seed=int(seed), reps=reps, jobs=jobs)

    # -- path helpers ----------------------------------------------------

    def _path(self, key: str, default: str) -> Path:
        value = self.raw.get("paths", {}).get(key)
        if value is None:
            return self.input_root / default
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    def dataset_paths(self) -> tuple[Path, Path]:
        value = self.raw.get("paths", {}).get("dataset_dir")
        if value is None:
            root = self.input_root
        else:
            p = Path(value)
            root = p if p.is_absolute() else self.base_dir / p
        return root / "train.csv", root / "test.csv"

    def weights_path(self) -> Path:
        return self._path("weights", "weights.txt")

    def campaign_log_path(self) -> Path:
        return self._path("campaign_log", "campaign.jsonl")

    def require(self, path: Path, hint: str) -> Path:
        if not path.exists():
            raise ConfigError(f"missing {hint}: {path}")
        return path

    # -- typed sections ---------------------------------------------------

    def trace_setup(self) -> tuple[ModelDims, CostModel]:
        section = self.raw.get("trace", {})
        preset = section.get("preset", "reference-mcu")
        if "dims" in section or "costs" in section:
            dims_raw = section.get("dims", {})
            dims = ModelDims(
                d=int(dims_raw.get("d", 10)),
                h1=int(dims_raw.get("h1", 16)),
                h2=int(dims_raw.get("h2", 32)),
            )
            costs_raw = section.get("costs", {})
            try:
                cycles = {kind: int(costs_raw[kind.value]) for kind in OpKind}
            except KeyError as exc:
                raise ConfigError(f"trace.costs is missing {exc.args[0]}")
            setup_raw = section.get("layer_setup", {})
            setup = {layer: int(setup_raw.get(layer.value, 0)) for layer in Layer}
            cost = CostModel(
                cycles_per=cycles,
                prologue_cycles=int(section.get("prologue_cycles", 0)),
                layer_setup=setup,
            )
            return dims, cost
        if preset not in TRACE_PRESETS:
            raise ConfigError(
                f"unknown trace preset {preset!r}; "
                f"choose from {sorted(TRACE_PRESETS)}"
            )
        return TRACE_PRESETS[preset]

    def compiled_trace(self) -> MicroOpTrace:
        dims, cost = self.trace_setup()
        return compile_trace(dims, cost)

    def gen_config(self) -> GenConfig:
        dims, _ = self.trace_setup()
        section = self.raw.get("dataset", {})
        cfg = GenConfig(
            d=int(section.get("d", dims.d)),
            centroid_scale=float(section.get("centroid_scale", 1.0)),
            noise_sigma=float(section.get("noise_sigma", 0.3)),
            bit1_flip_prob=float(section.get("bit1_flip_prob", 0.0)),
            samples_per_class=int(section.get("samples_per_class", 200)),
        )
        if cfg.d != dims.d:
            raise ConfigError(
                f"dataset.d ({cfg.d}) must match the trace input width ({dims.d})"
            )
        return cfg

    def train_config(self) -> TrainConfig:
        dims, _ = self.trace_setup()
        section = self.raw.get("model", {})
        return TrainConfig(
            learning_rate=float(section.get("learning_rate", 0.1)),
            epochs=int(section.get("epochs", 30)),
            batch_size=int(section.get("batch_size", 32)),
            h1=dims.h1, h2=dims.h2,
        )

    def glitch(self) -> GlitchConfig | None:
        section = self.raw.get("glitch")
        if section is None:
            return None
        try:
            return GlitchConfig(
                width=int(section["width"]),
                offset=int(section["offset"]),
                external_offset=int(section["external_offset"]),
                repeat=int(section.get("repeat", 1)),
            )
        except KeyError as exc:
            raise ConfigError(f"glitch section is missing {exc.args[0]}")
        except ValueError as exc:
            raise ConfigError(f"invalid glitch: {exc}")

    def profile(self) -> SusceptibilityProfile:
        value = self.raw.get("paths", {}).get("profile")
        if value is None:
            return default_profile()
        p = Path(value)
        p = p if p.is_absolute() else self.base_dir / p
        self.require(p, "susceptibility profile")
        with open(p) as fp:
            return load_profile(fp)

    def search_settings(
        self, trace: MicroOpTrace
    ) -> tuple[SearchSpace, ObjectiveSpec, int, Strategy, Layer | None]:
        section = self.raw.get("search", {})
        strategy = Strategy(section.get("strategy", "adaptive"))
        budget = int(section.get("budget", 100))
        mode = SearchMode(section.get("mode", "untargeted"))
        target = section.get("target_class")
        objective = ObjectiveSpec(
            mode=mode,
            target_class=int(target) if target is not None else None,
            reset_penalty=float(section.get("reset_penalty", 5.0)),
        )
        layer = None
        if "layer" in section:
            try:
                layer = Layer(section["layer"])
            except ValueError:
                raise ConfigError(f"unknown layer {section['layer']!r}")
        axes = {}
        for name in ("width", "offset"):
            if name in section:
                lo, hi, step = (int(v) for v in section[name])
                axes[name] = AxisSpec(lo, hi, step)
        if layer is not None:
            space = SearchSpace.for_layer(trace, layer, **axes)
        else:
            space = SearchSpace.for_trace(trace, **axes)
        return space, objective, budget, strategy, layer
