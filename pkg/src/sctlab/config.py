"""Run configuration: an INI-style text file with sections of key = value.

Grammar (UTF-8):
    - `[section]` lines open a section; keys below belong to it
    - `key = value` pairs; values are parsed on demand as int/float/bool/str
    - `#` or `;` start comments; blank lines are ignored

Sections and keys (defaults reproduce the desk-scale experiment):

    [geometry]  image_size, n_angles, detector_bins, detector_pixel,
                source_to_object, source_to_detector, pixel_size (optional;
                derived from the FOV when omitted), beam
    [dataset]   train_count, test_count, channels, noise_level, max_objects, seed
    [filter]    filter (ram_lak|hann), freq_scale
    [solver]    alpha, tau, sigma1, sigma2, iterations, init, channel_batch
    [train]     mode (supervised|low2high), epochs, lr, lambda, normalize,
                seed, depth, base_width
    [eval]      window_lo, window_hi, roi_slice
    [paths]     out (base output directory)
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .fbp import FilterSpec
from .geometry import FanGeometry, MUSIC_DETECTOR_BINS, MUSIC_DETECTOR_PIXEL, MUSIC_SDD, MUSIC_SOD, uniform_angles
from .irsolver import SolverParams
from .neural import UNetConfig
from .training import TrainConfig


class ConfigError(ValueError):
    """Missing or malformed configuration entry."""


DEFAULTS: dict[str, dict[str, str]] = {
    "geometry": {
        "image_size": "128",
        "n_angles": "37",
        "detector_bins": str(MUSIC_DETECTOR_BINS),
        "detector_pixel": str(MUSIC_DETECTOR_PIXEL),
        "source_to_object": str(MUSIC_SOD),
        "source_to_detector": str(MUSIC_SDD),
        "beam": "fan",
    },
    "dataset": {
        "train_count": "100",
        "test_count": "10",
        "channels": "32",
        "noise_level": "0.02",
        "max_objects": "5",
        "seed": "1234",
    },
    "filter": {"filter": "ram_lak", "freq_scale": "1.0"},
    "solver": {
        "alpha": "100.0",
        "tau": "0.01",
        "sigma1": "0.01",
        "sigma2": "0.5",
        "iterations": "50",
        "init": "fbp",
        "channel_batch": "4",
    },
    "train": {
        "mode": "low2high",
        "epochs": "20",
        "lr": "1e-4",
        "lambda": "0.005",
        "normalize": "true",
        "seed": "1234",
        "depth": "4",
        "base_width": "32",
    },
    "eval": {"window_lo": "-0.002", "window_hi": "0.03", "roi_slice": "0"},
    "paths": {},
}


@dataclass
class RunConfig:
    """Parsed configuration with typed accessors for each pipeline block."""

    sections: dict[str, dict[str, str]] = field(default_factory=dict)

    @staticmethod
    def load(path: str | Path | None = None) -> "RunConfig":
        sections = {name: dict(vals) for name, vals in DEFAULTS.items()}
        if path is not None:
            parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
            read = parser.read(path, encoding="utf-8")
            if not read:
                raise ConfigError(f"config file {path} not found")
            for section in parser.sections():
                sections.setdefault(section, {})
                for key, value in parser.items(section):
                    sections[section][key] = value
        return RunConfig(sections)

    def get(self, section: str, key: str) -> str:
        try:
            return self.sections[section][key]
        except KeyError:
            raise ConfigError(f"missing config key [{section}] {key}") from None

    def get_int(self, section: str, key: str) -> int:
        try:
            return int(self.get(section, key))
        except ValueError:
            raise ConfigError(f"config key [{section}] {key} is not an integer") from None

    def get_float(self, section: str, key: str) -> float:
        try:
            return float(self.get(section, key))
        except ValueError:
            raise ConfigError(f"config key [{section}] {key} is not a number") from None

    def get_bool(self, section: str, key: str) -> bool:
        value = self.get(section, key).strip().lower()
        if value in ("true", "1", "yes", "on"):
            return True
        if value in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"config key [{section}] {key} is not a boolean")

    def set(self, section: str, key: str, value) -> None:
        self.sections.setdefault(section, {})[key] = str(value)

    # -- typed blocks -------------------------------------------------------

    def geometry(self) -> FanGeometry:
        size = self.get_int("geometry", "image_size")
        bins = self.get_int("geometry", "detector_bins")
        du = self.get_float("geometry", "detector_pixel")
        sod = self.get_float("geometry", "source_to_object")
        sdd = self.get_float("geometry", "source_to_detector")
        beam = self.get("geometry", "beam")
        if "pixel_size" in self.sections["geometry"]:
            pixel = self.get_float("geometry", "pixel_size")
        else:
            magnification = sdd / sod if beam == "fan" else 1.0
            pixel = bins * du / magnification / size
        return FanGeometry(
            source_to_object=sod,
            source_to_detector=sdd,
            detector_bins=bins,
            detector_pixel=du,
            angles=uniform_angles(self.get_int("geometry", "n_angles")),
            image_size=(size, size),
            pixel_size=pixel,
            beam=beam,
        )

    def filter_spec(self) -> FilterSpec:
        return FilterSpec(self.get("filter", "filter"), self.get_float("filter", "freq_scale"))

    def solver_params(self) -> SolverParams:
        return SolverParams(
            alpha=self.get_float("solver", "alpha"),
            tau=self.get_float("solver", "tau"),
            sigma1=self.get_float("solver", "sigma1"),
            sigma2=self.get_float("solver", "sigma2"),
            iterations=self.get_int("solver", "iterations"),
            init=self.get("solver", "init"),
            channel_batch=self.get_int("solver", "channel_batch"),
        )

    def train_config(self) -> TrainConfig:
        mode = self.get("train", "mode")
        return TrainConfig(
            mode=mode,
            epochs=self.get_int("train", "epochs"),
            lr=self.get_float("train", "lr"),
            lam=self.get_float("train", "lambda"),
            normalize=self.get_bool("train", "normalize"),
            seed=self.get_int("train", "seed"),
            unet=UNetConfig(
                in_channels=1 if mode == "supervised" else 4,
                depth=self.get_int("train", "depth"),
                base_width=self.get_int("train", "base_width"),
            ),
        )

    def out_dir(self) -> Path:
        return Path(self.get("paths", "out"))

    def eval_window(self) -> tuple[float, float]:
        return (self.get_float("eval", "window_lo"), self.get_float("eval", "window_hi"))


def default_config_text() -> str:
    lines = []
    for section, values in DEFAULTS.items():
        lines.append(f"[{section}]")
        for key, value in values.items():
            lines.append(f"{key} = {value}")
        lines.append("")
    return "\n".join(lines)
