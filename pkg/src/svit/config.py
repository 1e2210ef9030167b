"""Plain-text run configuration: one `key = value` per line.

Unknown keys are errors. Missing keys fall back to the desk-scale defaults
(32px images, patch 8, width 32, depth 2, 8 sampled frames, 4 object tokens).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .data import GenConfig
from .losses import LossWeights
from .model import ModelConfig
from .train import OptimizerConfig


class ConfigError(ValueError):
    pass


# key -> (type, default)
_SCHEMA = {
    # model
    "image_size": (int, 32),
    "patch_size": (int, 8),
    "dim": (int, 32),
    "depth": (int, 2),
    "heads": (int, 4),
    "n_frames": (int, 8),
    "n_objects": (int, 4),
    # generator
    "raw_frames": (int, 64),
    "fps": (float, 30.0),
    "speed_min": (float, 1.0),
    "speed_max": (float, 2.0),
    "contact_threshold": (float, 0.25),
    "object_prob": (float, 0.85),
    "no_change_prob": (float, 0.25),
    # optimizer
    "base_lr": (float, 1e-3),
    "beta1": (float, 0.9),
    "beta2": (float, 0.999),
    "epsilon": (float, 1e-8),
    "total_steps": (int, 300),
    "images_per_batch": (int, 16),
    "videos_per_batch": (int, 8),
    # loss weights
    "lambda_con": (float, 10.0),
    "lambda_haog": (float, 5.0),
    "lambda_vid": (float, 1.0),
    # data and workflow
    "data_dir": (str, ""),
    "num_images": (int, 16),
    "num_clips": (int, 8),
    "scale_min": (int, 0),  # 0 means "use image_size"
    "scale_max": (int, 0),
    "seed": (int, 0),
    "views_temporal": (int, 0),  # 0 means dense temporal coverage
    "views_spatial": (int, 1),
}


@dataclass
class RunConfig:
    model: ModelConfig
    gen: GenConfig
    opt: OptimizerConfig
    weights: LossWeights
    data_dir: str
    num_images: int
    num_clips: int
    scale_min: int
    scale_max: int
    seed: int
    views_temporal: int
    views_spatial: int

    def scale_range(self):
        lo = self.scale_min if self.scale_min > 0 else self.model.image_size
        hi = self.scale_max if self.scale_max > 0 else self.model.image_size
        return (lo, hi)


def _parse_lines(text: str) -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in _SCHEMA:
            raise ConfigError(f"line {lineno}: unknown config key '{key}'")
        typ, _ = _SCHEMA[key]
        try:
            values[key] = typ(val)
        except ValueError as e:
            raise ConfigError(f"line {lineno}: bad value for '{key}': {val!r}") from e
    return values


def config_from_values(values: dict, seed_override=None) -> RunConfig:
    merged = {k: default for k, (_, default) in _SCHEMA.items()}
    merged.update(values)
    if seed_override is not None:
        merged["seed"] = int(seed_override)
    try:
        model = ModelConfig(
            image_size=merged["image_size"],
            patch_size=merged["patch_size"],
            dim=merged["dim"],
            depth=merged["depth"],
            heads=merged["heads"],
            n_frames=merged["n_frames"],
            n_objects=merged["n_objects"],
        )
        gen = GenConfig(
            image_size=merged["image_size"],
            raw_frames=merged["raw_frames"],
            fps=merged["fps"],
            speed_min=merged["speed_min"],
            speed_max=merged["speed_max"],
            contact_threshold=merged["contact_threshold"],
            object_prob=merged["object_prob"],
            no_change_prob=merged["no_change_prob"],
            seed=merged["seed"],
        )
        opt = OptimizerConfig(
            base_lr=merged["base_lr"],
            beta1=merged["beta1"],
            beta2=merged["beta2"],
            epsilon=merged["epsilon"],
            total_steps=merged["total_steps"],
            images_per_batch=merged["images_per_batch"],
            videos_per_batch=merged["videos_per_batch"],
        )
        weights = LossWeights(
            lambda_con=merged["lambda_con"],
            lambda_haog=merged["lambda_haog"],
            lambda_vid=merged["lambda_vid"],
        )
    except ValueError as e:
        raise ConfigError(str(e)) from e
    return RunConfig(
        model=model,
        gen=gen,
        opt=opt,
        weights=weights,
        data_dir=merged["data_dir"],
        num_images=merged["num_images"],
        num_clips=merged["num_clips"],
        scale_min=merged["scale_min"],
        scale_max=merged["scale_max"],
        seed=merged["seed"],
        views_temporal=merged["views_temporal"],
        views_spatial=merged["views_spatial"],
    )


def parse_config_text(text: str, seed_override=None) -> RunConfig:
    return config_from_values(_parse_lines(text), seed_override)


def parse_config(path, seed_override=None) -> RunConfig:
    return parse_config_text(Path(path).read_text(encoding="utf-8"), seed_override)
