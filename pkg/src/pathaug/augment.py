"""Augmentation operators and the stochastic pipeline engine.

Every operator does its arithmetic in float64 and re-quantizes exactly once
on the way out, so repeated application does not accumulate rounding error
beyond the documented per-op tolerance.

Randomness contract: each operator takes a numpy Generator and consumes draws
in a fixed, documented order, so a fixed generator state yields bitwise
identical output. The pipeline driver draws one U[0,1) gate per step (always,
even for p of 0 or 1) before the step's own draws:

* color_jitter: one permutation of the four sub-ops, then one factor per
  sub-op in the fixed order brightness, contrast, saturation, hue. Factors
  are drawn even at zero strength (the draw is then degenerate) so the
  stream layout does not depend on the strengths.
* hed_light: the three alpha draws, then the three beta draws.
* randstainna: one integer space pick, then the model's sampling draws.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .colorspace import (
    ColorSpace,
    FloatPlanes,
    StainMatrix,
    default_stain_matrix,
    from_space,
    hed_to_rgb,
    rgb_to_hed,
    rotate_hue_array,
    to_space,
)
from .errors import ConfigError, IoError, WrongSpace
from .raster import RasterImage, quantize
from .stainstats import (
    ChannelStats,
    StainModelFile,
    load_model,
    sample_target_stats,
    stats_from_planes,
)

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
SIGMA_FLOOR = 1e-6

WEAK_JITTER = (0.2, 0.2, 0.2, 0.1)
STRONG_JITTER = (0.8, 0.8, 0.8, 0.2)

SPACE_CHOICES = (ColorSpace.HSV, ColorSpace.LAB, ColorSpace.HED)

VARIANTS = ("unimodal", "gmm")


# ---------------------------------------------------------------------------
# Deterministic operators

def vertical_flip(image: RasterImage) -> RasterImage:
    """Reverse the row order. Involution."""
    return RasterImage(np.ascontiguousarray(image.pixels[::-1]))


def horizontal_flip(image: RasterImage) -> RasterImage:
    """Reverse the column order. Involution."""
    return RasterImage(np.ascontiguousarray(image.pixels[:, ::-1]))


def _luma(arr: np.ndarray) -> np.ndarray:
    return arr @ LUMA_WEIGHTS


def grayscale(image: RasterImage) -> RasterImage:
    """Replace each pixel by its rounded luminance Y = 0.299R + 0.587G + 0.114B."""
    y = quantize(_luma(image.pixels.astype(np.float64)))
    return RasterImage(np.repeat(y[:, :, None], 3, axis=2))


def solarize(image: RasterImage, threshold: int) -> RasterImage:
    """Invert every channel value >= threshold (threshold in [0, 255])."""
    if threshold != int(threshold):
        raise ValueError(f"threshold must be an integer, got {threshold!r}")
    threshold = int(threshold)
    if not 0 <= threshold <= 255:
        raise ValueError(f"threshold must be in [0, 255], got {threshold}")
    px = image.pixels
    return RasterImage(np.where(px >= threshold, 255 - px, px).astype(np.uint8))


def adjust_brightness(image: RasterImage, factor: float) -> RasterImage:
    """Multiply all channels by ``factor`` and re-quantize."""
    return RasterImage(quantize(image.pixels.astype(np.float64) * factor))


def adjust_contrast(image: RasterImage, factor: float) -> RasterImage:
    """Blend toward the image's mean luminance: f*x + (1-f)*mean."""
    arr = image.pixels.astype(np.float64)
    return RasterImage(quantize(_blend(arr, _luma(arr).mean(), factor)))


def adjust_saturation(image: RasterImage, factor: float) -> RasterImage:
    """Blend each pixel toward its own luminance: f*x + (1-f)*Y(x)."""
    arr = image.pixels.astype(np.float64)
    return RasterImage(quantize(_blend(arr, _luma(arr)[:, :, None], factor)))


def adjust_hue(image: RasterImage, delta: float) -> RasterImage:
    """Rotate hue by ``delta`` turns of the color circle (|delta| <= 0.5)."""
    if abs(delta) > 0.5:
        raise ValueError(f"hue delta must be in [-0.5, 0.5], got {delta}")
    arr = image.pixels.astype(np.float64)
    return RasterImage(quantize(_rotate_hue(arr, delta)))


def _blend(arr: np.ndarray, toward, factor: float) -> np.ndarray:
    return factor * arr + (1.0 - factor) * toward


def _rotate_hue(arr: np.ndarray, delta: float) -> np.ndarray:
    if delta == 0.0:
        return arr
    return rotate_hue_array(np.clip(arr, 0.0, 255.0), delta * 255.0)


# ---------------------------------------------------------------------------
# Stochastic operators

def color_jitter(image: RasterImage, strengths: Sequence[float],
                 rng: np.random.Generator) -> RasterImage:
    """Jitter brightness, contrast, saturation, and hue in a random order.

    ``strengths`` is (b, c, s, h): multiplicative factors are drawn from
    U[1-v, 1+v] for the first three, the hue rotation from U[-h, +h] turns.
    Sub-ops run on the float image; quantization happens once at the end, so
    zero strengths give an exact identity.
    """
    b, c, s, h = _check_strengths(strengths)
    order = rng.permutation(4)
    f_b = rng.uniform(1.0 - b, 1.0 + b)
    f_c = rng.uniform(1.0 - c, 1.0 + c)
    f_s = rng.uniform(1.0 - s, 1.0 + s)
    d_h = rng.uniform(-h, h)
    arr = image.pixels.astype(np.float64)
    # arr is owned here, so the blends run in place; the expression trees
    # match _blend exactly, keeping the pure adjust_* functions bit-identical
    for idx in order:
        if idx == 0:
            arr *= f_b
        elif idx == 1:
            mean = _luma(arr).mean()
            arr *= f_c
            arr += (1.0 - f_c) * mean
        elif idx == 2:
            y = _luma(arr)
            arr *= f_s
            arr += ((1.0 - f_s) * y)[:, :, None]
        else:
            arr = _rotate_hue(arr, d_h)
    return RasterImage(quantize(arr))


def _check_strengths(strengths) -> tuple:
    vals = tuple(float(v) for v in strengths)
    if len(vals) != 4:
        raise ValueError(f"strengths must be (b, c, s, h), got {strengths!r}")
    b, c, s, h = vals
    if min(b, c, s) < 0 or not 0.0 <= h <= 0.5:
        raise ValueError(
            f"jitter strengths must be >= 0 with hue in [0, 0.5], got {vals}"
        )
    return vals


def hed_shift(image: RasterImage, alpha, beta,
              matrix: StainMatrix | None = None) -> RasterImage:
    """Deterministic per-stain affine map s' = alpha * s + beta in HED space."""
    m = matrix or default_stain_matrix()
    planes = rgb_to_hed(image, m)
    alpha = np.asarray(alpha, dtype=np.float64).reshape(3, 1, 1)
    beta = np.asarray(beta, dtype=np.float64).reshape(3, 1, 1)
    shifted = FloatPlanes(
        planes.width, planes.height, planes.planes * alpha + beta, ColorSpace.HED
    )
    return hed_to_rgb(shifted, m)


def hed_light(image: RasterImage, sigma_alpha: float = 0.05,
              sigma_beta: float = 0.05, matrix: StainMatrix | None = None,
              rng: np.random.Generator | None = None) -> RasterImage:
    """Randomly scale and shift each stain channel (alpha draws, then beta)."""
    if sigma_alpha < 0 or sigma_beta < 0:
        raise ValueError("hed_light sigmas must be >= 0")
    if rng is None:
        raise ValueError("hed_light needs an rng")
    alpha = rng.uniform(1.0 - sigma_alpha, 1.0 + sigma_alpha, size=3)
    beta = rng.uniform(-sigma_beta, sigma_beta, size=3)
    return hed_shift(image, alpha, beta, matrix)


def choose_space(rng: np.random.Generator) -> ColorSpace:
    """Uniform pick among HSV, LAB, HED; one integer draw."""
    return SPACE_CHOICES[int(rng.integers(3))]


def reinhard_normalize(planes: FloatPlanes, target: ChannelStats,
                       source: ChannelStats | None = None) -> FloatPlanes:
    """Shift-and-scale each plane to the target moments.

    x' = (x - mu_src) / max(sigma_src, 1e-6) * sigma_tgt + mu_tgt. The source
    moments are measured from ``planes`` when not supplied.
    """
    if target.space is not planes.space:
        raise WrongSpace(
            f"target stats are {target.space.value}, planes are {planes.space.value}"
        )
    if source is None:
        source = stats_from_planes(planes)
    elif source.space is not planes.space:
        raise WrongSpace(
            f"source stats are {source.space.value}, planes are {planes.space.value}"
        )
    scale = (target.sigma / np.maximum(source.sigma, SIGMA_FLOOR)).reshape(3, 1, 1)
    out = (planes.planes - source.mu.reshape(3, 1, 1)) * scale + target.mu.reshape(3, 1, 1)
    return FloatPlanes(planes.width, planes.height, out, planes.space)


def randstainna(image: RasterImage, model: StainModelFile, variant: str,
                rng: np.random.Generator) -> RasterImage:
    """Re-normalize the image toward statistics sampled from a corpus model.

    Picks one of HSV/LAB/HED uniformly, samples target channel moments from
    the chosen space's ``variant`` model, and applies the shift-and-scale
    rule in that space before converting back with clamping.
    """
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")
    space = choose_space(rng)
    target = sample_target_stats(model.model_for(space, variant), rng)
    planes = to_space(image, space, model.stain_matrix)
    return from_space(reinhard_normalize(planes, target), model.stain_matrix)


# ---------------------------------------------------------------------------
# Pipeline

_NO_PARAM_KINDS = ("VerticalFlip", "HorizontalFlip", "Grayscale")
KINDS = _NO_PARAM_KINDS + ("ColorJitter", "Solarize", "HedLight", "RandStainNA")


def _config_error(msg):
    raise ConfigError(msg)


def _real(value, name) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        _config_error(f"{name} must be a number, got {value!r}")
    out = float(value)
    if out != out:
        _config_error(f"{name} must not be NaN")
    return out


def _validate_params(kind: str, raw: Mapping) -> dict:
    raw = dict(raw)
    if kind in _NO_PARAM_KINDS:
        if raw:
            _config_error(f"{kind} takes no parameters, got {sorted(raw)}")
        return {}
    if kind == "ColorJitter":
        out = {"b": 0.0, "c": 0.0, "s": 0.0, "h": 0.0}
        for key in raw:
            if key not in out:
                _config_error(f"unknown ColorJitter parameter {key!r}")
            out[key] = _real(raw[key], f"ColorJitter {key}")
        if min(out["b"], out["c"], out["s"]) < 0 or not 0.0 <= out["h"] <= 0.5:
            _config_error(f"ColorJitter strengths out of range: {out}")
        return out
    if kind == "Solarize":
        threshold = raw.pop("threshold", 128)
        if raw:
            _config_error(f"unknown Solarize parameters {sorted(raw)}")
        t = _real(threshold, "Solarize threshold")
        if t != int(t) or not 0 <= t <= 255:
            _config_error(f"Solarize threshold must be an integer in [0, 255], got {threshold!r}")
        return {"threshold": int(t)}
    if kind == "HedLight":
        out = {"sigma_alpha": 0.05, "sigma_beta": 0.05}
        for key in raw:
            if key not in out:
                _config_error(f"unknown HedLight parameter {key!r}")
            out[key] = _real(raw[key], f"HedLight {key}")
        if min(out.values()) < 0:
            _config_error(f"HedLight sigmas must be >= 0, got {out}")
        return out
    if kind == "RandStainNA":
        out = {"variant": "gmm", "model_path": None, "model": None}
        for key in raw:
            if key not in out:
                _config_error(f"unknown RandStainNA parameter {key!r}")
            out[key] = raw[key]
        if out["variant"] not in VARIANTS:
            _config_error(f"RandStainNA variant must be one of {VARIANTS}, got {out['variant']!r}")
        if out["model_path"] is not None and not isinstance(out["model_path"], str):
            _config_error("RandStainNA model_path must be a string")
        if out["model"] is not None and not isinstance(out["model"], StainModelFile):
            _config_error("RandStainNA model must be a loaded stain model")
        return out
    _config_error(f"unknown step kind {kind!r}; known kinds: {', '.join(KINDS)}")


@dataclass(frozen=True, eq=False)
class AugmentStep:
    """One pipeline entry: an operator kind, its firing probability, parameters."""

    kind: str
    p: float
    params: Mapping = field(default_factory=dict)

    def __post_init__(self):
        p = _real(self.p, "step probability")
        if not 0.0 <= p <= 1.0:
            _config_error(f"step probability must be in [0, 1], got {p}")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "params", _validate_params(self.kind, self.params))


@dataclass(frozen=True, eq=False)
class AugmentPipeline:
    """Ordered steps plus an optional stain model for RandStainNA entries."""

    steps: tuple
    model: StainModelFile | None = None

    def __post_init__(self):
        steps = tuple(self.steps)
        for step in steps:
            if not isinstance(step, AugmentStep):
                raise ConfigError(f"pipeline steps must be AugmentStep, got {type(step).__name__}")
        object.__setattr__(self, "steps", steps)

    def with_model(self, model: StainModelFile) -> "AugmentPipeline":
        return AugmentPipeline(self.steps, model)


def _step_model(step: AugmentStep, pipeline: AugmentPipeline):
    return step.params.get("model") or pipeline.model


def apply_pipeline(pipeline: AugmentPipeline, image: RasterImage,
                   rng: np.random.Generator) -> RasterImage:
    """Run the steps in order; each fires iff its U[0,1) gate draw < p.

    The gate draw happens for every step regardless of p, then the firing
    step's internal draws follow, all from the one supplied generator.
    """
    for step in pipeline.steps:
        if step.kind == "RandStainNA" and _step_model(step, pipeline) is None:
            raise ConfigError(
                "RandStainNA step has no stain model: set model_path in the "
                "config or attach a loaded model"
            )
    for step in pipeline.steps:
        if rng.random() < step.p:
            image = _run_step(step, image, rng, pipeline)
    return image


def _run_step(step, image, rng, pipeline):
    prm = step.params
    if step.kind == "VerticalFlip":
        return vertical_flip(image)
    if step.kind == "HorizontalFlip":
        return horizontal_flip(image)
    if step.kind == "Grayscale":
        return grayscale(image)
    if step.kind == "ColorJitter":
        return color_jitter(image, (prm["b"], prm["c"], prm["s"], prm["h"]), rng)
    if step.kind == "Solarize":
        return solarize(image, prm["threshold"])
    if step.kind == "HedLight":
        return hed_light(image, prm["sigma_alpha"], prm["sigma_beta"], None, rng)
    return randstainna(image, _step_model(step, pipeline), prm["variant"], rng)


# ---------------------------------------------------------------------------
# Config files and presets

PRESETS = ("paper-default",)


def preset_pipeline(name: str, model: StainModelFile | None = None) -> AugmentPipeline:
    """A named ready-made pipeline; "paper-default" is the training recipe."""
    if name != "paper-default":
        raise ConfigError(f"unknown preset {name!r}; known presets: {', '.join(PRESETS)}")
    b, c, s, h = WEAK_JITTER
    steps = (
        AugmentStep("VerticalFlip", 0.5),
        AugmentStep("Grayscale", 0.2),
        AugmentStep("ColorJitter", 0.8, {"b": b, "c": c, "s": s, "h": h}),
        AugmentStep("RandStainNA", 0.8, {"variant": "gmm"}),
    )
    return AugmentPipeline(steps, model)


def pipeline_to_dict(pipeline: AugmentPipeline, model_path: str | None = None) -> dict:
    """JSON-ready form: {"steps": [{"kind", "p", params...}], "model_path"?}."""
    steps = []
    for step in pipeline.steps:
        entry = {"kind": step.kind, "p": step.p}
        for key, value in step.params.items():
            if key == "model" or value is None:
                continue
            entry[key] = value
        steps.append(entry)
    out = {"steps": steps}
    if model_path is not None:
        out["model_path"] = model_path
    return out


def pipeline_from_dict(data, base_dir: str | None = None) -> AugmentPipeline:
    """Build a pipeline from config data, loading any referenced stain models.

    ``model_path`` entries (global or per RandStainNA step) are resolved
    relative to ``base_dir`` when given. Schema problems raise ConfigError;
    model files that fail to load raise their own errors.
    """
    if not isinstance(data, dict) or not isinstance(data.get("steps"), list):
        _config_error('pipeline config must be an object with a "steps" list')
    global_ref = data.get("model_path")
    if global_ref is not None and not isinstance(global_ref, str):
        _config_error("model_path must be a string")
    extra = set(data) - {"steps", "model_path"}
    if extra:
        _config_error(f"unknown pipeline config keys {sorted(extra)}")

    loaded = {}

    def _load(ref):
        resolved = os.path.join(base_dir, ref) if base_dir and not os.path.isabs(ref) else ref
        if resolved not in loaded:
            loaded[resolved] = load_model(resolved)
        return loaded[resolved]

    steps = []
    for i, entry in enumerate(data["steps"]):
        if not isinstance(entry, dict) or "kind" not in entry or "p" not in entry:
            _config_error(f'step {i} must be an object with "kind" and "p"')
        params = {k: v for k, v in entry.items() if k not in ("kind", "p")}
        step = AugmentStep(entry["kind"], entry["p"], params)
        if step.kind == "RandStainNA":
            ref = step.params.get("model_path") or global_ref
            if ref and step.params.get("model") is None:
                merged = dict(step.params, model=_load(ref))
                step = AugmentStep(step.kind, step.p, merged)
        steps.append(step)
    model = _load(global_ref) if global_ref else None
    return AugmentPipeline(tuple(steps), model)


def save_pipeline(pipeline: AugmentPipeline, path,
                  model_path: str | None = None) -> None:
    payload = pipeline_to_dict(pipeline, model_path)
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=1)
            fh.write("\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def load_pipeline(path) -> AugmentPipeline:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    return pipeline_from_dict(data, base_dir=os.path.dirname(os.fspath(path)) or None)
