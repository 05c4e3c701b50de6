"""Dataloader-facing bindings for the pathaug augmentation pipeline.

A training dataloader wants one immutable handle shared by every worker plus
a pure function it can call per batch item. ``bind_load`` reads a pipeline
config and stain model once and freezes them into a :class:`BoundPipeline`;
``bind_apply`` maps ``(handle, uint8 array, item_index)`` to an augmented
uint8 array. Randomness is keyed by ``(seed, worker_id, item_index)`` rather
than a mutable stream, so the output for an item does not depend on which
worker processed it or on call order, and two handles built from the same
files never interfere with each other.

Worker 0 matches the command line: for an image at position ``i`` of the
sorted input listing, ``bind_apply(handle, pixels, i)`` returns byte-for-byte
the file that ``pathaug augment`` writes under the same seed.

The module adds no image math of its own. It consumes pathaug through its
public interface and re-exports the handful of functions a dataloader is
likely to want next to the pipeline (``image_stats``, ``fit_gmm``,
``sample_target_stats``, ``load_model``, ``apply_pipeline``); pathaug error
types pass through unchanged.
"""

from __future__ import annotations

import operator
from dataclasses import dataclass

import numpy as np

from pathaug import (
    ConfigError,
    RasterImage,
    ShapeError,
    apply_pipeline,
    derive_rng,
    fit_gmm,
    image_stats,
    load_model,
    load_pipeline,
    sample_target_stats,
)
from pathaug.augment import AugmentPipeline

__all__ = [
    "BoundPipeline",
    "ShapeError",
    "apply_pipeline",
    "bind_apply",
    "bind_load",
    "fit_gmm",
    "image_stats",
    "load_model",
    "sample_target_stats",
]

__version__ = "0.1.0"


@dataclass(frozen=True, eq=False)
class BoundPipeline:
    """Loaded pipeline plus the stream key parts shared by every call.

    Instances are immutable; ``bind_apply`` never mutates the handle, so one
    handle can be shared across threads or pickled into forked dataloader
    workers. Each worker process that wants its own stream builds a handle
    with its ``worker_id``.
    """

    pipeline: AugmentPipeline
    seed: int
    worker_id: int

    def __post_init__(self):
        if not isinstance(self.pipeline, AugmentPipeline):
            raise TypeError(
                f"pipeline must be an AugmentPipeline, got {type(self.pipeline).__name__}"
            )
        object.__setattr__(self, "seed", _as_index("seed", self.seed, minimum=None))
        object.__setattr__(self, "worker_id", _as_index("worker_id", self.worker_id))


def bind_load(config_path, model_path=None, seed=0, worker_id=0) -> BoundPipeline:
    """Load a pipeline config (and optionally a stain model) into a handle.

    ``model_path`` overrides any model referenced by the config itself; leave
    it ``None`` when the config's own ``model_path`` entry should be used.
    File and validation problems raise the pathaug error types directly
    (``IoError``, ``ConfigError``, ``SchemaError``); a pipeline containing a
    RandStainNA step with no stain model from either source is rejected here
    rather than at the first ``bind_apply`` call.
    """
    pipeline = load_pipeline(config_path)
    if model_path is not None:
        pipeline = pipeline.with_model(load_model(model_path))
    for step in pipeline.steps:
        if step.kind == "RandStainNA" and step.params.get("model") is None \
                and pipeline.model is None:
            raise ConfigError(
                "pipeline has a RandStainNA step but no stain model: pass "
                "model_path or set model_path in the pipeline config"
            )
    return BoundPipeline(pipeline, seed, worker_id)


def bind_apply(handle: BoundPipeline, image, item_index) -> np.ndarray:
    """Augment one batch item; a pure function of (handle, image, item_index).

    ``image`` is a dense (height, width, 3) uint8 array; anything else raises
    :class:`ShapeError`. The input is never modified: a writeable or
    non-contiguous buffer is copied once on the way in, a read-only
    contiguous one is used as-is. The result is a fresh writeable uint8
    array of the same shape, byte-identical across repeated calls and across
    concurrent calls from different threads.
    """
    if not isinstance(handle, BoundPipeline):
        raise TypeError(f"handle must be a BoundPipeline, got {type(handle).__name__}")
    arr = _checked_buffer(image)
    index = _as_index("item_index", item_index)
    rng = derive_rng(handle.seed, handle.worker_id, index)
    result = apply_pipeline(handle.pipeline, RasterImage(arr), rng)
    return np.array(result.pixels)


def _as_index(name: str, value, minimum=0) -> int:
    if isinstance(value, bool):
        raise TypeError(f"{name} must be an integer, got bool")
    try:
        value = operator.index(value)
    except TypeError:
        raise TypeError(f"{name} must be an integer, got {type(value).__name__}") from None
    if minimum is not None and value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    return value


def _checked_buffer(image) -> np.ndarray:
    try:
        arr = np.asarray(image)
    except Exception as exc:
        raise ShapeError(f"image is not array-like: {exc}") from exc
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ShapeError(f"image must have shape (h, w, 3), got {arr.shape}")
    if arr.dtype != np.uint8:
        raise ShapeError(f"image must be uint8, got {arr.dtype}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeError(f"image must be at least 1x1, got {arr.shape}")
    if not arr.flags.c_contiguous:
        # One copy in; freezing it lets RasterImage adopt the buffer without
        # copying a second time.
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
    return arr
