"""Seeded printout augmentations: rotate, noise, contrast, brightness, grid colour jitter.

Every transform draws its gate and parameters on every call so the random stream
does not depend on which transforms fire. The generator is keyed on the augment
seed and a digest of the input raster.
"""

import copy
from typing import Dict, List

import numpy as np
from scipy import ndimage

from config import AUGMENT_TRANSFORMS, AugmentConfig
from lab.render import GRID_COLORS, EcgImage
from logger import get_logger
from utils import bytes_digest, rng_for

logger = get_logger("ecglab.augment")

GRID_JITTER_MAX = 30


def grid_mask(pixels: np.ndarray) -> np.ndarray:
    mask = np.zeros(pixels.shape[:2], dtype=bool)
    for colors in GRID_COLORS.values():
        for color in colors:
            mask |= np.all(pixels == np.asarray(color, dtype=np.uint8), axis=2)
    return mask


def _draw_params(rng: np.random.Generator, aug: AugmentConfig) -> List[Dict]:
    plan = []
    for name in AUGMENT_TRANSFORMS:
        gate = bool(rng.random() < aug.prob(name))
        if name == "rotate":
            params = {"angle": float(rng.uniform(-aug.rotation_deg, aug.rotation_deg))}
        elif name == "noise":
            params = {"sigma": float(rng.uniform(*aug.gauss_noise_sigma)), "seed": int(rng.integers(2**63))}
        elif name == "contrast":
            params = {"factor": float(rng.uniform(*aug.contrast))}
        elif name == "brightness":
            params = {"offset": float(rng.uniform(*aug.brightness))}
        else:
            shift = rng.integers(-GRID_JITTER_MAX, GRID_JITTER_MAX + 1, size=3)
            params = {"shift": [int(s) for s in shift]}
            gate = gate and aug.grid_color_jitter
        plan.append({"name": name, "gate": gate, "params": params})
    return plan


def _is_identity(name: str, params: Dict) -> bool:
    if name == "rotate":
        return params["angle"] == 0.0
    if name == "noise":
        return params["sigma"] == 0.0
    if name == "contrast":
        return params["factor"] == 1.0
    if name == "brightness":
        return params["offset"] == 0.0
    return not any(params["shift"])


def augment(image: EcgImage, aug: AugmentConfig) -> EcgImage:
    rng = rng_for(aug.seed, bytes_digest(image.pixels.tobytes()), *image.pixels.shape)
    plan = [step for step in _draw_params(rng, aug) if step["gate"] and not _is_identity(step["name"], step["params"])]

    meta = copy.deepcopy(image.meta)
    meta.setdefault("augmentations", [])
    meta["augmentations"].append({"seed": aug.seed, "applied": [{"name": s["name"], **s["params"]} for s in plan]})
    if not plan:
        return EcgImage(image.pixels.copy(), meta)

    img = image.pixels.astype(np.float64) / 255.0
    grid = grid_mask(image.pixels)
    for step in plan:
        name, params = step["name"], step["params"]
        if name == "rotate":
            img = ndimage.rotate(img, params["angle"], axes=(1, 0), reshape=False, order=1, mode="nearest")
            grid = ndimage.rotate(grid, params["angle"], axes=(1, 0), reshape=False, order=0, mode="nearest")
        elif name == "noise":
            img = img + np.random.default_rng(params["seed"]).normal(0.0, params["sigma"], size=img.shape)
        elif name == "contrast":
            img = img.mean() + (img - img.mean()) * params["factor"]
        elif name == "brightness":
            img = img + params["offset"]
        else:
            img[grid] += np.asarray(params["shift"], dtype=np.float64) / 255.0
        img = np.clip(img, 0.0, 1.0)

    logger.debug("augmented image", extra={"applied": [s["name"] for s in plan]})
    return EcgImage(np.rint(img * 255.0).astype(np.uint8), meta)
