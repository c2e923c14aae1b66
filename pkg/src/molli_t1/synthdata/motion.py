"""Rigid in-plane motion applied to selected images of a MOLLI stack."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy import ndimage

from molli_t1.synthdata.phantom import MolliStack


@dataclass(frozen=True)
class MotionSpec:
    """Rotation (degrees, about the image centre) followed by a translation (mm).

    ``mode="composite"`` applies all transforms to every target image;
    ``mode="split"`` gives the rotation to the first target and the
    translation to the second.
    """

    rotation_deg: float = 15.0
    tx_mm: float = 15.0
    ty_mm: float = 15.0
    target_indices: Optional[tuple[int, ...]] = None
    n_targets: int = 2
    fill: float = 0.0
    mode: str = "composite"

    def is_identity(self) -> bool:
        return self.rotation_deg == 0 and self.tx_mm == 0 and self.ty_mm == 0


def rigid_transform(image, rotation_deg, shift_px, fill=0.0):
    """Rotate ``image`` about its centre, then shift by ``(dx, dy)`` pixels.

    Bilinear interpolation; samples falling outside the image take ``fill``.
    Positive angles rotate counter-clockwise in (x, y) with y along rows.
    """
    image = np.asarray(image, dtype=np.float64)
    theta = np.deg2rad(rotation_deg)
    c, s = np.cos(theta), np.sin(theta)
    centre = (np.array(image.shape, dtype=np.float64) - 1) / 2  # (y, x)
    dx, dy = shift_px
    # output p' = R (p - c) + c + t  =>  input p = R^T (p' - c - t) + c; in (y, x) order
    inv = np.array([[c, -s], [s, c]])
    offset = centre - inv @ (centre + np.array([dy, dx]))
    # snap roundoff (e.g. sin(2*pi)) so whole turns and integer shifts stay exact at the border
    inv = np.where(np.abs(inv - np.round(inv)) < 1e-12, np.round(inv), inv)
    offset = np.where(np.abs(offset - np.round(offset)) < 1e-9, np.round(offset), offset)
    return ndimage.affine_transform(image, inv, offset=offset, order=1, mode="constant", cval=fill)


def apply_motion(stack: MolliStack, motion: MotionSpec, rng: np.random.Generator) -> MolliStack:
    """Corrupt a random (or given) set of images with rigid motion."""
    m = stack.images.shape[0]
    if m < 2:
        raise ValueError("motion corruption needs at least 2 images")
    if motion.target_indices is None:
        targets = tuple(sorted(int(i) for i in rng.choice(m, size=motion.n_targets, replace=False)))
    else:
        targets = tuple(int(i) for i in motion.target_indices)
        if len(set(targets)) != len(targets) or any(not 0 <= i < m for i in targets):
            raise ValueError(f"invalid motion targets {targets} for a stack of {m} images")
    if motion.is_identity():
        return replace(stack, images=stack.images.copy(), corrupted=tuple(sorted(set(stack.corrupted) | set(targets))))
    shift = (motion.tx_mm / stack.pixel_spacing, motion.ty_mm / stack.pixel_spacing)
    images = stack.images.copy()
    for j, idx in enumerate(targets):
        if motion.mode == "composite":
            rot, sh = motion.rotation_deg, shift
        elif motion.mode == "split":
            rot, sh = (motion.rotation_deg, (0.0, 0.0)) if j % 2 == 0 else (0.0, shift)
        else:
            raise ValueError(f"unknown motion mode {motion.mode!r}")
        images[idx] = np.maximum(rigid_transform(images[idx], rot, sh, motion.fill), 0.0)
    corrupted = tuple(sorted(set(stack.corrupted) | set(targets)))
    return replace(stack, images=images, corrupted=corrupted)
