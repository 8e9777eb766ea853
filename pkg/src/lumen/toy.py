"""Procedural toy faces with planted identity ground truth.

An identity is a face ellipse plus a few coloured "part" blobs on a background.
Its albedo is the unlit colour map; its normals come from a height field (a
dome for the face, small bumps for the parts). Renders apply a random
directional light, a global gain, up to one pixel of jitter and occasional
blur, so different photos of one identity differ in illumination and detail
but share the underlying layout.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .gallery import normalize_normals
from .image import SIGNED, UNIT, ImageBuffer
from .rng import SeededRng


@dataclass(frozen=True)
class ToyIdentity:
    seed: int
    index: int
    center: tuple
    axes: tuple
    face_color: tuple
    background: tuple
    parts: tuple  # (cy, cx, ry, rx, r, g, b, height) in face-relative units

    @classmethod
    def from_seed(cls, seed: int, index: int) -> ToyIdentity:
        r = SeededRng(seed, "identity", index)
        center = (0.5 + r.uniform(None, -0.06, 0.06), 0.5 + r.uniform(None, -0.06, 0.06))
        axes = (r.uniform(None, 0.32, 0.45), r.uniform(None, 0.26, 0.40))
        face = tuple(r.uniform(3, 0.3, 0.95))
        bg = tuple(r.uniform(3, 0.05, 0.5))
        parts = []
        for k in range(int(r.integers(2, 4))):
            cy, cx = r.uniform(None, -0.5, 0.5), r.uniform(None, -0.5, 0.5)
            ry, rx = r.uniform(None, 0.25, 0.5), r.uniform(None, 0.25, 0.5)
            col = r.uniform(3, 0.05, 0.95)
            parts.append((cy, cx, ry, rx, *col, r.uniform(None, -0.3, 0.3)))
        return cls(int(seed), int(index), center, axes, face, bg, tuple(parts))

    def _grid(self, size: int):
        c = (np.arange(size) + 0.5) / size
        yy, xx = np.meshgrid(c, c, indexing="ij")
        u = (yy - self.center[0]) / self.axes[0]
        v = (xx - self.center[1]) / self.axes[1]
        return u, v

    def _part_masks(self, u, v):
        for cy, cx, ry, rx, *rest in self.parts:
            d = ((u - cy) / ry) ** 2 + ((v - cx) / rx) ** 2
            yield np.clip(1.0 - d, 0.0, 1.0), rest

    def albedo(self, size: int = 16) -> np.ndarray:
        u, v = self._grid(size)
        inside = (u**2 + v**2 <= 1.0)[..., None]
        img = np.where(inside, np.array(self.face_color), np.array(self.background))
        for m, (r, g, b, _h) in self._part_masks(u, v):
            w = (np.sqrt(m) * inside[..., 0])[..., None]
            img = img * (1 - w) + w * np.array([r, g, b])
        return np.clip(img, 0.0, 1.0)

    def height(self, size: int = 16) -> np.ndarray:
        u, v = self._grid(size)
        h = np.sqrt(np.clip(1.0 - u**2 - v**2, 0.0, None)) * 0.5
        for m, (*_c, bump) in self._part_masks(u, v):
            h = h + bump * m * (h > 0)
        return h

    def normals(self, size: int = 16) -> np.ndarray:
        h = self.height(size) * size / 4.0
        gy, gx = np.gradient(h)
        return normalize_normals(np.stack([-gx, -gy, np.ones_like(h)], axis=-1))

    def albedo_buffer(self, size: int = 16) -> ImageBuffer:
        return ImageBuffer(self.albedo(size), range=UNIT)

    def normal_buffer(self, size: int = 16) -> ImageBuffer:
        return ImageBuffer(self.normals(size), range=SIGNED)

    def render(self, rng: SeededRng, size: int = 16, blur_prob: float = 0.25) -> ImageBuffer:
        """One photo under a random near-frontal light, gain, +-1 px jitter and optional blur."""
        theta = rng.uniform(None, 0.0, 0.6)
        phi = rng.uniform(None, 0.0, 2 * np.pi)
        light = np.array([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)])
        gain = rng.uniform(None, 0.7, 1.1)
        shading = 0.25 + 0.75 * np.clip(self.normals(size) @ light, 0.0, None)
        img = self.albedo(size) * shading[..., None] * gain
        dy, dx = (int(s) for s in rng.integers(-1, 2, shape=2))
        img = ndimage.shift(img, (dy, dx, 0), order=0, mode="nearest")
        if rng.uniform() < blur_prob:
            img = ndimage.gaussian_filter(img, (0.8, 0.8, 0), mode="nearest")
        return ImageBuffer(np.clip(img, 0.0, 1.0), range=UNIT)


@dataclass
class ToySet:
    identities: list
    gallery: list  # per identity, list of ImageBuffer
    probe: list
    train: list


def make_toy_set(n_ids: int = 8, per_id: int = 6, size: int = 16, seed: int = 0,
                 n_probe: int = 2, n_train: int = 32) -> ToySet:
    """Identities ``0..n_ids-1`` with ``per_id`` gallery photos, probes and training renders."""
    ids = [ToyIdentity.from_seed(seed, i) for i in range(n_ids)]
    sets = {}
    for name, count in (("gallery", per_id), ("probe", n_probe), ("train", n_train)):
        sets[name] = [[ident.render(SeededRng(seed, "render", name, i, k), size) for k in range(count)]
                      for i, ident in enumerate(ids)]
    return ToySet(ids, sets["gallery"], sets["probe"], sets["train"])


def identity_record(ident: ToyIdentity) -> dict:
    return {"index": ident.index, "seed": ident.seed, "center": list(ident.center),
            "axes": list(ident.axes), "face_color": list(ident.face_color),
            "background": list(ident.background), "parts": [list(p) for p in ident.parts]}


def write_toy_set(ts: ToySet, out, size: int, config: dict, codecs=None) -> None:
    """Directory layout::

        manifest.json
        codecs/albedo.dpgd, codecs/normal.dpgd       (when codecs are given)
        id_000/albedo.pfm, id_000/normal.pfm         ground-truth buffers
        id_000/gallery/g00.pfm ... probe/p00.pfm ... train/t000.pfm ...
    """
    from .gallery import save_codec
    from .imageio import write_image, write_json

    out = Path(out)
    for i, ident in enumerate(ts.identities):
        d = out / f"id_{i:03d}"
        write_image(ident.albedo_buffer(size), d / "albedo.pfm")
        write_image(ident.normal_buffer(size), d / "normal.pfm")
        for name, prefix, width, imgs in (("gallery", "g", 2, ts.gallery[i]), ("probe", "p", 2, ts.probe[i]),
                                          ("train", "t", 3, ts.train[i])):
            for k, img in enumerate(imgs):
                write_image(img, d / name / f"{prefix}{k:0{width}d}.pfm")
    if codecs is not None:
        save_codec(codecs[0], out / "codecs" / "albedo.dpgd")
        save_codec(codecs[1], out / "codecs" / "normal.dpgd")
    write_json(out / "manifest.json", {**config, "identities": [identity_record(t) for t in ts.identities]})


def read_image_dir(d) -> list:
    from .imageio import read_image

    d = Path(d)
    return [read_image(p) for p in sorted(d.iterdir()) if p.suffix in (".pfm", ".ppm", ".pgm")] if d.is_dir() else []


@dataclass
class ToyDir:
    root: Path
    names: list
    gallery: list
    probe: list
    train: list


def read_toy_dir(root) -> ToyDir:
    from .errors import DomainError

    root = Path(root)
    dirs = sorted(p for p in root.glob("id_*") if p.is_dir())
    if not dirs:
        raise DomainError(f"no identity folders (id_*) in {root}")
    return ToyDir(root, [p.name for p in dirs], [read_image_dir(p / "gallery") for p in dirs],
                  [read_image_dir(p / "probe") for p in dirs], [read_image_dir(p / "train") for p in dirs])
