########################################################################################
#
#    Copyright 2026 The blockzoo developers
#
#    This file is part of blockzoo.
#
#    This program is free software: you can redistribute it and/or modify
#    it under the terms of the GNU Lesser General Public License as published by
#    the Free Software Foundation, either version 3 of the License, or
#    (at your option) any later version.
#
#    This program is distributed in the hope that it will be useful,
#    but WITHOUT ANY WARRANTY; without even the implied warranty of
#    MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
#    GNU Lesser General Public License for more details.
#
#    You should have received a copy of the GNU Lesser General Public License
#    along with this program. If not, see <http://www.gnu.org/licenses/>.
#
########################################################################################
"""Dataset splits on disk, their manifests and single attribute intervention pairs."""

# 1. Standard library imports:
import dataclasses
import json
import logging
import math
import operator
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

# 2. Known third party imports:
import numpy as np
from PIL import Image

# 3. Local imports in the relative form:
from .errors import ConfigurationError, DatasetIOError, ShapeError
from .render import RenderConfig, RenderedSample, SceneRenderer
from .scene import (
    ATTRIBUTES,
    AnimalClass,
    SamplerConfig,
    SceneParameters,
    SceneSampler,
    resample_attribute,
    sample_stream,
)

logger = logging.getLogger(__name__)

PathLike = Union[str, os.PathLike]


def manifest_path(root: PathLike, split: str) -> Path:
    """Location of the manifest of ``split`` under ``root``."""
    return Path(root) / f"manifest-{split}.jsonl"


def load_image(path: PathLike) -> np.ndarray:
    """
    Read an RGB PNG as floats in ``[0, 1]``.

    :param path: Image file.
    :returns: Array of shape ``(H, W, 3)``.
    """
    with Image.open(path) as image:
        return np.asarray(image.convert("RGB"), dtype=np.float64) / 255.0


def attribute_delta(
    base: SceneParameters, modified: SceneParameters, name: str
) -> float:
    """
    Signed change of one attribute; yaw changes wrap to ``(-pi, pi]``.
    """
    delta = modified.attribute(name) - base.attribute(name)
    if name == "rotation_yaw":
        delta = math.pi - (math.pi - delta) % (2.0 * math.pi)
    return float(delta)


@dataclasses.dataclass(frozen=True)
class ManifestRecord:
    """One manifest line: scene parameters and file paths relative to the root."""

    params: SceneParameters
    image: str
    mask: str

    def to_dict(self) -> Dict[str, Any]:
        record = self.params.to_dict()
        record.update({"image": self.image, "mask": self.mask})
        return record

    @classmethod
    def from_dict(cls, record: Dict[str, Any]) -> "ManifestRecord":
        return cls(SceneParameters.from_dict(record), record["image"], record["mask"])


@dataclasses.dataclass
class DatasetManifest:
    """Config snapshot and records of one generated split."""

    split: str
    seed: int
    sampler: SamplerConfig
    render: RenderConfig
    records: List[ManifestRecord]
    root: Optional[Path] = dataclasses.field(default=None, compare=False)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def class_counts(self) -> Dict[str, int]:
        counts = {animal.value: 0 for animal in AnimalClass}
        for record in self.records:
            counts[record.params.class_label.value] += 1
        return counts

    @property
    def params(self) -> List[SceneParameters]:
        return [record.params for record in self.records]

    def labels(self) -> np.ndarray:
        """Binary labels, ``1`` for Stretchy."""
        return np.array([r.params.label for r in self.records], dtype=np.float64)

    def attribute_matrix(self) -> np.ndarray:
        """Attribute values of shape ``(n, 10)`` in ``ATTRIBUTES`` order."""
        return np.stack([r.params.attribute_vector() for r in self.records])

    def image_path(self, record: ManifestRecord) -> Path:
        if self.root is None:
            raise ConfigurationError("Manifest has no dataset root.")
        return self.root / record.image

    def image_array(self, indices=None, raw: bool = False) -> np.ndarray:
        """
        Load images in manifest order.

        :param indices: Optional subset of record indices.
        :param raw: Return the 8-bit pixels instead of floats, defaults to ``False``
        :returns: Array of shape ``(n, H, W, 3)``, floats in ``[0, 1]`` unless ``raw``.
        """
        records = self.records
        if indices is not None:
            records = [records[i] for i in indices]
        images = []
        for record in records:
            with Image.open(self.image_path(record)) as image:
                images.append(np.asarray(image.convert("RGB"), dtype=np.uint8))
        stacked = np.stack(images)
        return stacked if raw else stacked.astype(np.float64) / 255.0

    def to_jsonl(self) -> str:
        header = {
            "kind": "header",
            "split": self.split,
            "seed": self.seed,
            "n": len(self.records),
            "class_counts": self.class_counts,
            "sampler": self.sampler.to_dict(),
            "render": self.render.to_dict(),
        }
        lines = [json.dumps(header, sort_keys=True)]
        lines += [json.dumps(r.to_dict(), sort_keys=True) for r in self.records]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str, root: PathLike = None) -> "DatasetManifest":
        """
        Parse a manifest.

        :param text: Manifest contents.
        :param root: Dataset root the record paths are relative to.
        :raises ConfigurationError: If the header line is missing.
        """
        lines = [line for line in text.splitlines() if line.strip()]
        if not lines:
            raise ConfigurationError("Manifest is empty.")
        header = json.loads(lines[0])
        if header.get("kind") != "header":
            raise ConfigurationError("Manifest does not start with a header line.")
        return cls(
            split=header["split"],
            seed=header["seed"],
            sampler=SamplerConfig.from_dict(header["sampler"]),
            render=RenderConfig.from_dict(header["render"]),
            records=[ManifestRecord.from_dict(json.loads(line)) for line in lines[1:]],
            root=Path(root) if root is not None else None,
        )

    def write(self, path: PathLike = None) -> Path:
        """Write the manifest atomically, by default next to the split folders."""
        path = Path(path) if path else manifest_path(self.root, self.split)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(self.to_jsonl(), encoding="utf-8")
        os.replace(tmp, path)
        return path


def load_manifest(path: PathLike) -> DatasetManifest:
    """Read a manifest; its directory becomes the dataset root."""
    path = Path(path)
    return DatasetManifest.from_jsonl(path.read_text(encoding="utf-8"), path.parent)


@dataclasses.dataclass(frozen=True)
class InterventionPair:
    """Two scenes that differ in exactly one attribute, with their images."""

    base: SceneParameters
    modified: SceneParameters
    attribute: str
    base_image: Optional[Path] = None
    modified_image: Optional[Path] = None

    @property
    def delta(self) -> float:
        return attribute_delta(self.base, self.modified, self.attribute)


class DatasetGenerator:
    """
    Renders dataset splits into a directory tree.

    Layout: ``{root}/{split}/images/{id}.png``, ``{root}/{split}/masks/{id}_mask.png``
    and ``{root}/manifest-{split}.jsonl``.

    :param root: Dataset root directory.
    :param sampler_config: Sampler configuration, defaults to the biased study config.
    :param render_config: Render configuration, defaults to ``RenderConfig()``.
    :param seed: Global seed, defaults to ``0``
    :param workers: Threads rendering samples, defaults to ``1``
    """

    def __init__(
        self,
        root: PathLike,
        sampler_config: SamplerConfig = None,
        render_config: RenderConfig = None,
        seed: int = None,
        workers: int = None,
    ):
        self.root = root
        self.sampler = SceneSampler(sampler_config, seed)
        self.renderer = SceneRenderer(render_config)
        if workers is None:
            workers = 1
        self.workers = workers

    root = property(operator.attrgetter("_root"))

    @root.setter
    def root(self, r):
        if r is None:
            raise ValueError("Dataset root cannot be empty.")
        if not isinstance(r, (str, os.PathLike)):
            raise TypeError(f"Dataset root must be a path. {type(r)} was given.")
        self._root = Path(r)

    workers = property(operator.attrgetter("_workers"))

    @workers.setter
    def workers(self, w):
        if w is None:
            raise ValueError("Workers cannot be empty.")
        if not isinstance(w, int):
            raise TypeError(f"Workers must be an integer. {type(w)} was given.")
        if w < 1:
            raise ConfigurationError(f"Workers must be at least 1. {w} was given.")
        self._workers = w

    def _produce(self, split: str, sample_id: str) -> ManifestRecord:
        params = self.sampler.sample(sample_id)
        image = Path(split) / "images" / f"{sample_id}.png"
        mask = Path(split) / "masks" / f"{sample_id}_mask.png"
        if not ((self._root / image).exists() and (self._root / mask).exists()):
            rendered = self.renderer.render(params)
            rendered.save(self._root / image.parent, self._root / mask.parent)
        return ManifestRecord(params, image.as_posix(), mask.as_posix())

    def generate(self, split: str, n: int) -> DatasetManifest:
        """
        Render ``n`` samples of ``split`` and write its manifest.

        Samples whose image and mask already exist are not rendered again, so an
        interrupted run resumes where it stopped.

        :param split: Split name, also the sample id prefix.
        :param n: Number of samples (``>= 1``).
        :returns: The manifest, already written to disk.
        :raises ConfigurationError: If ``n < 1``.
        :raises DatasetIOError: If writing fails.
        """
        if not isinstance(n, int) or n < 1:
            raise ConfigurationError(f"At least one sample is needed. {n} was given.")
        for sub in ("images", "masks"):
            (self._root / split / sub).mkdir(parents=True, exist_ok=True)
        ids = [f"{split}-{i:06d}" for i in range(n)]
        report_every = max(1, n // 10)
        records = []
        try:
            with ThreadPoolExecutor(max_workers=self._workers) as pool:
                for record in pool.map(lambda i: self._produce(split, i), ids):
                    records.append(record)
                    if len(records) % report_every == 0:
                        logger.info("%s: %d/%d samples", split, len(records), n)
            manifest = DatasetManifest(
                split=split,
                seed=self.sampler.seed,
                sampler=self.sampler.config,
                render=self.renderer.config,
                records=records,
                root=self._root,
            )
            path = manifest.write()
        except OSError as e:
            message = f"Writing split {split} failed: {e}"
            raise DatasetIOError(message, len(records)) from e
        logger.info("Wrote %s (%s)", path, manifest.class_counts)
        return manifest


def generate_dataset(
    root: PathLike,
    n: int,
    split: str,
    sampler_config: SamplerConfig = None,
    render_config: RenderConfig = None,
    seed: int = None,
    workers: int = None,
) -> DatasetManifest:
    """Generate one split with a fresh ``DatasetGenerator``."""
    generator = DatasetGenerator(root, sampler_config, render_config, seed, workers)
    return generator.generate(split, n)


def regenerate_sample(
    record: ManifestRecord, render_config: RenderConfig
) -> RenderedSample:
    """Re-render a manifest record from its stored parameters."""
    return SceneRenderer(render_config).render(record.params)


def make_intervention_pairs(
    manifest: DatasetManifest,
    attribute: str,
    m: int,
    config: SamplerConfig = None,
    rng: np.random.Generator = None,
    render: bool = True,
    workers: int = None,
) -> List[InterventionPair]:
    """
    Build ``m`` pairs that differ only in ``attribute``.

    Base scenes are drawn from the manifest without replacement. The new value comes
    from a stream keyed by the base sample's seed and id, so a pair is reproducible
    on its own. Modified images go to ``{root}/{split}/interventions/{attribute}/``.

    :param manifest: Source split.
    :param attribute: One of ``ATTRIBUTES``.
    :param m: Number of pairs (``<=`` manifest size).
    :param config: Sampler configuration, defaults to the manifest's.
    :param rng: Stream choosing the base scenes, defaults to one seeded by the \
    manifest seed.
    :param render: Render the modified scenes, defaults to ``True``
    :param workers: Render threads, defaults to ``1``
    :raises ConfigurationError: On unknown attributes or ``m`` out of range.
    """
    if attribute not in ATTRIBUTES:
        raise ConfigurationError(f'Unknown attribute "{attribute}".')
    if not 1 <= m <= len(manifest):
        raise ConfigurationError(
            f"Pair count must be within 1 to {len(manifest)}. {m} was given."
        )
    config = config or manifest.sampler
    if rng is None:
        rng = sample_stream(manifest.seed, f"pairs~{manifest.split}~{attribute}")
    chosen = rng.permutation(len(manifest))[:m]

    out_dir = None
    renderer = None
    if render:
        if manifest.root is None:
            raise ConfigurationError("Rendering pairs needs a manifest with a root.")
        out_dir = manifest.root / manifest.split / "interventions" / attribute
        out_dir.mkdir(parents=True, exist_ok=True)
        renderer = SceneRenderer(manifest.render)

    def build(index: int) -> InterventionPair:
        record = manifest.records[index]
        base = record.params
        stream = sample_stream(base.seed, f"{base.sample_id}~{attribute}")
        modified = resample_attribute(base, attribute, config, stream)
        modified = dataclasses.replace(
            modified, sample_id=f"{base.sample_id}~{attribute}"
        )
        if not render:
            return InterventionPair(base, modified, attribute)
        modified_image = out_dir / f"{modified.sample_id}.png"
        if not modified_image.exists():
            rendered = renderer.render(modified)
            modified_image.write_bytes(rendered.image_png())
        return InterventionPair(
            base, modified, attribute, manifest.image_path(record), modified_image
        )

    with ThreadPoolExecutor(max_workers=workers or 1) as pool:
        pairs = list(pool.map(build, (int(i) for i in chosen)))
    logger.info("Built %d %s intervention pairs", len(pairs), attribute)
    return pairs


def box_downsample(images: np.ndarray, size: int) -> np.ndarray:
    """
    Average ``(N, H, W, C)`` images over square blocks down to ``size x size``.

    :raises ShapeError: If ``H`` or ``W`` is not a multiple of ``size``.
    """
    n, h, w, c = images.shape
    if h % size or w % size:
        raise ShapeError(f"Cannot box filter {h}x{w} images down to {size}x{size}.")
    return images.reshape(n, size, h // size, size, w // size, c).mean(axis=(2, 4))


def nearest_upsample(images: np.ndarray, height: int, width: int) -> np.ndarray:
    """
    Repeat pixels of ``(N, h, w, C)`` images up to ``height x width``.

    :raises ShapeError: If the target is not a multiple of the source size.
    """
    _, h, w, _ = images.shape
    if height % h or width % w:
        raise ShapeError(f"Cannot upsample {h}x{w} images to {height}x{width}.")
    return np.repeat(np.repeat(images, height // h, axis=1), width // w, axis=2)
