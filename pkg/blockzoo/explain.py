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
"""
Explanation artifacts: the logit sorted baseline grid, the counterfactual
interpolation grid and the concept grid.

Every grid holds 50 cells of the same size and is written as a PNG with a JSON
layout sidecar describing each cell.
"""

# 1. Standard library imports:
import dataclasses
import io
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

# 2. Known third party imports:
import numpy as np
from PIL import Image, ImageDraw, ImageFont
from pypdfium2 import PdfDocument, PdfImage, PdfMatrix

# 3. Local imports in the relative form:
from .dataset import DatasetManifest
from .errors import (
    ArgumentError,
    ConfigurationError,
    EmptyExplanationError,
    InsufficientPoolError,
)
from .flow import FlowModel, make_counterfactual

logger = logging.getLogger(__name__)

BIN_LABELS = (
    "very certain Peeky",
    "certain Peeky",
    "unsure",
    "certain Stretchy",
    "very certain Stretchy",
)
BIN_MODES = ("quantile", "range")
GRID_ROWS = 10
GRID_COLUMNS = 5
CELL_SIZE = 64
HEADER_HEIGHT = 20
ROW_LABEL_WIDTH = 80
DECODE_TOLERANCE = 0.05
HIGHLIGHT_PERCENTILE = 70.0
DIM_FACTOR = 0.4


# Layout ###############################################################################


@dataclasses.dataclass
class GridCell:
    row: int
    col: int
    sample_id: str
    logit: Optional[float] = None
    bin: Optional[str] = None


@dataclasses.dataclass
class GridLayout:
    """Description of a composed grid; serialized as the PNG's JSON sidecar."""

    technique: str
    rows: int
    cols: int
    column_labels: List[str]
    cells: List[GridCell]
    row_labels: List[str] = dataclasses.field(default_factory=list)
    bin_edges: Optional[List[float]] = None
    cell_size: int = CELL_SIZE
    image_size: Tuple[int, int] = (0, 0)
    metadata: Dict[str, Any] = dataclasses.field(default_factory=dict)

    def column(self, col: int) -> List[GridCell]:
        return [cell for cell in self.cells if cell.col == col]

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, document: Dict[str, Any]) -> "GridLayout":
        document = dict(document)
        document["cells"] = [GridCell(**cell) for cell in document["cells"]]
        document["image_size"] = tuple(document["image_size"])
        return cls(**document)


def compose_png(
    images: Sequence[Sequence[np.ndarray]],
    column_labels: Sequence[str],
    row_labels: Sequence[str] = (),
    cell_size: int = CELL_SIZE,
) -> Image.Image:
    """
    Paste a rectangular grid of images under a header of column labels.

    :param images: Rows of ``(H, W, 3)`` float images in ``[0, 1]``.
    :param column_labels: Header text per column.
    :param row_labels: Optional text left of each row.
    :param cell_size: Edge length every cell is resized to.
    """
    rows, cols = len(images), len(column_labels)
    left = ROW_LABEL_WIDTH if row_labels else 0
    canvas = Image.new(
        "RGB", (left + cols * cell_size, HEADER_HEIGHT + rows * cell_size), "white"
    )
    draw = ImageDraw.Draw(canvas)
    font = ImageFont.load_default()
    for c, label in enumerate(column_labels):
        x = left + c * cell_size + (cell_size - draw.textlength(label, font=font)) / 2
        draw.text((max(left + c * cell_size, x), 4), label, fill="black", font=font)
    for r, row in enumerate(images):
        if row_labels:
            y = HEADER_HEIGHT + r * cell_size + cell_size // 2 - 5
            draw.text((4, y), row_labels[r], fill="black", font=font)
        for c, image in enumerate(row):
            pixels = np.round(np.clip(image, 0, 1) * 255).astype(np.uint8)
            tile = Image.fromarray(pixels)
            if tile.size != (cell_size, cell_size):
                tile = tile.resize((cell_size, cell_size), Image.Resampling.NEAREST)
            canvas.paste(tile, (left + c * cell_size, HEADER_HEIGHT + r * cell_size))
    return canvas


def save_grid(
    layout: GridLayout, image: Image.Image, path: Union[str, os.PathLike]
) -> Tuple[Path, Path]:
    """
    Write a grid PNG and its layout sidecar ``<stem>.json`` next to it.

    :returns: The PNG and sidecar paths.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    image.save(path, format="PNG")
    sidecar = path.with_suffix(".json")
    sidecar.write_text(layout.to_json(), encoding="utf-8")
    logger.info("wrote %s grid to %s", layout.technique, path)
    return path, sidecar


def export_handout(grid_pngs: Sequence[Union[bytes, str, os.PathLike]]) -> bytes:
    """
    Bundle grid images into a PDF, one page per grid.

    :param grid_pngs: PNG payloads or paths, in page order.
    :returns: PDF bytes.
    """
    if not grid_pngs:
        raise ArgumentError("A handout needs at least one grid.")
    pdf = PdfDocument.new()
    for grid in grid_pngs:
        source = io.BytesIO(grid) if isinstance(grid, bytes) else grid
        with Image.open(source) as pil_image:
            # pypdfium2 embeds JPEG streams directly.
            image_bytes = io.BytesIO()
            pil_image.convert("RGB").save(image_bytes, format="JPEG", quality=95)

        image = PdfImage.new(pdf)
        image.load_jpeg(image_bytes)
        width, height = image.get_size()
        image.set_matrix(PdfMatrix().scale(width, height))

        page = pdf.new_page(width, height)
        page.insert_obj(image)
        page.gen_content()

    pdf_bytes = io.BytesIO()
    pdf.save(pdf_bytes)
    return pdf_bytes.getvalue()


# Baseline grid ########################################################################


def logit_bin_edges(logits: np.ndarray, mode: str = "quantile") -> np.ndarray:
    """
    Six edges delimiting the five grid columns.

    ``quantile`` puts a fifth of the logits in each column, ``range`` splits the logit
    range into equal widths.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if mode == "quantile":
        return np.percentile(logits, np.linspace(0.0, 100.0, GRID_COLUMNS + 1))
    if mode == "range":
        return np.linspace(logits.min(), logits.max(), GRID_COLUMNS + 1)
    raise ConfigurationError(
        f'Bin mode must be one of {BIN_MODES}. "{mode}" was given.'
    )


def assign_bins(logits: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Column index of each logit; inner edges belong to the upper column."""
    return np.searchsorted(np.asarray(edges)[1:-1], np.asarray(logits), side="right")


def baseline_layout(
    logits: Sequence[float],
    sample_ids: Sequence[str],
    rng: np.random.Generator,
    mode: str = "quantile",
) -> GridLayout:
    """
    Choose 10 pool samples per logit column without replacement.

    Each column's candidates are ordered by sample id before sampling, so the choice
    does not depend on pool order. Cells in a column are sorted by logit.

    :raises ArgumentError: For a pool smaller than 50.
    :raises InsufficientPoolError: If a column has fewer than 10 candidates.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if len(logits) != len(sample_ids):
        raise ArgumentError("Every pool sample needs a logit.")
    if len(logits) < GRID_ROWS * GRID_COLUMNS:
        raise ArgumentError(
            f"The baseline pool needs at least 50 samples. {len(logits)} were given."
        )
    edges = logit_bin_edges(logits, mode)
    columns = assign_bins(logits, edges)
    cells = []
    for col, label in enumerate(BIN_LABELS):
        candidates = sorted(np.flatnonzero(columns == col), key=lambda i: sample_ids[i])
        if len(candidates) < GRID_ROWS:
            raise InsufficientPoolError(label, len(candidates))
        chosen = rng.choice(np.array(candidates), size=GRID_ROWS, replace=False)
        chosen = sorted(chosen, key=lambda i: logits[i])
        cells += [
            GridCell(row, col, sample_ids[i], float(logits[i]), label)
            for row, i in enumerate(chosen)
        ]
    return GridLayout(
        technique="baseline",
        rows=GRID_ROWS,
        cols=GRID_COLUMNS,
        column_labels=list(BIN_LABELS),
        cells=cells,
        bin_edges=edges.tolist(),
        metadata={"bin_mode": mode},
    )


def _score(model, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
    starts = range(0, len(images), batch_size)
    return np.concatenate(
        [model.predict_logits(images[i : i + batch_size]) for i in starts]
    )


def compose_baseline_grid(
    model,
    manifest: DatasetManifest,
    rng: np.random.Generator,
    mode: str = "quantile",
) -> Tuple[GridLayout, Image.Image]:
    """
    Baseline explanation: validation images sorted into five logit columns.

    :param model: Scorer with ``predict_logits(images)``.
    :param manifest: Validation pool of at least 50 images.
    :param rng: Stream of the per-column sampling.
    :param mode: ``quantile`` or ``range`` bins, defaults to ``quantile``
    """
    images = manifest.image_array()
    ids = [r.params.sample_id for r in manifest.records]
    logits = _score(model, images)
    layout = baseline_layout(logits, ids, rng, mode)
    index = {sample_id: i for i, sample_id in enumerate(ids)}
    grid = [[None] * GRID_COLUMNS for _ in range(GRID_ROWS)]
    for cell in layout.cells:
        grid[cell.row][cell.col] = images[index[cell.sample_id]]
    image = compose_png(grid, layout.column_labels)
    layout.image_size = image.size
    return layout, image


# Counterfactual grid ##################################################################


def column_targets(
    model: FlowModel, mode: str = "quantile"
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Column edges and center logits of the counterfactual grid.

    The columns follow the baseline semantics on the flow's recorded validation
    logits: quintiles centered on the 10th to 90th percentiles, or equal widths.

    :returns: Six edges and five targets.
    """
    if mode == "quantile":
        edges = model.logit_percentile(np.linspace(0.0, 100.0, GRID_COLUMNS + 1))
        targets = model.logit_percentile(np.linspace(10.0, 90.0, GRID_COLUMNS))
    elif mode == "range":
        low, high = model.logit_percentile([0.0, 100.0])
        edges = np.linspace(low, high, GRID_COLUMNS + 1)
        targets = (edges[:-1] + edges[1:]) / 2.0
    else:
        raise ConfigurationError(
            f'Bin mode must be one of {BIN_MODES}. "{mode}" was given.'
        )
    return np.asarray(edges), np.asarray(targets)


def compose_counterfactual_grid(
    model: FlowModel,
    seed_images: np.ndarray,
    sample_ids: Sequence[str] = None,
    steps: int = GRID_COLUMNS,
    mode: str = "quantile",
) -> Tuple[GridLayout, Image.Image, List]:
    """
    Counterfactual explanation: one interpolation per row, columns at bin centers.

    Steps whose decoded image moves more than 0.05 from the exact inverse under 8-bit
    quantization are recorded in ``layout.metadata["decode_warnings"]``.

    :param model: Trained flow with recorded percentiles.
    :param seed_images: ``(10, H, W, 3)`` source images at render resolution.
    :param sample_ids: Ids of the sources.
    :param steps: Columns, defaults to ``5``
    :returns: Layout, grid image and the trajectories.
    """
    seed_images = np.asarray(seed_images, dtype=np.float64)
    if len(seed_images) != GRID_ROWS:
        raise ArgumentError(
            f"The counterfactual grid needs 10 seeds. {len(seed_images)} were given."
        )
    if steps != GRID_COLUMNS:
        raise ArgumentError(
            f"The counterfactual grid has 5 columns. {steps} steps were given."
        )
    if sample_ids is None:
        sample_ids = [str(i) for i in range(GRID_ROWS)]
    edges, targets = column_targets(model, mode)
    height, width = seed_images.shape[1:3]
    rows, cells, trajectories, warnings = [], [], [], []
    for r, (image, sample_id) in enumerate(zip(seed_images, sample_ids)):
        trajectory = make_counterfactual(
            model, image, targets=targets, sample_id=sample_id
        )
        trajectories.append(trajectory)
        rows.append(list(trajectory.images(height, width)))
        for c, step in enumerate(trajectory.steps):
            cells.append(GridCell(r, c, sample_id, step.logit, BIN_LABELS[c]))
            if step.decode_error > DECODE_TOLERANCE:
                warnings.append({"row": r, "col": c, "error": step.decode_error})
                logger.warning(
                    "decode error %.3f at row %d column %d", step.decode_error, r, c
                )
    image = compose_png(rows, BIN_LABELS)
    layout = GridLayout(
        technique="counterfactual",
        rows=GRID_ROWS,
        cols=GRID_COLUMNS,
        column_labels=list(BIN_LABELS),
        cells=cells,
        bin_edges=edges.tolist(),
        image_size=image.size,
        metadata={
            "bin_mode": mode,
            "targets": targets.tolist(),
            "decode_warnings": warnings,
        },
    )
    return layout, image, trajectories


# Concepts #############################################################################


@dataclasses.dataclass
class ConceptSet:
    """
    Rank-k factorization of feature maps.

    ``components`` is ``(k, C)``, ``maps`` holds the per-image coefficients with shape
    ``(N, H, W, k)``.
    """

    components: np.ndarray
    singular_values: np.ndarray
    maps: np.ndarray
    correlations: Optional[np.ndarray] = None
    selected: List[int] = dataclasses.field(default_factory=list)

    @property
    def k(self) -> int:
        return len(self.components)

    def mean_activations(self) -> np.ndarray:
        """Per-image mean coefficient of each component, ``(N, k)``."""
        return self.maps.mean(axis=(1, 2))

    def reconstruct(self) -> np.ndarray:
        return self.maps @ self.components


def reconstruction_error(activations: np.ndarray, concepts: ConceptSet) -> float:
    """Frobenius norm of the factorization residual."""
    return float(np.linalg.norm(activations - concepts.reconstruct()))


def factorize_activations(
    activations: np.ndarray,
    k: int = 10,
    seed: int = 0,
    iterations: int = 200,
    tolerance: float = 1e-8,
) -> ConceptSet:
    """
    Truncated SVD of feature maps by orthogonal power iteration.

    The ``(N*H*W, C)`` matrix ``A`` is factorized through its Gram matrix ``A^T A``;
    a final Rayleigh-Ritz step orders the components by singular value. Each
    component's sign makes its largest magnitude entry positive.

    :param activations: ``(N, H, W, C)`` feature maps.
    :param k: Number of components (``<= C``), defaults to ``10``
    :param seed: Seed of the starting subspace, defaults to ``0``
    :param iterations: Iteration cap, defaults to ``200``
    :param tolerance: Subspace change that stops the iteration, defaults to ``1e-8``
    :raises ArgumentError: If ``k`` exceeds the channels or the images.
    """
    activations = np.asarray(activations, dtype=np.float64)
    n, h, w, c = activations.shape
    if not 1 <= k <= c:
        raise ArgumentError(f"k must be within 1 to {c} channels. {k} was given.")
    if n < k:
        raise ArgumentError(f"At least k={k} images are needed. {n} were given.")
    matrix = activations.reshape(-1, c)
    gram = matrix.T @ matrix
    basis, _ = np.linalg.qr(np.random.default_rng(seed).standard_normal((c, k)))
    for iteration in range(iterations):
        updated, _ = np.linalg.qr(gram @ basis)
        change = np.linalg.norm(updated - basis @ (basis.T @ updated))
        basis = updated
        if change < tolerance:
            logger.debug("power iteration converged after %d iterations", iteration + 1)
            break
    eigenvalues, rotation = np.linalg.eigh(basis.T @ gram @ basis)
    order = np.argsort(eigenvalues)[::-1]
    basis = basis @ rotation[:, order]
    peaks = basis[np.argmax(np.abs(basis), axis=0), np.arange(k)]
    basis = basis * np.where(peaks < 0, -1.0, 1.0)
    singular_values = np.sqrt(np.clip(eigenvalues[order], 0.0, None))
    maps = (matrix @ basis).reshape(n, h, w, k)
    return ConceptSet(components=basis.T, singular_values=singular_values, maps=maps)


def pearson_r(x: np.ndarray, y: np.ndarray) -> float:
    """Pearson correlation; zero when either side has no variance."""
    x = np.asarray(x, dtype=np.float64) - np.mean(x)
    y = np.asarray(y, dtype=np.float64) - np.mean(y)
    denominator = np.sqrt((x @ x) * (y @ y))
    return float(x @ y / denominator) if denominator > 0 else 0.0


def select_by_correlation(
    correlations: np.ndarray, threshold: float, top: int
) -> List[int]:
    """Indices of at most ``top`` components with ``|r| >= threshold``, by ``|r|``."""
    magnitude = np.abs(np.asarray(correlations))
    ranked = np.argsort(-magnitude, kind="stable")
    order = [int(i) for i in ranked if magnitude[i] >= threshold]
    return order[:top]


def select_concepts(
    concepts: ConceptSet, logits: Sequence[float], threshold: float = 0.2, top: int = 5
) -> ConceptSet:
    """
    Keep the components whose mean activation correlates most with the logit.

    :param concepts: Result of ``factorize_activations`` on the displayed pool.
    :param logits: Logit of each pool image.
    :param threshold: Minimum ``|r|``, defaults to ``0.2``
    :param top: Maximum number of components, defaults to ``5``
    """
    means = concepts.mean_activations()
    logits = np.asarray(logits, dtype=np.float64)
    if len(logits) != len(means):
        raise ArgumentError("Every pool image needs a logit.")
    correlations = np.array([pearson_r(means[:, i], logits) for i in range(concepts.k)])
    selected = select_by_correlation(correlations, threshold, top)
    logger.info(
        "selected concepts %s with r %s", selected, np.round(correlations[selected], 3)
    )
    return dataclasses.replace(concepts, correlations=correlations, selected=selected)


def highlight(image: np.ndarray, concept_map: np.ndarray) -> Tuple[np.ndarray, bool]:
    """
    Dim the pixels outside the strongest 30% of an upsampled concept map.

    :returns: The overlay and whether the map was uniform.
    """
    height, width = image.shape[:2]
    resized = Image.fromarray(concept_map.astype(np.float32)).resize(
        (width, height), Image.Resampling.BILINEAR
    )
    upsampled = np.asarray(resized, dtype=np.float64)
    uniform = bool(np.ptp(concept_map) == 0)
    mask = upsampled >= np.percentile(upsampled, HIGHLIGHT_PERCENTILE)
    if uniform:
        mask[...] = True
    return np.where(mask[..., None], image, image * DIM_FACTOR), uniform


def compose_concept_grid(
    selected: ConceptSet,
    images: np.ndarray,
    sample_ids: Sequence[str] = None,
    per_row: int = GRID_COLUMNS,
) -> Tuple[GridLayout, Image.Image]:
    """
    Concept explanation: two rows per selected concept.

    The first row shows the images with the most positive mean activation, the
    second those with the most negative one; each is overlaid with the concept's map.

    :param selected: Concepts after ``select_concepts``.
    :param images: The pool the concepts were computed on.
    :param sample_ids: Ids of the pool images.
    :raises EmptyExplanationError: If no concept was selected.
    """
    if not selected.selected:
        raise EmptyExplanationError("No concept correlates with the logit.")
    images = np.asarray(images, dtype=np.float64)
    if len(images) < per_row:
        raise ArgumentError(f"The concept pool needs at least {per_row} images.")
    if sample_ids is None:
        sample_ids = [str(i) for i in range(len(images))]
    means = selected.mean_activations()
    rows, row_labels, cells, degenerate = [], [], [], []
    for concept in selected.selected:
        ranked = np.argsort(means[:, concept], kind="stable")
        for sign, chosen in ((1.0, ranked[::-1][:per_row]), (-1.0, ranked[:per_row])):
            r = len(rows)
            row = []
            for c, i in enumerate(chosen):
                concept_map = sign * selected.maps[i, ..., concept]
                overlay, uniform = highlight(images[i], concept_map)
                if uniform:
                    degenerate.append({"row": r, "col": c, "concept": concept})
                row.append(overlay)
                cells.append(GridCell(r, c, sample_ids[i]))
            rows.append(row)
            row_labels.append(f"concept {concept} {'+' if sign > 0 else '-'}")
    if degenerate:
        logger.warning("%d concept maps are uniform", len(degenerate))
    column_labels = [str(c + 1) for c in range(per_row)]
    image = compose_png(rows, column_labels, row_labels)
    layout = GridLayout(
        technique="concepts",
        rows=len(rows),
        cols=per_row,
        column_labels=column_labels,
        row_labels=row_labels,
        cells=cells,
        image_size=image.size,
        metadata={
            "concepts": list(selected.selected),
            "correlations": [
                float(selected.correlations[i]) for i in selected.selected
            ],
            "degenerate_maps": degenerate,
        },
    )
    return layout, image
