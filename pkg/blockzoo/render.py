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
Deterministic CPU renderer for block animals.

The animal is the union of eight rounded boxes: four spine blocks along the body's
x-axis, a fixed leg pair under the front block and a mobile leg pair whose offset
along the spine is set by the legs' position. Images are sphere traced through a
signed distance field, one ray per pixel, and shaded with a single directional
light.
"""

# 1. Standard library imports:
import dataclasses
import functools
import logging
import math
import operator
from concurrent.futures import ThreadPoolExecutor
from io import BytesIO
from pathlib import Path
from typing import Any, Dict, Tuple, Union

# 2. Known third party imports:
import numpy as np
from PIL import Image

# 3. Local imports in the relative form:
from .config import reject_unknown
from .errors import ConfigurationError, RenderQualityError
from .scene import SceneParameters, validate_scene

logger = logging.getLogger(__name__)

HALF_EXTENT = 0.5
SPINE_SPACING = 1.05
LEG_DROP = 1.05
LEG_SPREAD = 0.525
POSITION_SCALE = 2.0
MAX_UNRESOLVED_FRACTION = 0.01

# Spine blocks 1-4 from front to back; the back half bends.
SPINE_X = tuple((1.5 - i) * SPINE_SPACING for i in range(4))
LAST_SPINE_X = SPINE_X[-1]

RED = (217, 61, 74)
BLUE = (64, 84, 217)


def _rotation_x(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _rotation_y(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rotation_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def mobile_leg_offset(legs_position: float) -> float:
    """
    Position of the mobile leg pair along the spine axis.

    ``0.5`` puts the pair under the last spine block, ``0`` one block inwards and
    ``1`` one block outwards.
    """
    return LAST_SPINE_X - (legs_position - 0.5) * 2.0 * SPINE_SPACING


def rounded_box_sdf(
    points: np.ndarray, half_extent: float, radius: float
) -> np.ndarray:
    """
    Signed distance to an axis aligned box with rounded edges centered at the origin.

    :param points: Array of shape ``(..., 3)``.
    :param half_extent: Half of the box side length.
    :param radius: Rounding radius in ``[0, half_extent]``; ``half_extent`` gives a \
    sphere.
    :returns: Distances of shape ``(...)``.
    """
    q = np.abs(points) - (half_extent - radius)
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
    inside = np.minimum(q.max(axis=-1), 0.0)
    return outside + inside - radius


class AnimalGeometry:
    """
    The eight primitives of one animal, posed by its scene parameters.

    :param params: Scene parameters; only the geometric attributes are read.
    """

    def __init__(self, params: SceneParameters):
        self.rotation = (
            _rotation_y(params.rotation_yaw)
            @ _rotation_z(params.rotation_pitch)
            @ _rotation_x(params.rotation_roll)
        )
        self.translation = np.array(
            [
                POSITION_SCALE * (params.position_x + 0.4),
                POSITION_SCALE * (params.position_y + 0.4),
                0.0,
            ]
        )
        self.bend = _rotation_z(params.bending)
        self.radius = float(np.clip(params.shape, 0.0, 1.0)) * HALF_EXTENT
        mobile_x = mobile_leg_offset(params.legs_position)
        centers = [(x, 0.0, 0.0) for x in SPINE_X]
        centers += [(SPINE_X[0], -LEG_DROP, -LEG_SPREAD)]
        centers += [(SPINE_X[0], -LEG_DROP, LEG_SPREAD)]
        centers += [(mobile_x, -LEG_DROP, -LEG_SPREAD)]
        centers += [(mobile_x, -LEG_DROP, LEG_SPREAD)]
        self.centers = np.array(centers)
        # Back spine blocks and the mobile legs hang off the bending joint.
        self.bent = np.array([False, False, True, True, False, False, True, True])

    def to_body(self, points: np.ndarray) -> np.ndarray:
        """Map world points of shape ``(N, 3)`` into the unbent body frame."""
        return (points - self.translation) @ self.rotation

    def distances(self, points: np.ndarray) -> np.ndarray:
        """
        Signed distance to each primitive.

        :param points: World points of shape ``(N, 3)``.
        :returns: Array of shape ``(N, 8)``.
        """
        body = self.to_body(points)
        bent = body @ self.bend
        columns = []
        for center, is_bent in zip(self.centers, self.bent):
            local = (bent if is_bent else body) - center
            columns.append(rounded_box_sdf(local, HALF_EXTENT, self.radius))
        return np.stack(columns, axis=-1)

    def sdf(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        Signed distance to the animal and the nearest block id (``1-8``).

        :param points: World points of shape ``(N, 3)``.
        """
        d = self.distances(points)
        nearest = d.argmin(axis=-1)
        return np.take_along_axis(d, nearest[:, None], axis=-1)[:, 0], nearest + 1


def animal_sdf(point, params: SceneParameters) -> Tuple[float, int]:
    """
    Signed distance from a point to the animal.

    :param point: Finite 3-vector in world coordinates.
    :param params: Scene parameters posing the animal.
    :returns: ``(distance, block_id)`` with spine ids ``1-4`` and leg ids ``5-8``; \
    ``7`` and ``8`` are the mobile pair.
    """
    distance, block = AnimalGeometry(params).sdf(np.asarray(point, float).reshape(1, 3))
    return float(distance[0]), int(block[0])


def _color_map(value: float, red, blue) -> np.ndarray:
    value = float(np.clip(value, 0.0, 1.0))
    return (1.0 - value) * np.asarray(red, float) + value * np.asarray(blue, float)


def _check_vector(name: str, v) -> Tuple[float, float, float]:
    if v is None:
        raise ValueError(f"{name} cannot be empty.")
    if not isinstance(v, (tuple, list)) or len(v) != 3:
        raise TypeError(f"{name} must be a sequence of 3 numbers. {type(v)} was given.")
    return tuple(float(x) for x in v)


def _check_rgb(name: str, v) -> Tuple[int, int, int]:
    if v is None:
        raise ValueError(f"{name} cannot be empty.")
    if not isinstance(v, (tuple, list)) or len(v) != 3:
        raise TypeError(f"{name} must be an RGB triple. {type(v)} was given.")
    if any(not isinstance(c, int) or not 0 <= c <= 255 for c in v):
        raise ValueError(f"{name} channels must be integers within 0 to 255.")
    return tuple(v)


class RenderConfig:
    """
    Camera, light and quality settings of the renderer.

    :param width: Image width in pixels (``>= 16``), defaults to ``128``
    :param height: Image height in pixels (``>= 16``), defaults to ``128``
    :param camera_position: Camera position, defaults to ``(0, 3, 8.5)``
    :param camera_target: Point the camera looks at, defaults to ``(0, -0.3, 0)``
    :param fov_degrees: Vertical field of view, defaults to ``45``
    :param light: Direction towards the light, defaults to ``(-0.4, 0.8, 0.45)``
    :param ambient: Ambient coefficient (``0-1``), defaults to ``0.35``
    :param max_steps: Ray march budget per pixel (``>= 32``), defaults to ``160``
    :param epsilon: Hit distance (``> 0``), defaults to ``1e-3``
    :param red: RGB of the red extreme, defaults to ``(217, 61, 74)``
    :param blue: RGB of the blue extreme, defaults to ``(64, 84, 217)``
    """

    def __init__(
        self,
        width: int = None,
        height: int = None,
        camera_position: Tuple[float, float, float] = None,
        camera_target: Tuple[float, float, float] = None,
        fov_degrees: float = None,
        light: Tuple[float, float, float] = None,
        ambient: float = None,
        max_steps: int = None,
        epsilon: float = None,
        red: Tuple[int, int, int] = None,
        blue: Tuple[int, int, int] = None,
    ):
        if width is None:
            width = 128
        self.width = width
        if height is None:
            height = 128
        self.height = height
        if camera_position is None:
            camera_position = (0.0, 3.0, 8.5)
        self.camera_position = camera_position
        if camera_target is None:
            camera_target = (0.0, -0.3, 0.0)
        self.camera_target = camera_target
        if fov_degrees is None:
            fov_degrees = 45.0
        self.fov_degrees = fov_degrees
        if light is None:
            light = (-0.4, 0.8, 0.45)
        self.light = light
        if ambient is None:
            ambient = 0.35
        self.ambient = ambient
        if max_steps is None:
            max_steps = 160
        self.max_steps = max_steps
        if epsilon is None:
            epsilon = 1e-3
        self.epsilon = epsilon
        if red is None:
            red = RED
        self.red = red
        if blue is None:
            blue = BLUE
        self.blue = blue

    width = property(operator.attrgetter("_width"))

    @width.setter
    def width(self, w):
        if w is None:
            raise ValueError("Width cannot be empty.")
        if not isinstance(w, int):
            raise TypeError(f"Width must be an integer. {type(w)} was given.")
        if w < 16:
            raise ConfigurationError(f"Width must be at least 16. {w} was given.")
        self._width = w

    height = property(operator.attrgetter("_height"))

    @height.setter
    def height(self, h):
        if h is None:
            raise ValueError("Height cannot be empty.")
        if not isinstance(h, int):
            raise TypeError(f"Height must be an integer. {type(h)} was given.")
        if h < 16:
            raise ConfigurationError(f"Height must be at least 16. {h} was given.")
        self._height = h

    camera_position = property(operator.attrgetter("_camera_position"))

    @camera_position.setter
    def camera_position(self, p):
        self._camera_position = _check_vector("Camera position", p)

    camera_target = property(operator.attrgetter("_camera_target"))

    @camera_target.setter
    def camera_target(self, t):
        self._camera_target = _check_vector("Camera target", t)

    fov_degrees = property(operator.attrgetter("_fov_degrees"))

    @fov_degrees.setter
    def fov_degrees(self, f):
        if f is None:
            raise ValueError("Field of view cannot be empty.")
        if not isinstance(f, (int, float)):
            raise TypeError(f"Field of view must be a number. {type(f)} was given.")
        if not 0 < f < 180:
            raise ConfigurationError(
                f"Field of view must be within (0, 180). {f} was given."
            )
        self._fov_degrees = float(f)

    light = property(operator.attrgetter("_light"))

    @light.setter
    def light(self, v):
        v = _check_vector("Light", v)
        if not any(v):
            raise ConfigurationError("Light direction cannot be the zero vector.")
        self._light = v

    ambient = property(operator.attrgetter("_ambient"))

    @ambient.setter
    def ambient(self, a):
        if a is None:
            raise ValueError("Ambient cannot be empty.")
        if not isinstance(a, (int, float)):
            raise TypeError(f"Ambient must be a number. {type(a)} was given.")
        if not 0 <= a <= 1:
            raise ConfigurationError(f"Ambient must be within 0 to 1. {a} was given.")
        self._ambient = float(a)

    max_steps = property(operator.attrgetter("_max_steps"))

    @max_steps.setter
    def max_steps(self, s):
        if s is None:
            raise ValueError("Max steps cannot be empty.")
        if not isinstance(s, int):
            raise TypeError(f"Max steps must be an integer. {type(s)} was given.")
        if s < 32:
            raise ConfigurationError(f"Max steps must be at least 32. {s} was given.")
        self._max_steps = s

    epsilon = property(operator.attrgetter("_epsilon"))

    @epsilon.setter
    def epsilon(self, e):
        if e is None:
            raise ValueError("Epsilon cannot be empty.")
        if not isinstance(e, (int, float)):
            raise TypeError(f"Epsilon must be a number. {type(e)} was given.")
        if not e > 0:
            raise ConfigurationError(f"Epsilon must be positive. {e} was given.")
        self._epsilon = float(e)

    red = property(operator.attrgetter("_red"))

    @red.setter
    def red(self, c):
        self._red = _check_rgb("Red", c)

    blue = property(operator.attrgetter("_blue"))

    @blue.setter
    def blue(self, c):
        self._blue = _check_rgb("Blue", c)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "width": self._width,
            "height": self._height,
            "camera_position": list(self._camera_position),
            "camera_target": list(self._camera_target),
            "fov_degrees": self._fov_degrees,
            "light": list(self._light),
            "ambient": self._ambient,
            "max_steps": self._max_steps,
            "epsilon": self._epsilon,
            "red": list(self._red),
            "blue": list(self._blue),
        }

    @classmethod
    def from_dict(cls, table: Dict[str, Any]) -> "RenderConfig":
        """Build a config from the ``[render]`` TOML table."""
        reject_unknown(table, cls().to_dict(), "[render]")
        return cls(**table)

    def __eq__(self, other):
        return isinstance(other, RenderConfig) and self.to_dict() == other.to_dict()


@dataclasses.dataclass
class RenderedSample:
    """An RGB image, its block id mask and the parameters it was rendered from."""

    image: np.ndarray
    mask: np.ndarray
    params: SceneParameters
    unresolved_fraction: float = 0.0

    def image_png(self) -> bytes:
        """Image as 8-bit RGB PNG bytes."""
        buffer = BytesIO()
        Image.fromarray(self.image).save(buffer, format="PNG")
        return buffer.getvalue()

    def mask_png(self) -> bytes:
        """Mask as 8-bit grayscale PNG bytes with block ids as pixel values."""
        buffer = BytesIO()
        Image.fromarray(self.mask).save(buffer, format="PNG")
        return buffer.getvalue()

    def save(
        self, image_dir: Union[str, Path], mask_dir: Union[str, Path] = None
    ) -> Tuple[Path, Path]:
        """
        Write ``{sample_id}.png`` and ``{sample_id}_mask.png``.

        :param image_dir: Directory of the image.
        :param mask_dir: Directory of the mask, defaults to ``image_dir``.
        :returns: Paths of image and mask.
        """
        image_path = Path(image_dir) / f"{self.params.sample_id}.png"
        mask_path = Path(mask_dir or image_dir) / f"{self.params.sample_id}_mask.png"
        image_path.write_bytes(self.image_png())
        mask_path.write_bytes(self.mask_png())
        return image_path, mask_path


class SceneRenderer:
    """
    Sphere traces scenes with a fixed camera.

    :param config: Render configuration, defaults to ``RenderConfig()``.
    :param workers: Number of threads rendering row blocks, defaults to ``1``
    """

    def __init__(self, config: RenderConfig = None, workers: int = None):
        if config is None:
            config = RenderConfig()
        self.config = config
        if workers is None:
            workers = 1
        self.workers = workers

    config = property(operator.attrgetter("_config"))

    @config.setter
    def config(self, c):
        if c is None:
            raise ValueError("Render config cannot be empty.")
        if not isinstance(c, RenderConfig):
            raise TypeError(f"Config must be a RenderConfig. {type(c)} was given.")
        self._config = c

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

    def _camera_rays(self, rows: range) -> Tuple[np.ndarray, np.ndarray]:
        c = self._config
        origin = np.asarray(c.camera_position)
        forward = np.asarray(c.camera_target) - origin
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, [0.0, 1.0, 0.0])
        right /= np.linalg.norm(right)
        up = np.cross(right, forward)
        tan_half = math.tan(math.radians(c.fov_degrees) / 2.0)
        aspect = c.width / c.height
        js, is_ = np.meshgrid(
            np.asarray(rows, float), np.arange(c.width, dtype=float), indexing="ij"
        )
        u = (2.0 * (is_ + 0.5) / c.width - 1.0) * tan_half * aspect
        v = (1.0 - 2.0 * (js + 0.5) / c.height) * tan_half
        directions = forward + u[..., None] * right + v[..., None] * up
        directions /= np.linalg.norm(directions, axis=-1, keepdims=True)
        return origin, directions.reshape(-1, 3)

    def _normals(self, geometry: AnimalGeometry, points: np.ndarray) -> np.ndarray:
        h = 1e-4
        gradient = np.empty_like(points)
        for axis in range(3):
            offset = np.zeros(3)
            offset[axis] = h
            forward, _ = geometry.sdf(points + offset)
            backward, _ = geometry.sdf(points - offset)
            gradient[:, axis] = forward - backward
        norm = np.linalg.norm(gradient, axis=-1, keepdims=True)
        return gradient / np.where(norm > 0, norm, 1.0)

    def _trace(
        self, geometry: AnimalGeometry, rows: range
    ) -> Tuple[np.ndarray, np.ndarray, np.ndarray, int]:
        c = self._config
        origin, directions = self._camera_rays(rows)
        n = len(directions)
        t = np.full(n, 0.1)
        far = 4.0 * float(np.linalg.norm(origin)) + 10.0
        hit = np.zeros(n, dtype=bool)
        active = np.ones(n, dtype=bool)
        for _ in range(c.max_steps):
            index = np.flatnonzero(active)
            if index.size == 0:
                break
            points = origin + t[index, None] * directions[index]
            distance, _ = geometry.sdf(points)
            reached = distance < c.epsilon
            hit[index[reached]] = True
            t[index] += np.where(reached, 0.0, distance)
            escaped = t[index] > far
            active[index[reached | escaped]] = False
        unresolved = int(active.sum())
        points = origin + t[:, None] * directions
        block = np.zeros(n, dtype=np.uint8)
        normals = np.zeros((n, 3))
        if hit.any():
            _, ids = geometry.sdf(points[hit])
            block[hit] = ids
            normals[hit] = self._normals(geometry, points[hit])
        return hit, block, normals, unresolved

    def render(self, params: SceneParameters) -> RenderedSample:
        """
        Render one scene.

        :param params: Scene parameters within their ranges.
        :returns: The rendered sample; byte-identical for identical inputs.
        :raises ConfigurationError: If an attribute is out of range.
        :raises RenderQualityError: If more than 1% of rays exhaust the march budget.
        """
        report = validate_scene(params)
        if report.range_violations:
            raise ConfigurationError(
                "Cannot render out of range parameters: "
                + "; ".join(report.range_violations)
            )
        c = self._config
        geometry = AnimalGeometry(params)
        step = max(1, math.ceil(c.height / self._workers))
        blocks = [range(r, min(r + step, c.height)) for r in range(0, c.height, step)]
        if self._workers == 1:
            results = [self._trace(geometry, rows) for rows in blocks]
        else:
            with ThreadPoolExecutor(max_workers=self._workers) as pool:
                trace = functools.partial(self._trace, geometry)
                results = list(pool.map(trace, blocks))
        hit = np.concatenate([r[0] for r in results])
        block = np.concatenate([r[1] for r in results])
        normals = np.concatenate([r[2] for r in results])
        unresolved = sum(r[3] for r in results)

        unresolved_fraction = unresolved / float(c.width * c.height)
        if unresolved_fraction > MAX_UNRESOLVED_FRACTION:
            raise RenderQualityError(
                f"{unresolved_fraction:.2%} of rays exhausted {c.max_steps} march steps"
                f" rendering {params.sample_id or 'scene'}."
            )

        light = np.asarray(c.light) / np.linalg.norm(c.light)
        lambert = np.maximum(normals @ light, 0.0)
        shade = c.ambient + (1.0 - c.ambient) * lambert
        animal_rgb = _color_map(params.color, c.red, c.blue)
        background_rgb = _color_map(params.background, c.red, c.blue)
        rgb = np.where(hit[:, None], shade[:, None] * animal_rgb, background_rgb)
        image = np.clip(np.rint(rgb), 0, 255).astype(np.uint8)
        return RenderedSample(
            image=image.reshape(c.height, c.width, 3),
            mask=block.reshape(c.height, c.width),
            params=params,
            unresolved_fraction=unresolved_fraction,
        )


def render_scene(
    params: SceneParameters, config: RenderConfig = None, workers: int = None
) -> RenderedSample:
    """
    Render one scene with a fresh renderer.

    :param params: Scene parameters.
    :param config: Render configuration, defaults to ``RenderConfig()``.
    :param workers: Threads rendering row blocks, defaults to ``1``.
    """
    return SceneRenderer(config, workers=workers).render(params)
