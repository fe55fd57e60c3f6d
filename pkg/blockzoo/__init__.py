"""
blockzoo: synthetic block animals for evaluating explanation methods.

This package renders a biased synthetic image dataset of two block animal classes, \
trains small classifiers and an invertible model on it, measures the ground truth \
importance of every generative attribute, composes explanation grids and analyzes \
user study responses.
"""

try:
    from ._version import __version__, version
    from ._version import __version_tuple__, version_tuple
except ImportError:
    __version__ = version = "unknown version"
    __version_tuple__ = version_tuple = (0, 0, 0)

from .crc import CRC
from .dataset import DatasetGenerator, DatasetManifest, generate_dataset, load_manifest
from .flow import FlowModel, make_counterfactual, train_flow
from .nnet import AttributeProbe, ConvClassifier, train_classifier, train_probe
from .render import RenderConfig, SceneRenderer, render_scene
from .scene import SamplerConfig, SceneParameters, SceneSampler
