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
"""Command line entry point: ``blockzoo <command> [options]``."""

# 1. Standard library imports:
import argparse
import json
import logging
import platform
import sys
import time
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

# 2. Known third party imports:
import numpy as np
from scipy import stats as scipy_stats

# 3. Local imports in the relative form:
from . import __version__
from .config import (
    CONFIG_TABLES,
    PRESETS,
    config_hash,
    default_output_root,
    get_preset,
    load_run_config,
    reject_unknown,
)
from .dataset import (
    generate_dataset,
    load_manifest,
    make_intervention_pairs,
    manifest_path,
)
from .errors import BlockzooError, ConfigurationError
from .explain import (
    BIN_MODES,
    GRID_ROWS,
    compose_baseline_grid,
    compose_concept_grid,
    compose_counterfactual_grid,
    export_handout,
    factorize_activations,
    save_grid,
    select_concepts,
)
from .flow import (
    FlowHyper,
    FlowModel,
    flow_forward,
    flow_inverse,
    make_counterfactual,
    train_flow,
)
from .importance import ModelScorer, analyze_importance
from .nnet import (
    AttributeProbe,
    ClassifierHyper,
    ConvClassifier,
    ProbeHyper,
    evaluate_classifier,
    gradient_check,
    load_checkpoint,
    train_classifier,
    train_probe,
)
from .render import RenderConfig
from .scene import ATTRIBUTES, SamplerConfig, SceneSampler
from .stats import (
    accuracy_report,
    compare_conditions,
    load_responses,
    paired_attribute_tests,
    report_to_text,
)

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
RUN_KEYS = ("seed", "workers", "dataset_root", "output_root")
MODEL_CLASSES = {
    ConvClassifier.architecture: ConvClassifier,
    AttributeProbe.architecture: AttributeProbe,
    FlowModel.architecture: FlowModel,
}


class RunContext:
    """
    Merged configuration of one invocation: preset, TOML tables and flags.

    :param args: Parsed command line.
    """

    def __init__(self, args: argparse.Namespace):
        self.args = args
        tables = load_run_config(args.config) if args.config else {}
        self.tables = {name: dict(tables.get(name, {})) for name in CONFIG_TABLES}
        reject_unknown(self.tables["run"], RUN_KEYS, "[run]")
        self.preset = get_preset(args.preset)
        run = self.tables["run"]
        self.seed = args.seed if args.seed is not None else run.get("seed", 0)
        self.workers = run.get("workers", 1) if args.workers is None else args.workers
        output_root = args.out_root or run.get("output_root") or default_output_root()
        self.output_root = Path(output_root)
        dataset_root = getattr(args, "root", None) or run.get("dataset_root")
        if dataset_root:
            self.dataset_root = Path(dataset_root)
        else:
            self.dataset_root = self.output_root / "dataset"
        self.outputs: List[str] = []
        self.inputs: List[str] = []
        self.started = time.time()

    def sampler_config(self) -> SamplerConfig:
        return SamplerConfig.from_dict(self.tables["sampler"])

    def render_config(self) -> RenderConfig:
        render = dict(self.preset["render"], **self.tables["render"])
        return RenderConfig.from_dict(render)

    def _hyper(self, table: str) -> Dict[str, Any]:
        return dict({"seed": self.seed}, **self.tables[table])

    def classifier_hyper(self) -> ClassifierHyper:
        return ClassifierHyper.from_dict(self._hyper("classifier"))

    def probe_hyper(self) -> ProbeHyper:
        return ProbeHyper.from_dict(self._hyper("probe"))

    def flow_hyper(self) -> FlowHyper:
        return FlowHyper.from_dict(self._hyper("flow"))

    def output(self, path, default: str) -> Path:
        path = Path(path) if path else self.output_root / default
        path.parent.mkdir(parents=True, exist_ok=True)
        self.outputs.append(str(path))
        return path

    def manifest(self, split: str):
        path = manifest_path(self.dataset_root, split)
        self.inputs.append(str(path))
        return load_manifest(path)

    def merged(self) -> Dict[str, Any]:
        return {
            "preset": self.args.preset,
            "seed": self.seed,
            "sampler": self.sampler_config().to_dict(),
            "render": self.render_config().to_dict(),
            "classifier": self.classifier_hyper().to_dict(),
            "probe": self.probe_hyper().to_dict(),
            "flow": self.flow_hyper().to_dict(),
        }

    def write_run_manifest(self, status: int) -> Path:
        """Record inputs, config hash, seed, versions and wall time of the run."""
        merged = self.merged()
        document = {
            "command": self.args.command,
            "argv": self.args.argv,
            "status": status,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "config": merged,
            "config_hash": config_hash(merged),
            "seed": self.seed,
            "versions": {
                "blockzoo": __version__,
                "numpy": np.__version__,
                "python": platform.python_version(),
            },
            "wall_time_s": round(time.time() - self.started, 3),
        }
        self.output_root.mkdir(parents=True, exist_ok=True)
        path = self.output_root / f"run-{self.args.command}.json"
        path.write_text(json.dumps(document, indent=2), encoding="utf-8")
        return path


def load_model(path: str):
    """Load a checkpoint with the model class named in its descriptor."""
    descriptor, _ = load_checkpoint(path)
    architecture = descriptor.get("architecture")
    if architecture not in MODEL_CLASSES:
        raise ConfigurationError(
            f'Unknown model architecture "{architecture}" in {path}.'
        )
    return MODEL_CLASSES[architecture].load(path)


# Commands #############################################################################


def cmd_generate(ctx: RunContext) -> int:
    args = ctx.args
    sampler = SamplerConfig.unbiased() if args.unbiased else ctx.sampler_config()
    n = args.n if args.n is not None else ctx.preset["splits"].get(args.split)
    if n is None:
        raise ConfigurationError(f'No preset size for split "{args.split}"; pass -n.')
    manifest = generate_dataset(
        ctx.dataset_root,
        n,
        args.split,
        sampler,
        ctx.render_config(),
        ctx.seed,
        ctx.workers,
    )
    ctx.outputs.append(str(manifest_path(ctx.dataset_root, args.split)))
    print(f"{args.split}: {len(manifest)} samples {manifest.class_counts}")
    return 0


def cmd_train_classifier(ctx: RunContext) -> int:
    args = ctx.args
    model, log = train_classifier(ctx.manifest(args.split), ctx.classifier_hyper())
    path = ctx.output(args.out, "classifier.ckpt")
    model.save(path)
    log.write_csv(ctx.output(None, path.stem + "-log.csv"))
    if args.test_split:
        accuracy = evaluate_classifier(model, ctx.manifest(args.test_split))
        print(f"test accuracy {accuracy:.4f}")
    return 0


def cmd_train_flow(ctx: RunContext) -> int:
    args = ctx.args
    validation = ctx.manifest(args.validation_split) if args.validation_split else None
    model, log = train_flow(ctx.manifest(args.split), ctx.flow_hyper(), validation)
    path = ctx.output(args.out, "flow.ckpt")
    model.save(path)
    log.write_csv(ctx.output(None, path.stem + "-log.csv"))
    print(f"head accuracy {log.last('accuracy'):.4f}")
    return 0


def cmd_train_probe(ctx: RunContext) -> int:
    args = ctx.args
    test = ctx.manifest(args.test_split) if args.test_split else None
    model, log, errors = train_probe(ctx.manifest(args.split), ctx.probe_hyper(), test)
    path = ctx.output(args.out, "probe.ckpt")
    model.save(path)
    log.write_csv(ctx.output(None, path.stem + "-log.csv"))
    ctx.output(None, path.stem + "-mse.json").write_text(json.dumps(errors, indent=2))
    for name, value in errors.items():
        print(f"{name:16s} {value:.5f}")
    return 0


def cmd_importance(ctx: RunContext) -> int:
    args = ctx.args
    model = load_model(args.model)
    ctx.inputs.append(args.model)
    manifest = ctx.manifest(args.split)
    m = min(args.pairs or ctx.preset["pairs"], len(manifest))
    rng = np.random.default_rng(ctx.seed)
    pairs = {
        attribute: make_intervention_pairs(
            manifest,
            attribute,
            m,
            rng=np.random.default_rng(rng.integers(2**32)),
            workers=ctx.workers,
        )
        for attribute in args.attributes
    }
    probe, trajectories = None, None
    if args.probe and isinstance(model, FlowModel):
        probe = load_model(args.probe)
        ctx.inputs.append(args.probe)
        chosen = rng.permutation(len(manifest))[: min(args.trajectories, len(manifest))]
        images = manifest.image_array(chosen)
        trajectories = [
            make_counterfactual(
                model,
                image,
                steps=args.steps,
                sample_id=manifest.records[i].params.sample_id,
            )
            for image, i in zip(images, chosen)
        ]
    report = analyze_importance(ModelScorer(model), pairs, probe, trajectories)
    path = ctx.output(args.out, "importance.json")
    path.write_text(report.to_json(), encoding="utf-8")
    table = ctx.output(None, path.stem + ".txt")
    table.write_text(report.to_table() + "\n", encoding="utf-8")
    print(report.to_table())
    return 0


def cmd_explain(ctx: RunContext) -> int:
    args = ctx.args
    rng = np.random.default_rng(ctx.seed)
    if args.technique == "handout":
        ctx.inputs.extend(args.grids)
        path = ctx.output(args.out, "handout.pdf")
        path.write_bytes(export_handout(args.grids))
        return 0
    model = load_model(args.model)
    ctx.inputs.append(args.model)
    manifest = ctx.manifest(args.split)
    if args.technique == "baseline":
        layout, image = compose_baseline_grid(model, manifest, rng, args.bins)
    elif args.technique == "counterfactual":
        if not isinstance(model, FlowModel):
            raise ConfigurationError("Counterfactual grids need a flow checkpoint.")
        chosen = np.sort(rng.choice(len(manifest), size=GRID_ROWS, replace=False))
        ids = [manifest.records[i].params.sample_id for i in chosen]
        layout, image, trajectories = compose_counterfactual_grid(
            model, manifest.image_array(chosen), ids, mode=args.bins
        )
    else:
        if not isinstance(model, ConvClassifier):
            raise ConfigurationError("Concept grids need a classifier checkpoint.")
        images = manifest.image_array()
        concepts = factorize_activations(
            model.activations(images), k=args.k, seed=ctx.seed
        )
        logits = model.predict_logits(images)
        selected = select_concepts(concepts, logits, args.threshold, args.top)
        ids = [r.params.sample_id for r in manifest.records]
        layout, image = compose_concept_grid(selected, images, ids)
    layout.metadata["seed"] = ctx.seed
    _, sidecar = save_grid(layout, image, ctx.output(args.out, f"{args.technique}.png"))
    ctx.outputs.append(str(sidecar))
    return 0


def cmd_analyze_study(ctx: RunContext) -> int:
    args = ctx.args
    ctx.inputs.append(args.responses)
    responses = load_responses(args.responses)
    report = accuracy_report(responses)
    report.to_csv(ctx.output(args.out, "study-report.csv"))
    print(report_to_text(report))
    paired = paired_attribute_tests(responses)
    tests = {"paired": {k: v.to_dict() for k, v in paired.items()}}
    if len(set(responses.frame["condition"])) >= 2:
        comparison = compare_conditions(responses)
        tests["normality"] = {
            k: (v.to_dict() if v else None) for k, v in comparison["normality"].items()
        }
        tests["kruskal"] = comparison["kruskal"].to_dict()
        tests["pairwise"] = {k: v.to_dict() for k, v in comparison["pairwise"].items()}
    ctx.output(None, "study-tests.json").write_text(json.dumps(tests, indent=2))
    return 0


# Verification #########################################################################


def _check_gradients(quick: bool) -> Tuple[bool, str]:
    rng = np.random.default_rng(0)
    images = rng.random((2, 16, 16, 3))
    classifier = ConvClassifier((16, 16, 3), seed=0)
    labels = np.array([0.0, 1.0])
    errors = [gradient_check(classifier, (images, labels), 1e-4, step=1e-5)]
    probe = AttributeProbe((16, 16, 3), seed=1)
    targets = rng.uniform(0.2, 0.8, (2, 11))
    errors.append(gradient_check(probe, (images, targets), 1e-4, step=1e-5))
    flow = FlowModel(8, blocks=2, prior_blocks=1, hidden=8, seed=0)
    for p in flow.parameters():
        p += rng.normal(0.0, 0.05, p.shape)
    x = rng.normal(size=(4, 8))
    y = np.array([0, 1, 0, 1])
    errors.append(gradient_check(flow, (x, y), 1e-4, fraction=0.2, step=1e-5))
    worst = max(errors)
    return worst < 1e-4, f"max relative error {worst:.2e}"


def _check_flow_round_trip(quick: bool) -> Tuple[bool, str]:
    model = FlowModel(768, blocks=2 if quick else 8, prior_blocks=1, hidden=32, seed=0)
    rng = np.random.default_rng(1)
    for p in model.parameters():
        p += rng.normal(0.0, 0.01, p.shape)
    x = rng.uniform(-0.5, 0.5, (100, 768))
    z, _ = flow_forward(model, x)
    error = float(np.abs(flow_inverse(model, z) - x).max())
    return error < 1e-4, f"round trip error {error:.2e}"


def _check_sampler(quick: bool) -> Tuple[bool, str]:
    n = 1000 if quick else 5000
    scenes = SceneSampler(SamplerConfig(), seed=0).sample_many(n, "verify")
    legs = np.array([s.legs_position for s in scenes])
    shape = np.array([s.shape for s in scenes])
    color = np.array([s.color for s in scenes])
    labels = np.array([s.label for s in scenes])
    band = (legs >= 0.45) & (legs <= 0.55)
    overlap = (legs >= 0.48) & (legs <= 0.52)
    outside = np.abs(legs - 0.5) > 0.15
    p_shape = scipy_stats.kstest(shape[band], "uniform").pvalue
    p_color = scipy_stats.kstest(color[outside], "uniform").pvalue
    ratio = float(labels[overlap].mean()) if overlap.any() else 0.5
    tolerance = 0.15 if quick else 0.05
    passed = p_shape > 0.01 and p_color > 0.01 and abs(ratio - 0.5) <= tolerance
    detail = f"shape KS p {p_shape:.3f}, color KS p {p_color:.3f}"
    return passed, f"{detail}, overlap ratio {ratio:.3f}"


VERIFY_CHECKS: Dict[str, Callable[[bool], Tuple[bool, str]]] = {
    "gradients": _check_gradients,
    "flow round trip": _check_flow_round_trip,
    "sampler": _check_sampler,
}


def cmd_verify(ctx: RunContext) -> int:
    failures = 0
    for name, check in VERIFY_CHECKS.items():
        passed, detail = check(ctx.args.quick)
        failures += not passed
        print(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
    return 1 if failures else 0


# Parser ###############################################################################


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="blockzoo",
        description="Block animal dataset, models, explanations and study statistics.",
    )
    parser.add_argument(
        "--version", action="version", version=f"%(prog)s {__version__}"
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "-v", "--verbose", action="count", default=0, help="-v info, -vv debug"
    )
    common.add_argument("--config", help="run configuration TOML file")
    common.add_argument("--preset", choices=sorted(PRESETS), default="desk")
    common.add_argument("--seed", type=int, help="global seed")
    common.add_argument("--workers", type=int, help="worker threads")
    common.add_argument(
        "--out-root", help="output root, defaults to $BLOCKZOO_OUTPUT_ROOT"
    )
    common.add_argument("--root", help="dataset root, defaults to <out-root>/dataset")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="render a dataset split")
    p.add_argument("--split", default="train")
    p.add_argument("-n", type=int, help="sample count, defaults to the preset size")
    p.add_argument("--unbiased", action="store_true", help="disable both biases")
    p.set_defaults(handler=cmd_generate)

    p = sub.add_parser("train-classifier", parents=[common], help="train the convnet")
    p.add_argument("--split", default="train")
    p.add_argument("--test-split", default="test")
    p.add_argument("--out", help="checkpoint path")
    p.set_defaults(handler=cmd_train_classifier)

    p = sub.add_parser("train-flow", parents=[common], help="train the flow model")
    p.add_argument("--split", default="train")
    p.add_argument("--validation-split", default="validation")
    p.add_argument("--out", help="checkpoint path")
    p.set_defaults(handler=cmd_train_flow)

    p = sub.add_parser("train-probe", parents=[common], help="train the probe")
    p.add_argument("--split", default="train")
    p.add_argument("--test-split", default="test")
    p.add_argument("--out", help="checkpoint path")
    p.set_defaults(handler=cmd_train_probe)

    p = sub.add_parser("importance", parents=[common], help="feature importance report")
    p.add_argument("--model", required=True, help="classifier or flow checkpoint")
    p.add_argument("--split", default="test")
    p.add_argument("--pairs", type=int, help="pairs per attribute")
    p.add_argument(
        "--attributes", nargs="+", choices=ATTRIBUTES, default=list(ATTRIBUTES)
    )
    p.add_argument("--probe", help="probe checkpoint for the interpolation metric")
    p.add_argument("--trajectories", type=int, default=50)
    p.add_argument("--steps", type=int, default=11)
    p.add_argument("--out", help="report JSON path")
    p.set_defaults(handler=cmd_importance)

    p = sub.add_parser("explain", help="compose an explanation grid")
    techniques = p.add_subparsers(dest="technique", required=True)
    for technique in ("baseline", "counterfactual", "concepts"):
        t = techniques.add_parser(technique, parents=[common])
        t.add_argument("--model", required=True, help="model checkpoint")
        t.add_argument("--split", default="validation")
        t.add_argument("--out", help="grid PNG path")
        if technique != "concepts":
            t.add_argument("--bins", choices=BIN_MODES, default="quantile")
        else:
            t.add_argument("-k", type=int, default=10)
            t.add_argument("--threshold", type=float, default=0.2)
            t.add_argument("--top", type=int, default=5)
        t.set_defaults(handler=cmd_explain)
    t = techniques.add_parser("handout", parents=[common], help="grids to PDF")
    t.add_argument("grids", nargs="+", help="grid PNG files")
    t.add_argument("--out", help="PDF path")
    t.set_defaults(handler=cmd_explain)

    p = sub.add_parser("analyze-study", parents=[common], help="study statistics")
    p.add_argument("responses", help="response CSV")
    p.add_argument("--out", help="report CSV path")
    p.set_defaults(handler=cmd_analyze_study)

    p = sub.add_parser("verify", parents=[common], help="run the invariant checks")
    p.add_argument("--quick", action="store_true", help="reduced sizes")
    p.set_defaults(handler=cmd_verify)
    return parser


def configure_logging(verbosity: int) -> None:
    level = {0: logging.WARNING, 1: logging.INFO}.get(verbosity, logging.DEBUG)
    logging.basicConfig(level=level, format=LOG_FORMAT)


def run_command(argv: Optional[Sequence[str]] = None) -> int:
    """
    Parse ``argv`` and run the command.

    :returns: ``0`` on success, ``1`` on a pipeline failure, ``2`` on a usage or \
    configuration error.
    """
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    args.argv = argv
    configure_logging(args.verbose)
    ctx = None
    try:
        ctx = RunContext(args)
        status = args.handler(ctx)
    except ConfigurationError as e:
        print(f"error [{type(e).__name__}]: {e}", file=sys.stderr)
        return 2
    except (BlockzooError, OSError) as e:
        print(f"error [{type(e).__name__}]: {e}", file=sys.stderr)
        status = 1
    if ctx is not None and args.command != "verify":
        ctx.write_run_manifest(status)
    return status


def main() -> None:
    sys.exit(run_command())
