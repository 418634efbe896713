from argparse import ArgumentParser, RawTextHelpFormatter
import json, logging, os, sys

import numpy as np

from mlact.config import load_config, with_overrides
from mlact.core import (
    INVERSE_FREQUENCY,
    UNIFORM,
    SyntheticConfig,
    generate_synthetic_dataset,
    load_dataset,
    save_dataset,
)
from mlact.dissect import (
    CATEGORIES,
    DEFAULT_IOU_THRESHOLD,
    DEFAULT_QUANTILE,
    dissect_units,
    probe_unit,
    report_csv,
    restrict_categories,
    tally_blocks,
    units_from_tensor,
)
from mlact.formats import (
    read_concepts,
    read_image_ids,
    read_mask_dir,
    read_rectangles,
    read_tensor,
    scale_to_bytes,
    write_mask_pgm,
    write_pgm,
)
from mlact.losses import LOSS_NAMES, LSEP, WLSEP
from mlact.mcam import multi_cam, region_summary
from mlact.trainer import (
    ComparisonConfig,
    OptimizerConfig,
    TrainingDivergedError,
    compare_losses,
    comparison_csv,
    count_macro_wins,
    evaluate,
    initialize_model,
    load_model,
    save_model,
    train,
)
from mlact.util import get_mlact_version, hash_file, parse_int_list, parse_size
from mlact.validate import Verification

"""
mlact: multi-label action learning and interpretation
"""

LOG_FORMAT = "%(asctime)s: [%(levelname)s]: %(message)s"

# accepted --weights values
WEIGHT_CHOICES = {
    "uniform": UNIFORM,
    "invfreq": INVERSE_FREQUENCY,
    "inverse_frequency": INVERSE_FREQUENCY,
}

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERIC = 3


def main(args=None):
    parser = ArgumentParser(
        description="Multi-label action learning and interpretation toolkit",
        formatter_class=RawTextHelpFormatter,
    )

    parser.add_argument("-V", "--version", action="version", version=get_version())
    parser.add_argument(
        "-v", "--verbose", action="store_true", help="Log debug messages to stderr"
    )

    subparsers = parser.add_subparsers(dest="cmd")
    subparsers.required = True

    gen_data = subparsers.add_parser(
        "gen-data", help="generate a synthetic long-tail dataset"
    )
    gen_data.add_argument("--classes", type=int, default=20)
    gen_data.add_argument("--features", type=int, default=32)
    gen_data.add_argument("--examples", type=int, default=1000)
    gen_data.add_argument("--zipf", type=float, default=1.2, help="Zipf exponent")
    gen_data.add_argument(
        "--co-label-prob",
        type=float,
        default=0.0,
        help="Probability of adding each further label to an example",
    )
    gen_data.add_argument("--noise", type=float, default=0.5, help="Feature noise std")
    gen_data.add_argument("--seed", type=int, default=0)
    gen_data.add_argument("-o", "--out", default="dataset.jsonl")
    gen_data.set_defaults(func=cmd_gen_data)

    train_cmd = subparsers.add_parser("train", help="train a classifier")
    train_cmd.add_argument("--data", required=True, help="Dataset manifest (JSON lines)")
    train_cmd.add_argument(
        "--config", help="YAML file with optimizer settings, overridden by flags"
    )
    train_cmd.add_argument("--loss", choices=LOSS_NAMES)
    train_cmd.add_argument("--weights", choices=sorted(WEIGHT_CHOICES))
    train_cmd.add_argument("--lr", type=float)
    train_cmd.add_argument("--momentum", type=float)
    train_cmd.add_argument("--epochs", type=int)
    train_cmd.add_argument("--batch", type=int)
    train_cmd.add_argument("--seed", type=int)
    train_cmd.add_argument(
        "--hidden", type=int, help="Width of an optional logistic hidden layer"
    )
    train_cmd.add_argument("--out-model", default="model.mmtt")
    train_cmd.add_argument("--log", help="Write the per-epoch mean loss as CSV")
    train_cmd.add_argument(
        "--save-init", help="Also write the initial parameters as a model file"
    )
    train_cmd.set_defaults(func=cmd_train)

    eval_cmd = subparsers.add_parser("eval", help="evaluate a model on a dataset")
    eval_cmd.add_argument("--data", required=True)
    eval_cmd.add_argument("--model", required=True)
    eval_cmd.add_argument("--report", choices=["json", "csv"], default="json")
    eval_cmd.add_argument("-o", "--out", help="Report file, printed when omitted")
    eval_cmd.set_defaults(func=cmd_eval)

    cam = subparsers.add_parser("cam", help="multi-label class activation maps")
    cam.add_argument("--features", required=True, help="Tensor file D×H×W")
    cam.add_argument("--head", required=True, help="Tensor file D×C")
    cam.add_argument("--classes", required=True, help="Comma separated class ids")
    cam.add_argument("--cosine-threshold", type=float, default=1e-4)
    cam.add_argument("--delta", type=float, default=0.1)
    cam.add_argument("--floor", type=float, default=0.2)
    cam.add_argument("--sigma", type=float, default=1.0)
    cam.add_argument("--kernel-size", type=int, default=5)
    cam.add_argument("--out-dir", default="cam")
    cam.set_defaults(func=cmd_cam)

    dissect = subparsers.add_parser("dissect", help="label units with concepts")
    dissect.add_argument(
        "--activations",
        action="append",
        required=True,
        help="Tensor file units×images×h×w, optionally as NAME=PATH.\n"
        "Repeat to tally several blocks",
    )
    dissect.add_argument(
        "--masks",
        required=True,
        help="JSON rectangle list or a directory of <image>_<concept>.pgm masks",
    )
    dissect.add_argument("--concepts", required=True, help="Concept index CSV")
    dissect.add_argument("--images", required=True, help="Image ids, one per line")
    dissect.add_argument("--image-size", required=True, help="Mask resolution HxW")
    dissect.add_argument(
        "--categories",
        help="Only use concepts of these categories (%s)" % ",".join(CATEGORIES),
    )
    dissect.add_argument("--quantile", type=float, default=DEFAULT_QUANTILE)
    dissect.add_argument("--iou-threshold", type=float, default=DEFAULT_IOU_THRESHOLD)
    dissect.add_argument(
        "-o",
        "--out",
        default="dissection.json",
        help="JSON report, the per-unit CSV is written next to it",
    )
    dissect.set_defaults(func=cmd_dissect)

    probe = subparsers.add_parser("probe", help="rank classes for one active unit")
    probe.add_argument("--model", required=True)
    probe.add_argument("--data", required=True, help="Manifest providing class names")
    probe.add_argument("--unit", type=int, required=True)
    probe.add_argument("--top", type=int, default=5)
    probe.set_defaults(func=cmd_probe)

    verify = subparsers.add_parser("verify", help="run the numerical self-checks")
    verify.add_argument("--instances", type=int, default=100)
    verify.add_argument("--seed", type=int, default=0)
    verify.set_defaults(func=cmd_verify)

    compare = subparsers.add_parser(
        "compare", help="compare losses on long-tail synthetic data"
    )
    compare.add_argument("--config", help="YAML file with experiment settings")
    compare.add_argument("--seeds", type=int)
    compare.add_argument("--epochs", type=int)
    compare.add_argument("-o", "--out", default="comparison.csv")
    compare.set_defaults(func=cmd_compare)

    cmd = parser.parse_args(args=args)

    if cmd.cmd == "probe" and cmd.top < 1:
        parser.error("--top must be at least 1")

    logging.basicConfig(
        format=LOG_FORMAT, level=logging.DEBUG if cmd.verbose else logging.INFO
    )

    try:
        value = cmd.func(cmd)
    except TrainingDivergedError as e:
        print("Training diverged: %s" % e, file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError) as e:
        print("Error: %s" % e, file=sys.stderr)
        return EXIT_INVALID

    return value


def get_version():
    return "%(prog)s " + get_mlact_version()


def report_artifact(path):
    size, digest = hash_file(path)
    print("Wrote %s (%d bytes, %s)" % (path, size, digest))


def cmd_gen_data(res):
    config = SyntheticConfig(
        classes=res.classes,
        features=res.features,
        examples=res.examples,
        zipf_exponent=res.zipf,
        co_label_prob=res.co_label_prob,
        noise_std=res.noise,
    )

    print("Generating synthetic dataset")
    dataset = generate_synthetic_dataset(config, res.seed)
    save_dataset(dataset, res.out)
    report_artifact(res.out)
    return EXIT_OK


def cmd_train(res):
    config = OptimizerConfig()
    if res.config:
        config = load_config(res.config, OptimizerConfig)

    config = with_overrides(
        config,
        loss=res.loss,
        weight_scheme=WEIGHT_CHOICES.get(res.weights),
        learning_rate=res.lr,
        momentum=res.momentum,
        epochs=res.epochs,
        batch_size=res.batch,
        seed=res.seed,
        hidden_units=res.hidden,
    )

    dataset = load_dataset(res.data)
    print(
        "Training %s (%s weights) on %d examples" % (config.loss, config.weight_scheme, len(dataset))
    )

    init = initialize_model(
        dataset.num_features,
        dataset.num_classes,
        hidden_units=config.hidden_units,
        init_scale=config.init_scale,
        seed=config.seed,
    )
    if res.save_init:
        save_model(init, res.save_init)
        report_artifact(res.save_init)

    model, log = train(dataset, config, model=init)

    print("Writing model")
    save_model(model, res.out_model)
    report_artifact(res.out_model)

    if res.log:
        with open(res.log, "w") as fh:
            fh.write(log.to_csv())
        report_artifact(res.log)

    return EXIT_OK


def cmd_eval(res):
    dataset = load_dataset(res.data)
    model = load_model(res.model)
    if model.num_features != dataset.num_features or model.num_classes != dataset.num_classes:
        raise ValueError(
            "model expects %d features and %d classes, dataset has %d and %d"
            % (
                model.num_features,
                model.num_classes,
                dataset.num_features,
                dataset.num_classes,
            )
        )

    report = evaluate(model, dataset)
    text = report.to_json() if res.report == "json" else report.to_csv()

    if not res.out:
        sys.stdout.write(text)
        return EXIT_OK

    with open(res.out, "w") as fh:
        fh.write(text)
    report_artifact(res.out)
    return EXIT_OK


def cmd_cam(res):
    features = read_tensor(res.features)
    head = read_tensor(res.head)
    class_ids = parse_int_list(res.classes)

    print("Computing multi-label CAM for classes %s" % ", ".join(map(str, class_ids)))
    region_map = multi_cam(
        features,
        head,
        class_ids,
        cosine_threshold=res.cosine_threshold,
        similarity_delta=res.delta,
        activation_floor=res.floor,
        kernel_size=res.kernel_size,
        sigma=res.sigma,
    )

    os.makedirs(res.out_dir, exist_ok=True)
    outputs = []

    path = os.path.join(res.out_dir, "composite.pgm")
    write_pgm(path, scale_to_bytes(region_map.composite))
    outputs.append(path)

    for class_id, mask in sorted(region_map.per_class_masks.items()):
        path = os.path.join(res.out_dir, "class_%d.pgm" % class_id)
        write_mask_pgm(path, mask)
        outputs.append(path)

    path = os.path.join(res.out_dir, "regions.json")
    sidecar = {
        "classes": region_summary(region_map),
        "boundary_pixels": int(np.count_nonzero(region_map.boundaries)),
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    outputs.append(path)

    for path in outputs:
        report_artifact(path)
    return EXIT_OK


def parse_blocks(specs):
    """NAME=PATH pairs (a bare PATH is named after its file)"""
    blocks = {}
    for spec in specs:
        name, sep, path = spec.partition("=")
        if not sep:
            path = spec
            name = os.path.splitext(os.path.basename(spec))[0]
        if not name or not path:
            raise ValueError("invalid --activations value: %s" % spec)
        if name in blocks:
            raise ValueError("duplicate activation block '%s'" % name)
        blocks[name] = path
    return blocks


def cmd_dissect(res):
    image_size = parse_size(res.image_size)
    image_ids = read_image_ids(res.images)
    concepts = read_concepts(res.concepts)
    if res.categories:
        categories = [c.strip() for c in res.categories.split(",") if c.strip()]
        concepts = restrict_categories(concepts, categories)

    if os.path.isdir(res.masks):
        masks = read_mask_dir(res.masks, image_size)
    else:
        masks = read_rectangles(res.masks, image_size)

    reports = {}
    for name, path in parse_blocks(res.activations).items():
        print("Dissecting %s" % name)
        reports[name] = dissect_units(
            units_from_tensor(read_tensor(path)),
            masks,
            concepts,
            image_ids,
            image_size,
            quantile=res.quantile,
            iou_threshold=res.iou_threshold,
        )
        print(
            "%s: %d interpretable units, %d concepts"
            % (name, reports[name].interpretable_units, reports[name].concept_count)
        )

    result = {
        "blocks": {name: report.to_dict() for name, report in reports.items()},
        "tally": tally_blocks(reports),
    }
    with open(res.out, "w") as fh:
        fh.write(json.dumps(result, indent=2) + "\n")

    csv_path = os.path.splitext(res.out)[0] + ".csv"
    with open(csv_path, "w") as fh:
        fh.write(report_csv(reports))

    report_artifact(res.out)
    report_artifact(csv_path)
    return EXIT_OK


def cmd_probe(res):
    model = load_model(res.model)
    dataset = load_dataset(res.data)
    if model.num_classes != dataset.num_classes:
        raise ValueError(
            "model has %d classes, dataset has %d" % (model.num_classes, dataset.num_classes)
        )

    ranking = probe_unit(model, res.unit)
    for position, class_id in enumerate(ranking[: res.top], start=1):
        print("%d. %s" % (position, dataset.vocabulary.names[class_id]))
    return EXIT_OK


def cmd_verify(res):
    verification = Verification(instances=res.instances, seed=res.seed)

    for func in verification.checks():
        success = func()
        if success is False:
            print("Verification Failed")
            return EXIT_NUMERIC

    print("Verification Succeeded")
    return EXIT_OK


def cmd_compare(res):
    config = ComparisonConfig()
    if res.config:
        config = load_config(res.config, ComparisonConfig)
    config = with_overrides(config, seeds=res.seeds, epochs=res.epochs)

    print(
        "Comparing %s over %d seeds"
        % (", ".join("%s/%s" % run for run in config.runs), config.seeds)
    )
    rows = compare_losses(config)
    with open(res.out, "w") as fh:
        fh.write(comparison_csv(rows))
    report_artifact(res.out)

    challenger, baseline = (WLSEP, INVERSE_FREQUENCY), (LSEP, UNIFORM)
    if challenger in config.runs and baseline in config.runs:
        wins = count_macro_wins(rows, challenger, baseline)
        print(
            "%s/%s beats %s/%s on macro mAP in %d of %d seeds"
            % (challenger + baseline + (wins, config.seeds))
        )
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
