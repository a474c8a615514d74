# ============================================================
# cli.py
#
# Command-line front end.
#
#   umbra attack   --image sign.png --model toy.pt --k 0.43 --out runs/a1
#   umbra bench    --corpus corpus/ --model toy.pt --axis k --values 0.2,0.43,0.7
#   umbra schedule --image sign.png --model toy.pt --lat 45 --lon 0
#   umbra train    --corpus corpus/ --augment-shadows --out runs/robust
#   umbra corpus   --out corpus/ --classes 8 --per-class 100
#   umbra frames   --frames video/ --model toy.pt --label 0
#
# Every flag may also come from --config (key = value lines). Exit codes:
# 0 success, 2 attack failed, 1 error. Each run directory receives
# run_config.txt, which replays the run when passed back as --config.
# ============================================================

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .ansi import paint, setup_logging
from .attack import AttackConfig, run_attack
from .bench import AXES, defense_rows, defense_table, sweep, write_table
from .classifier import OracleClassifier, TrainHyper, load_model, save_model, train
from .config import RunConfig, coerce, load_config, resolve_seed, section
from .dataio import (filter_dark, frame_statistics, generate_corpus, load_frames, load_image, load_manifest,
                     load_mask, load_samples, save_image)
from .errors import ConfigError, DegenerateGeometryError, NoShadowError, UmbraError
from .geometry import Polygon
from .shadow import K_MEAN, ShadowSpec, apply_shadow, measure_k
from .solar import (SceneGeometry, SolarContext, SunPosition, adversarial_windows, lift_pixels,
                    parse_timestamp, plan_scheduled_attack, scheduled_sweep, solar_position, write_sweep_csv)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_ATTACK_FAILED = 2

DEFAULT_VALUES = {"k": (0.2, K_MEAN, 0.7), "edges": (3, 6, 9), "restarts": (1, 5)}
# Shadow cast at the scheduled time when no occluder is given, in fractions of the sign.
DEFAULT_SHADOW = ((0.1, 0.2), (0.6, 0.3), (0.25, 0.8))
# Sun used to place that occluder when the scheduled time casts no shadow.
REFERENCE_SUN = SunPosition(45.0, 180.0)


def _values(text):
    value = coerce(text)
    return value if isinstance(value, tuple) else (value,)


def _common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="key = value file; flags override it")
    parser.add_argument("--seed", type=int, default=None, help="global seed (fallback: $UMBRA_SEED, then 0)")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v info, -vv debug")
    parser.add_argument("--no-color", action="store_true", help="plain log output")


def _model_options(parser: argparse.ArgumentParser):
    parser.add_argument("--model", default=None, help="weights file written by 'umbra train'")
    parser.add_argument("--oracle-cmd", dest="oracle_cmd", default=None,
                        help="command of an external stdio oracle")


def _attack_options(parser: argparse.ArgumentParser):
    parser.add_argument("--k", type=float, default=None, help=f"shadow coefficient (default {K_MEAN})")
    parser.add_argument("--measure-k", dest="measure_k", metavar="REF", default=None,
                        help="measure k from a shadowed reference image of the same view")
    parser.add_argument("--edges", type=int, default=None, help="polygon vertices (default 3)")
    parser.add_argument("--restarts", dest="swarm.restarts", type=int, default=None)
    parser.add_argument("--swarm-size", dest="swarm.swarm_size", type=int, default=None)
    parser.add_argument("--iterations", dest="swarm.max_iters", type=int, default=None)
    parser.add_argument("--workers", dest="swarm.workers", type=int, default=None,
                        help="threads evaluating one swarm iteration")
    parser.add_argument("--eot", dest="use_eot", action="store_true", default=None,
                        help="optimize over a transform plan")
    parser.add_argument("--stabilize", action="store_true", default=None,
                        help="stabilize the induced label afterwards")
    parser.add_argument("--budget", dest="query_budget", type=int, default=None, help="query cap per attack")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="umbra", description="Shadow-based adversarial attacks and defenses.")
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("attack", help="attack one image")
    _common(p)
    _model_options(p)
    _attack_options(p)
    p.add_argument("--image", default=None)
    p.add_argument("--mask", default=None, help='PGM mask or "full" (default)')
    p.add_argument("--label", type=int, default=None, help="true label (default: the clean prediction)")

    p = commands.add_parser("bench", help="success rate and queries over a corpus")
    _common(p)
    _model_options(p)
    _attack_options(p)
    p.add_argument("--corpus", default=None, help="corpus directory or manifest")
    p.add_argument("--robust-model", dest="robust_model", default=None,
                   help="shadow-trained weights; adds defense.csv against --model")
    p.add_argument("--axis", choices=AXES, default=None)
    p.add_argument("--values", type=_values, default=None, help="comma-separated swept values")
    p.add_argument("--limit", type=int, default=None, help="first N samples of every class")
    p.add_argument("--jobs", type=int, default=None, help="concurrent attacks")
    p.add_argument("--filter-dark", dest="filter_dark", action="store_true", default=None)

    p = commands.add_parser("schedule", help="sun-driven shadow timeline")
    _common(p)
    _model_options(p)
    _attack_options(p)
    p.add_argument("--image", default=None)
    p.add_argument("--mask", default=None)
    p.add_argument("--label", type=int, default=None)
    p.add_argument("--lat", type=float, default=None)
    p.add_argument("--lon", type=float, default=None)
    p.add_argument("--start", default=None, help="ISO date-time, mean solar time unless zoned")
    p.add_argument("--end", default=None)
    p.add_argument("--step", type=float, default=None, help="seconds between frames")
    p.add_argument("--scheduled", default=None, help="time the shadow is planned for")
    p.add_argument("--distance", type=float, default=None, help="occluder distance in meters")
    p.add_argument("--occluder", type=_values, default=None, help="x,y,z,x,y,z,... in meters")
    p.add_argument("--optimize", action="store_true", default=None,
                   help="search the occluder placement at the scheduled time")

    p = commands.add_parser("train", help="train the toy classifier")
    _common(p)
    p.add_argument("--corpus", default=None)
    p.add_argument("--augment-shadows", dest="augment", action="store_true", default=None)
    p.add_argument("--epochs", dest="train.epochs", type=int, default=None)
    p.add_argument("--lr", dest="train.lr", type=float, default=None)
    p.add_argument("--batch", dest="train.batch", type=int, default=None)
    p.add_argument("--hidden", dest="train.hidden", type=int, default=None)
    p.add_argument("--filter-dark", dest="filter_dark", action="store_true", default=None)

    p = commands.add_parser("corpus", help="write the synthetic sign corpus")
    _common(p)
    p.add_argument("--classes", type=int, default=None)
    p.add_argument("--per-class", dest="per_class", type=int, default=None)

    p = commands.add_parser("frames", help="classify a numbered frame sequence")
    _common(p)
    _model_options(p)
    p.add_argument("--frames", default=None, help="directory of numbered .png/.ppm frames")
    p.add_argument("--label", type=int, default=None, help="true label of the filmed sign")
    p.add_argument("--report", default=None, help="report.json whose shadow is cast on every frame")
    p.add_argument("--mask", default=None)
    return parser


_GLOBAL = {"config", "seed", "out", "verbose", "no_color", "command"}


def resolve(args: argparse.Namespace) -> tuple:
    """Merge flags over the config file; returns (settings, seed, out directory)."""
    settings = load_config(args.config) if args.config else {}
    file_seed = settings.pop("seed", None)
    file_out = settings.pop("out", None)
    settings.pop("command", None)
    for key, value in vars(args).items():
        if key not in _GLOBAL and value is not None:
            settings[key] = value
    seed = resolve_seed(args.seed, file_seed)
    out = Path(args.out or file_out or Path("runs") / args.command)
    return settings, seed, out


def _require(settings: dict, *keys):
    for key in keys:
        if settings.get(key) is None:
            raise ConfigError(f"--{key.replace('_', '-')} is required")


def attack_config(settings: dict, seed: int) -> AttackConfig:
    swarm = section(settings, "swarm")
    swarm["seed"] = seed
    return AttackConfig.from_dict({
        "k": settings.get("k", K_MEAN),
        "edges": settings.get("edges", 3),
        "use_eot": bool(settings.get("use_eot", False)),
        "stabilize": bool(settings.get("stabilize", False)),
        "query_budget": settings.get("query_budget"),
        "swarm": swarm,
        "transform": section(settings, "transform"),
    })


def open_classifier(settings: dict):
    if settings.get("oracle_cmd"):
        return OracleClassifier(settings["oracle_cmd"])
    if settings.get("model"):
        return load_model(settings["model"])
    raise ConfigError("either --model or --oracle-cmd is required")


def _close(classifier):
    close = getattr(classifier, "close", None)
    if close is not None:
        close()


def _write_json(path: Path, data: dict) -> Path:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def cmd_attack(settings: dict, seed: int, out: Path) -> int:
    _require(settings, "image")
    image = load_image(settings["image"])
    mask = load_mask(settings.get("mask", "full"), image.shape)
    cfg = attack_config(settings, seed)
    k_source = "assumed"
    if settings.get("measure_k"):
        cfg = cfg.with_k(measure_k(image, load_image(settings["measure_k"]), mask))
        k_source = "measured"

    classifier = open_classifier(settings)
    try:
        label = settings.get("label")
        if label is None:
            label = classifier.predict(image).label
            logger.info("no --label given; attacking the clean prediction %d", label)
        report = run_attack(image, int(label), mask, classifier, cfg, plan_seed=seed)
    finally:
        _close(classifier)

    out.mkdir(parents=True, exist_ok=True)
    data = report.to_dict()
    data.update({"k": cfg.k, "k_source": k_source, "image": str(settings["image"]),
                 "total_queries": report.total_queries})
    _write_json(out / "report.json", data)
    save_image(out / "clean.png", image)
    save_image(out / "adv.png", report.adversarial_image(image))
    RunConfig("attack", seed, str(out), settings).save(out)

    verdict = paint("success", "fg_green") if report.success else paint("failed", "fg_red")
    print(f"attack {verdict}: {report.original_label} -> {report.adversarial_label} "
          f"in {report.total_queries} queries ({out / 'report.json'})")
    return EXIT_OK if report.success else EXIT_ATTACK_FAILED


def _corpus(settings: dict) -> list:
    _require(settings, "corpus")
    samples = load_samples(load_manifest(settings["corpus"]))
    if settings.get("filter_dark"):
        samples = filter_dark(samples)
    limit = settings.get("limit")
    if limit is not None:
        taken = {}
        kept = []
        for sample in samples:
            if taken.get(sample.label, 0) < int(limit):
                taken[sample.label] = taken.get(sample.label, 0) + 1
                kept.append(sample)
        samples = kept
    if not samples:
        raise ConfigError(f"corpus {settings['corpus']} holds no usable samples")
    return samples


def cmd_bench(settings: dict, seed: int, out: Path) -> int:
    samples = _corpus(settings)
    cfg = attack_config(settings, seed)
    axis = settings.get("axis", "k")
    values = tuple(settings.get("values") or DEFAULT_VALUES[axis])
    jobs = int(settings.get("jobs", 1))
    progress = logging.getLogger("umbra").isEnabledFor(logging.INFO)

    classifier = open_classifier(settings)
    models = {getattr(classifier, "name", "model"): classifier}
    try:
        table = sweep(samples, models, axis, values, cfg, seed, jobs, progress)
        write_table(*table.success_table(), out / "success_rate.csv")
        write_table(*table.query_table(), out / "mean_queries.csv")
        if settings.get("robust_model"):
            robust = load_model(settings["robust_model"])
            rows = defense_table(samples, classifier, robust, cfg, seed, jobs, progress)
            write_table(*defense_rows(rows), out / "defense.csv")
    finally:
        _close(classifier)
    RunConfig("bench", seed, str(out), settings).save(out)
    print(f"bench over {len(samples)} samples written to {out}")
    return EXIT_OK


def _default_occluder(scene: SceneGeometry, sun) -> np.ndarray:
    height, width = scene.image_size
    shadow = Polygon(np.array(DEFAULT_SHADOW) * np.array([width, height]))
    try:
        return lift_pixels(scene, shadow, sun)
    except (NoShadowError, DegenerateGeometryError) as exc:
        logger.warning("%s; placing the default cardboard for a sun at %.0f deg elevation due south",
                       exc, REFERENCE_SUN.elevation)
        return lift_pixels(scene, shadow, REFERENCE_SUN)


def cmd_schedule(settings: dict, seed: int, out: Path) -> int:
    _require(settings, "image")
    image = load_image(settings["image"])
    mask = load_mask(settings.get("mask", "full"), image.shape)
    lat = float(settings.get("lat", 45.0))
    lon = float(settings.get("lon", 0.0))
    start = parse_timestamp(str(settings.get("start", "2025-03-21T08:25:00")))
    end = parse_timestamp(str(settings.get("end", "2025-03-21T08:35:00")))
    scheduled = settings.get("scheduled")
    scheduled = parse_timestamp(str(scheduled)) if scheduled else start + (end - start) / 2
    step = float(settings.get("step", 1.0))
    scene = SceneGeometry(image_size=image.shape[:2], distance=float(settings.get("distance", 1.0)))
    ctx = SolarContext(lat, lon, scheduled)
    cfg = attack_config(settings, seed)
    if cfg.needs_k:
        raise ConfigError("schedule needs a numeric --k")

    out.mkdir(parents=True, exist_ok=True)
    classifier = open_classifier(settings)
    try:
        label = settings.get("label")
        label = classifier.predict(image).label if label is None else int(label)
        if settings.get("optimize"):
            report, occluder = plan_scheduled_attack(scene, ctx, image, mask, label, classifier, cfg, seed)
            _write_json(out / "report.json", report.to_dict())
            if occluder is None:
                raise ConfigError("the scheduled attack found no occluder placement")
        elif settings.get("occluder"):
            occluder = np.asarray(settings["occluder"], dtype=np.float64).reshape(-1, 3)
        else:
            occluder = _default_occluder(scene, solar_position(ctx))
            logger.info("no occluder given; placed the default cardboard for %s", scheduled.isoformat())
        scene = scene.with_occluder(occluder)
        rows = scheduled_sweep(scene, SolarContext(lat, lon, start), SolarContext(lat, lon, end), step,
                               image, mask, cfg.k, classifier, label)
    finally:
        _close(classifier)

    write_sweep_csv(rows, out / "timeline.csv")
    windows = adversarial_windows(rows, label)
    write_table(["start", "end", "duration_s", "frames"],
                [[w.start.isoformat(), w.end.isoformat(), w.duration, w.frames] for w in windows],
                out / "windows.csv")
    settings = dict(settings, occluder=tuple(float(v) for v in np.asarray(scene.occluder).reshape(-1)))
    RunConfig("schedule", seed, str(out), settings).save(out)
    print(f"{len(rows)} frames, {len(windows)} adversarial window(s): {out / 'timeline.csv'}")
    return EXIT_OK


def cmd_train(settings: dict, seed: int, out: Path) -> int:
    samples = _corpus(settings)
    hyper = TrainHyper.from_dict({**section(settings, "train"), "seed": seed})
    augment = bool(settings.get("augment", False))
    progress = logging.getLogger("umbra").isEnabledFor(logging.INFO)
    model = train(samples, hyper, augment=augment, progress=progress)

    out.mkdir(parents=True, exist_ok=True)
    save_model(model, out / "model.pt")
    write_table(["epoch", "loss", "accuracy"],
                [[e.epoch, f"{e.loss:.6f}", f"{e.accuracy:.6f}"] for e in model.history],
                out / "train_log.csv")
    RunConfig("train", seed, str(out), settings).save(out)
    print(f"trained {model.name}: clean accuracy {model.history[-1].accuracy:.4f} ({out / 'model.pt'})")
    return EXIT_OK


def cmd_corpus(settings: dict, seed: int, out: Path) -> int:
    manifest = generate_corpus(out, seed, int(settings.get("classes", 8)), int(settings.get("per_class", 100)))
    RunConfig("corpus", seed, str(out), settings).save(out)
    print(f"{len(manifest)} samples written to {out}")
    return EXIT_OK


def _report_spec(path, mask) -> ShadowSpec:
    with open(path, "r", encoding="utf-8") as f:
        report = json.load(f)
    stab = report.get("stabilization") or {}
    spec = stab.get("spec") if stab.get("success") else report.get("spec")
    if not spec:
        raise ConfigError(f"{path} holds no shadow spec")
    return ShadowSpec(Polygon(spec["polygon"]), spec["k"], mask)


def cmd_frames(settings: dict, seed: int, out: Path) -> int:
    _require(settings, "frames", "label")
    frames = load_frames(settings["frames"])
    shape = frames[0].image.shape
    mask = load_mask(settings.get("mask", "full"), shape)
    spec = _report_spec(settings["report"], mask) if settings.get("report") else None
    true_label = int(settings["label"])

    classifier = open_classifier(settings)
    rows = []
    try:
        for frame in frames:
            image = frame.image if spec is None else apply_shadow(frame.image, spec)
            conf = classifier.predict(image)
            rows.append([frame.index, frame.path.name, conf.label, f"{conf[true_label]:.6f}"])
    finally:
        _close(classifier)

    stats = frame_statistics([r[2] for r in rows], true_label)
    write_table(["frame", "file", "label", "confidence_true"], rows, out / "frames.csv")
    _write_json(out / "frames.json", {"frames": stats.frames, "error_rate": stats.error_rate,
                                      "stability": stats.stability, "primary_error": stats.primary_error})
    RunConfig("frames", seed, str(out), settings).save(out)
    print(f"{stats.frames} frames: error rate {stats.error_rate:.2f}%, stability {stats.stability:.2f}%")
    return EXIT_OK


COMMANDS = {
    "attack": cmd_attack,
    "bench": cmd_bench,
    "schedule": cmd_schedule,
    "train": cmd_train,
    "corpus": cmd_corpus,
    "frames": cmd_frames,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.verbose, color=False if args.no_color else None)
    try:
        settings, seed, out = resolve(args)
        return COMMANDS[args.command](settings, seed, out)
    except (UmbraError, OSError, ValueError) as exc:
        logger.error("%s", exc)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
