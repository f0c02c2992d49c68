"""Command-line front end: ``supercut {train,superpixels,segment,eval}``.

Every option can also come from a ``key = value`` config file given with
``--config``; command-line flags win over the file. Exit codes: 0 success,
2 usage error, 3 data error, 4 numeric error.
"""
import argparse
import json
import logging
import os
import re
import sys
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import imageio, metrics
from .dsc import run_dsc
from .errors import NumericError, StructuralError
from .nn.checkpoint import atomic_write
from .params import HyperParams
from .superae import SuperAE, TrainConfig, reconstruct_image, train_superae
from .superpixels import ingest_label_map, overlay_boundaries, slic_segment

log = logging.getLogger("supercut")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
IMAGE_EXTS = (".ppm", ".pgm")
LABEL_EXTS = (".pgm", ".csv")


class UsageError(Exception):
    pass


class ImageFailure(Exception):
    """A module error raised while processing one image."""

    def __init__(self, image_id, error):
        super().__init__(f"{image_id}: {error}")
        self.image_id = image_id
        self.error = error


def _bool(text):
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text):
    return None if str(text).strip().lower() in ("", "none", "auto") else float(text)


def _widths(text):
    if isinstance(text, (tuple, list)):
        return tuple(int(v) for v in text)
    parts = tuple(int(v) for v in str(text).split(","))
    if len(parts) != 3 or min(parts) < 1:
        raise ValueError("widths needs three positive integers, e.g. 64,128,256")
    return parts


@dataclass(frozen=True)
class Option:
    name: str
    type: object
    default: object
    help: str
    commands: tuple


_ALL = ("train", "superpixels", "segment", "eval")
_HP_CMDS = ("train", "segment")

OPTIONS = [
    Option("seed", int, 0, "root seed; per-image seeds derive from it and the image id", _ALL),
    Option("threads", int, 1, "worker threads for per-image work", _ALL),
    Option("out", str, None, "output directory", _ALL),
    Option("images", str, None, "directory of P6/P5 images", ("train", "superpixels", "segment")),
    Option("templates", str, None, "directory of template label maps (<id>.pgm or .csv)", ("train",)),
    Option("template_m", int, 60, "SLIC region count for templates when --templates is absent", ("train",)),
    Option("epochs", int, 100, "training epochs", ("train",)),
    Option("batch_size", int, 10, "images per batch", ("train",)),
    Option("train_lr", float, 1e-3, "Adam learning rate for the autoencoder", ("train",)),
    Option("crop", int, 300, "random crop size", ("train",)),
    Option("flip", _bool, True, "random horizontal flips", ("train",)),
    Option("widths", _widths, (64, 128, 256), "encoder channel widths c1,c2,c3", ("train",)),
    Option("checkpoint", str, None, "model checkpoint", ("superpixels", "segment")),
    Option("m", int, 100, "target superpixel count", ("superpixels",)),
    Option("compactness", float, 10.0, "SLIC compactness", ("superpixels",)),
    Option("slic_iters", int, 10, "SLIC k-means iterations", ("superpixels",)),
    Option("superpixels", str, None, "directory of superpixel label maps", ("segment",)),
    Option("k", int, 32, "partition count (feature channels)", _HP_CMDS),
    Option("sigma", float, 10.0, "similarity scale", ("segment",)),
    Option("d", _opt_float, None, "centre distance gate in pixels (default 2*sqrt(N/M))", ("segment",)),
    Option("alpha", float, 1.0, "cross-entropy weight", ("segment",)),
    Option("beta", _opt_float, None, "cut-loss weight (default 5/M^2)", ("segment",)),
    Option("t", int, 128, "cut iterations", ("segment",)),
    Option("lr", float, 5e-2, "SGD learning rate for the cut stage", ("segment",)),
    Option("momentum", float, 0.9, "SGD momentum for the cut stage", ("segment",)),
    Option("lam", float, 1.0, "template regulariser weight", ("train",)),
    Option("standardize", _bool, True, "standardise embedding channels before the softmax", ("segment",)),
    Option("segs", str, None, "segmentation directory, or a directory of per-parameter subdirectories", ("eval",)),
    Option("gt", str, None, "ground truth: <id>.pgm/.csv or a directory <id>/ of several maps", ("eval",)),
]
OPTION_BY_NAME = {o.name: o for o in OPTIONS}
REQUIRED = {
    "train": ("images", "out"),
    "superpixels": ("images", "out"),
    "segment": ("images", "checkpoint", "superpixels", "out"),
    "eval": ("segs", "gt", "out"),
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    parser = argparse.ArgumentParser(prog="supercut", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for cmd in _ALL:
        p = sub.add_parser(cmd, parents=[common])
        p.add_argument("--config", help="key = value file; flags override it")
        for opt in OPTIONS:
            if cmd in opt.commands:
                flag = "--" + opt.name.replace("_", "-")
                # None means "not given" so the config file can fill it in
                p.add_argument(flag, dest=opt.name, type=str, default=None, help=opt.help)
    return parser


def read_config_file(path):
    values = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc.strerror}") from None
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in OPTION_BY_NAME:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = value
    return values


def parse_config(argv):
    """Parse ``argv`` into ``(command, settings, verbosity)``; raises :class:`UsageError`."""
    args = build_parser().parse_args(argv)
    cmd = args.command
    raw = read_config_file(args.config) if args.config else {}
    for key, value in vars(args).items():
        if key in OPTION_BY_NAME and value is not None:
            raw[key] = value
    settings = {}
    for opt in OPTIONS:
        if cmd not in opt.commands:
            continue
        if opt.name in raw:
            try:
                settings[opt.name] = opt.type(raw[opt.name])
            except ValueError as exc:
                raise UsageError(f"--{opt.name.replace('_', '-')}: {exc}") from None
        else:
            settings[opt.name] = opt.default
    for name in REQUIRED[cmd]:
        if settings.get(name) is None:
            raise UsageError(f"--{name.replace('_', '-')} is required for {cmd}")
    for name in ("images", "templates", "superpixels", "segs", "gt"):
        if settings.get(name) is not None and not os.path.isdir(settings[name]):
            raise UsageError(f"--{name}: no such directory {settings[name]}")
    if settings.get("checkpoint") is not None and not os.path.isfile(settings["checkpoint"]):
        raise UsageError(f"--checkpoint: no such file {settings['checkpoint']}")
    for name in ("threads", "template_m", "epochs", "batch_size", "crop", "m", "slic_iters"):
        if name in settings and settings[name] < 1:
            raise UsageError(f"--{name.replace('_', '-')} must be >= 1")
    for name in ("train_lr", "compactness"):
        if name in settings and not settings[name] > 0:
            raise UsageError(f"--{name.replace('_', '-')} must be positive")
    if cmd in _HP_CMDS:
        hp_keys = [n for n in HyperParams.field_names() if n in settings]
        try:
            settings["hp"] = HyperParams(**{n: settings[n] for n in hp_keys})
        except StructuralError as exc:
            raise UsageError(str(exc)) from None
    return cmd, settings, args.verbose


# ---------------------------------------------------------------------------
# file discovery
# ---------------------------------------------------------------------------


def _natural_key(name):
    return [int(tok) if tok.isdigit() else tok for tok in re.split(r"(\d+)", name)]


def list_images(directory):
    """``[(id, path)]`` for every PPM/PGM in ``directory``, sorted by id."""
    found = []
    for entry in sorted(os.listdir(directory), key=_natural_key):
        stem, ext = os.path.splitext(entry)
        if ext.lower() in IMAGE_EXTS and os.path.isfile(os.path.join(directory, entry)):
            found.append((stem, os.path.join(directory, entry)))
    if not found:
        raise StructuralError(f"no .ppm/.pgm images in {directory}")
    return found


def find_label_file(directory, image_id):
    for ext in LABEL_EXTS:
        path = os.path.join(directory, image_id + ext)
        if os.path.isfile(path):
            return path
    raise ImageFailure(image_id, StructuralError(f"no label map {image_id}.pgm or {image_id}.csv in {directory}"))


def ground_truths(directory):
    """``{id: [paths]}`` from ``<id>.pgm|csv`` files or ``<id>/`` directories."""
    out = {}
    for entry in sorted(os.listdir(directory), key=_natural_key):
        path = os.path.join(directory, entry)
        stem, ext = os.path.splitext(entry)
        if os.path.isdir(path):
            maps = [os.path.join(path, f) for f in sorted(os.listdir(path), key=_natural_key)
                    if os.path.splitext(f)[1].lower() in LABEL_EXTS]
            if maps:
                out[entry] = maps
        elif ext.lower() in LABEL_EXTS:
            out[stem] = [path]
    if not out:
        raise StructuralError(f"no ground-truth label maps in {directory}")
    return out


def image_seed(seed, image_id):
    # counter-style split: depends on the id, not on processing order
    return [int(seed), zlib.crc32(image_id.encode("utf-8"))]


def _map_images(func, items, threads):
    def guarded(item):
        try:
            return func(item)
        except ImageFailure:
            raise
        except (StructuralError, NumericError, OSError) as exc:
            raise ImageFailure(item[0], exc) from exc

    if threads <= 1:
        return [guarded(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(guarded, items))


def _curve_csv(header, rows):
    lines = [",".join(header)]
    lines += [",".join(repr(float(v)) if isinstance(v, (float, np.floating)) else str(v) for v in row) for row in rows]
    return ("\n".join(lines) + "\n").encode("ascii")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_train(s):
    items = list_images(s["images"])
    images = [imageio.read_image(p) for _, p in items]
    if s["templates"] is not None:
        templates = [ingest_label_map(find_label_file(s["templates"], i))[0] for i, _ in items]
    else:
        by_id = dict(zip((i for i, _ in items), images))
        templates = _map_images(lambda it: slic_segment(by_id[it[0]], s["template_m"]), items, s["threads"])
    hp = s["hp"]
    config = TrainConfig(widths=s["widths"], k=hp.k, epochs=s["epochs"], batch_size=s["batch_size"],
                         lr=s["train_lr"], lam=hp.lam, crop=s["crop"], flip=s["flip"], seed=s["seed"])
    result = train_superae(images, templates, config)
    out = s["out"]
    os.makedirs(os.path.join(out, "reconstructed"), exist_ok=True)
    result.model.save(os.path.join(out, "model.ckpt"))
    atomic_write(os.path.join(out, "loss.csv"),
                 _curve_csv(["epoch", "loss"], [(e + 1, v) for e, v in enumerate(result.losses)]))
    for (image_id, _), img in zip(items, images):
        imageio.write_ppm(os.path.join(out, "reconstructed", image_id + ".ppm"), reconstruct_image(result.model, img))
    log.info("trained %d epochs on %d images, loss %.6g -> %.6g",
             config.epochs, len(images), result.losses[0], result.losses[-1])


def cmd_superpixels(s):
    model = SuperAE.load(s["checkpoint"]) if s["checkpoint"] else None
    os.makedirs(s["out"], exist_ok=True)

    def work(item):
        image_id, path = item
        image = imageio.read_image(path)
        source = reconstruct_image(model, image) if model is not None else image
        labels = slic_segment(source, s["m"], s["compactness"], s["slic_iters"])
        imageio.write_label_pgm(os.path.join(s["out"], image_id + ".pgm"), labels)
        imageio.write_ppm(os.path.join(s["out"], image_id + ".overlay.ppm"), overlay_boundaries(image, labels))
        return int(labels.max()) + 1

    counts = _map_images(work, list_images(s["images"]), s["threads"])
    log.info("wrote superpixels for %d images (mean M %.1f)", len(counts), float(np.mean(counts)))


def cmd_segment(s):
    hp = s["hp"]
    os.makedirs(s["out"], exist_ok=True)

    def work(item):
        image_id, path = item
        image = imageio.read_image(path)
        labels, _ = ingest_label_map(find_label_file(s["superpixels"], image_id))
        # a private model per image: the cut stage fine-tunes it in place
        model = SuperAE.load(s["checkpoint"], k=hp.k, seed=image_seed(s["seed"], image_id))
        result = run_dsc(model, image, labels, hp)
        seg = result.segmentation
        imageio.write_label_pgm(os.path.join(s["out"], image_id + ".pgm"), seg)
        imageio.write_ppm(os.path.join(s["out"], image_id + ".overlay.ppm"), overlay_boundaries(image, seg))
        rows = [(i + 1, *r) for i, r in enumerate(result.losses)]
        atomic_write(os.path.join(s["out"], image_id + ".loss.csv"), _curve_csv(["iter", "L1", "L2", "total"], rows))
        return len(np.unique(seg))

    counts = _map_images(work, list_images(s["images"]), s["threads"])
    log.info("segmented %d images (partitions per image: %s)", len(counts), counts)


def _param_dirs(segs):
    subdirs = [d for d in sorted(os.listdir(segs), key=_natural_key) if os.path.isdir(os.path.join(segs, d))]
    if subdirs:
        return [(d, os.path.join(segs, d)) for d in subdirs]
    return [("default", segs)]


def cmd_eval(s):
    gts = ground_truths(s["gt"])
    params = _param_dirs(s["segs"])
    items = [(image_id, paths) for image_id, paths in gts.items()]

    def work(item):
        image_id, paths = item
        truth = [ingest_label_map(p)[0] for p in paths]
        rows = []
        for name, directory in params:
            seg, _ = ingest_label_map(find_label_file(directory, image_id))
            scores = metrics.evaluate(seg, truth)
            rows.append({"image": image_id, "param": name, **scores})
        return rows

    rows = [r for per_image in _map_images(work, items, s["threads"]) for r in per_image]
    summary = {}
    n_img, n_par = len(items), len(params)
    for metric, better in (("SC", "higher"), ("PRI", "higher"), ("VI", "lower")):
        table = np.array([r[metric] for r in rows]).reshape(n_img, n_par)
        ods, idx, ois = metrics.ods_ois(table, better)
        summary[metric] = {"ODS": ods, "ODS_param": params[idx][0], "OIS": ois}
    report = {"params": [p for p, _ in params], "rows": rows, "summary": summary}
    os.makedirs(s["out"], exist_ok=True)
    atomic_write(os.path.join(s["out"], "report.json"), (json.dumps(report, indent=2) + "\n").encode("utf-8"))
    for metric, vals in summary.items():
        print(f"{metric:4s} ODS {vals['ODS']:.4f} (param {vals['ODS_param']})  OIS {vals['OIS']:.4f}")


COMMANDS = {"train": cmd_train, "superpixels": cmd_superpixels, "segment": cmd_segment, "eval": cmd_eval}


def _exit_code(exc):
    if isinstance(exc, NumericError):
        return EXIT_NUMERIC
    return EXIT_DATA


def main(argv=None):
    try:
        cmd, settings, verbose = parse_config(sys.argv[1:] if argv is None else argv)
    except UsageError as exc:
        print(f"supercut: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # argparse already printed the message
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(verbose, 2), format="%(levelname)s %(message)s")
    try:
        COMMANDS[cmd](settings)
    except ImageFailure as exc:
        print(f"supercut: {cmd} failed on {exc}", file=sys.stderr)
        return _exit_code(exc.error)
    except (StructuralError, NumericError, OSError) as exc:
        print(f"supercut: {cmd} failed: {exc}", file=sys.stderr)
        return _exit_code(exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
