"""``lesionviz`` command line: train, eval, featmap, grid, saliency, occlude.

Exit codes: 0 success, 1 usage error, 2 runtime failure. Every run prints its
resolved configuration as ``key = value`` lines, the same format accepted by
``--config``; explicit flags override config-file values.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import data, viz
from .checkpoint import load_checkpoint
from .errors import InvalidArgumentError
from .imaging import save_png
from .network import NetworkConfig
from .optim import AdamConfig
from .train import ImageStore, TrainConfig, evaluate, train
from .viz import FeatureMapId

DEFAULT_NET = NetworkConfig()
DEFAULT_TRAIN = TrainConfig()


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _optional_float(text: str) -> float | None:
    if text.strip().lower() in ("", "none"):
        return None
    return float(text)


def _id_list(text: str) -> list[FeatureMapId]:
    try:
        return [FeatureMapId.parse(part) for part in text.split(",") if part.strip()]
    except InvalidArgumentError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _fmt(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, (tuple, list)):
        return ",".join(str(v) for v in value)
    return str(value)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=DEFAULT_TRAIN.seed, help="random seed")
    p.add_argument("--threads", type=int, default=1, help="worker pool size; 1 is bitwise deterministic")
    p.add_argument("--config", help="file of 'key = value' lines; flags override it")


def _viz_flags(p: argparse.ArgumentParser, single_image: bool = True) -> None:
    p.add_argument("--checkpoint", help="trained checkpoint file")
    if single_image:
        p.add_argument("--image", help="input image (PNG or JPEG)")
    p.add_argument("--alpha-max", type=float, default=viz.DEFAULT_ALPHA_MAX, help="opacity of the strongest activation")
    p.add_argument("--out", help="output PNG path")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="lesionviz", description="Skin lesion CNN training and feature-map visualisation.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("train", help="train from a manifest", formatter_class=fmt)
    p.add_argument("--manifest", help="CSV with header 'path,label'")
    p.add_argument("--out", help="output directory for checkpoints and train.log")
    p.add_argument("--epochs", type=int, default=DEFAULT_TRAIN.epochs, help="training epochs")
    p.add_argument("--batch", type=int, default=DEFAULT_TRAIN.batch_size, help="mini-batch size")
    p.add_argument("--lr", type=float, default=AdamConfig().learning_rate, help="Adam learning rate")
    p.add_argument("--beta1", type=float, default=AdamConfig().beta1, help="Adam first-moment decay")
    p.add_argument("--beta2", type=float, default=AdamConfig().beta2, help="Adam second-moment decay")
    p.add_argument("--pos-weight", type=_optional_float, default=None, help="weight of the positive class in the loss")
    p.add_argument(
        "--checkpoint-every", type=int, default=DEFAULT_TRAIN.checkpoint_every, help="epochs between checkpoints; 0 = final only"
    )
    p.add_argument("--filters", type=_int_list, default=_fmt(DEFAULT_NET.conv_block_filters), help="filters per conv block")
    p.add_argument("--dense", type=_int_list, default=_fmt(DEFAULT_NET.dense_units), help="hidden dense layer sizes")
    p.add_argument("--input-size", type=int, default=DEFAULT_NET.input_shape[1], help="square crop fed to the network")
    _common(p)

    p = sub.add_parser("eval", help="score a manifest and report ROC-AUC", formatter_class=fmt)
    p.add_argument("--checkpoint", help="trained checkpoint file")
    p.add_argument("--manifest", help="CSV with header 'path,label'")
    p.add_argument("--report", help="report path; ROC points go to <stem>_roc.txt beside it")
    _common(p)

    p = sub.add_parser("featmap", help="overlay one feature map on an image", formatter_class=fmt)
    _viz_flags(p)
    p.add_argument("--layer", type=int, help="conv layer id, 0-based")
    p.add_argument("--filter", type=int, help="filter within the layer, 0-based")
    p.add_argument("--heatmap", help="optional plain-text export of the raw map")
    _common(p)

    p = sub.add_parser("grid", help="grid of feature-map overlays", formatter_class=fmt)
    _viz_flags(p, single_image=False)
    p.add_argument("--images", help="text file listing one image path per line")
    p.add_argument("--ids", type=_id_list, help="comma list of layer:filter")
    _common(p)

    p = sub.add_parser("saliency", help="input-gradient saliency overlay", formatter_class=fmt)
    _viz_flags(p)
    p.add_argument("--heatmap", help="optional plain-text export of the raw map")
    _common(p)

    p = sub.add_parser("occlude", help="occlusion sensitivity overlay", formatter_class=fmt)
    _viz_flags(p)
    p.add_argument("--patch", type=int, default=32, help="occluding square side in pixels")
    p.add_argument("--stride", type=int, default=8, help="step between occluder positions")
    p.add_argument("--fill", type=float, default=0.5, help="value written into the occluded square")
    p.add_argument("--heatmap", help="optional plain-text export of the raw map")
    _common(p)
    return parser


def _subparser(parser: argparse.ArgumentParser, command: str) -> argparse.ArgumentParser:
    for action in parser._subparsers._group_actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[command]
    raise KeyError(command)


def _read_config(path: str, sub: argparse.ArgumentParser) -> dict:
    actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "config")}
    values = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror or exc}") from None
    for n, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        dest = key.strip().replace("-", "_")
        if not sep or dest not in actions:
            raise UsageError(f"{path}:{n}: unknown or malformed entry {raw.strip()!r}")
        convert = actions[dest].type or str
        try:
            values[dest] = convert(value.strip())
        except (ValueError, argparse.ArgumentTypeError) as exc:
            raise UsageError(f"{path}:{n}: bad value for {key.strip()}: {exc}") from None
    return values


def parse_args(argv, parser: argparse.ArgumentParser | None = None) -> argparse.Namespace:
    parser = parser or build_parser()
    args = parser.parse_args(argv)
    if args.config:
        sub = _subparser(parser, args.command)
        sub.set_defaults(**_read_config(args.config, sub))
        args = parser.parse_args(argv)
    return args


def _require(args, *names):
    missing = ["--" + n.replace("_", "-") for n in names if getattr(args, n) is None]
    if missing:
        raise UsageError(f"lesionviz {args.command}: missing required option(s): {', '.join(missing)}")


def resolved_text(args) -> str:
    items = sorted((k, v) for k, v in vars(args).items() if k not in ("command", "config"))
    return f"command = {args.command}\n" + "".join(f"{k.replace('_', '-')} = {_fmt(v)}\n" for k, v in items)


# --- handlers ----------------------------------------------------------------


def _train(args) -> None:
    _require(args, "manifest", "out")
    net = NetworkConfig(
        conv_block_filters=args.filters, dense_units=args.dense, input_shape=(3, args.input_size, args.input_size)
    )
    cfg = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch,
        adam=AdamConfig(learning_rate=args.lr, beta1=args.beta1, beta2=args.beta2),
        seed=args.seed,
        checkpoint_every=args.checkpoint_every,
        pos_weight=args.pos_weight,
        threads=args.threads,
    )
    aug = data.AugmentConfig.for_input(args.input_size)
    records = data.load_manifest(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(resolved_text(args), encoding="utf-8")
    result = train(ImageStore(records, aug.image_size), cfg, out, net, aug)
    print(f"final checkpoint: {out / 'final.ckpt'} (epoch {result.checkpoint.epoch})")


def _load_model(path):
    ckpt = load_checkpoint(path)
    return ckpt.model()


def _image_size(model) -> int:
    return data.AugmentConfig.for_input(model.config.input_shape[1]).image_size


def _input(model, path) -> np.ndarray:
    img = data.load_image(path, _image_size(model))
    return data.center_crop(img, model.config.input_shape[1], dtype=model.dtype)


def _eval(args) -> None:
    _require(args, "checkpoint", "manifest")
    model = _load_model(args.checkpoint)
    store = ImageStore(data.load_manifest(args.manifest), _image_size(model))
    report = evaluate(model, store, threads=args.threads)
    text = report.to_text()
    print(text, end="")
    if args.report:
        path = Path(args.report)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
        roc = path.with_name(path.stem + "_roc.txt")
        roc.write_text(report.roc_text(), encoding="utf-8")
        print(f"wrote {path} and {roc}")


def _feature_id(args, config: NetworkConfig) -> FeatureMapId:
    return FeatureMapId(args.layer, args.filter).validate(config)


def _featmap(args) -> None:
    if args.layer is not None and args.checkpoint is None:
        # report an out-of-range id before complaining about other flags
        FeatureMapId(args.layer, args.filter or 0).validate(DEFAULT_NET)
    _require(args, "checkpoint", "image", "layer", "filter", "out")
    model = _load_model(args.checkpoint)
    fid = _feature_id(args, model.config)
    overlay, hm = viz.feature_overlay(model, _input(model, args.image), fid, args.alpha_max)
    save_png(overlay, args.out)
    if args.heatmap:
        viz.write_heatmap_text(hm, args.heatmap)
    print(f"wrote {args.out}")


def _read_image_list(path) -> list[Path]:
    base = Path(path).parent
    lines = [ln.strip() for ln in Path(path).read_text(encoding="utf-8").splitlines()]
    return [p if p.is_absolute() else base / p for p in (Path(ln) for ln in lines if ln and not ln.startswith("#"))]


def _grid(args) -> None:
    _require(args, "checkpoint", "images", "ids", "out")
    model = _load_model(args.checkpoint)
    for fid in args.ids:
        fid.validate(model.config)
    images = [_input(model, p) for p in _read_image_list(args.images)]
    viz.render_grid(model, images, args.ids, args.out, args.alpha_max)
    print(f"wrote {args.out}")


def _saliency(args) -> None:
    _require(args, "checkpoint", "image", "out")
    model = _load_model(args.checkpoint)
    x = _input(model, args.image)
    hm = viz.saliency(model, x)
    save_png(viz.heatmap_overlay(x, hm, args.alpha_max), args.out)
    if args.heatmap:
        viz.write_heatmap_text(hm, args.heatmap)
    print(f"wrote {args.out}")


def _occlude(args) -> None:
    _require(args, "checkpoint", "image", "out")
    model = _load_model(args.checkpoint)
    x = _input(model, args.image)
    hm = viz.occlusion_map(model, x, args.patch, args.stride, args.fill, threads=args.threads)
    # only regions whose presence supports the malignant score are tinted
    support = replace(hm, values=np.maximum(hm.values, 0.0))
    save_png(viz.heatmap_overlay(x, support, args.alpha_max), args.out)
    if args.heatmap:
        viz.write_heatmap_text(hm, args.heatmap)
    print(f"wrote {args.out}")


HANDLERS = {
    "train": _train,
    "eval": _eval,
    "featmap": _featmap,
    "grid": _grid,
    "saliency": _saliency,
    "occlude": _occlude,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = None
    try:
        args = parse_args(argv, parser)
        if args.threads < 1:
            raise UsageError(f"--threads must be >= 1, got {args.threads}")
        print(resolved_text(args), end="", flush=True)
        HANDLERS[args.command](args)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except (UsageError, InvalidArgumentError) as exc:
        message = str(exc)
        if not message.startswith("usage:"):
            usage = _subparser(parser, args.command).format_usage() if args is not None else parser.format_usage()
            message = f"{usage}error: {message}"
        print(message, file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
