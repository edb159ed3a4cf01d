"""Command-line entry point: dataset synthesis, training, editing, evaluation,
and the HTTP service.

Exit codes: 0 success, 1 runtime error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .datasets import generate_toy_dataset, load_annotations, save_dataset
from .encoder import EncoderPretrainConfig, pretrain_encoder
from .errors import ExeditError
from .imgio import gray_to_mask, load_image, to_uint8
from .metrics import evaluate_benchmark
from .sampling import GuidanceConfig, edit_image
from .training import (
    PRESETS,
    init_train_state,
    load_checkpoint,
    load_edit_model,
    preset_config,
    pretrain_prior,
    run_training,
    save_checkpoint,
)

log = logging.getLogger(__name__)


def _load_mask(path) -> np.ndarray:
    with PILImage.open(path) as im:
        gray = np.asarray(im.convert("L"))
    return gray_to_mask(gray)


def cmd_dataset(args) -> int:
    rng = np.random.default_rng(args.seed)
    dataset = generate_toy_dataset(args.count, (args.size, args.size), rng)
    out = save_dataset(dataset, args.out)
    print(f"wrote {len(dataset)} images to {out}")
    return 0


def cmd_train(args) -> int:
    dataset = load_annotations(args.data)
    if args.resume:
        state = load_checkpoint(args.resume)
        if args.preset != state.config.ablation_preset:
            print(
                f"error: --preset {args.preset} does not match checkpoint preset "
                f"{state.config.ablation_preset}",
                file=sys.stderr,
            )
            return 1
        rng = np.random.default_rng(state.config.seed + state.step + 1)
        print(f"resumed from {args.resume} at step {state.step}")
    else:
        overrides = {}
        if args.batch_size:
            overrides["batch_size"] = args.batch_size
        if args.base_width:
            overrides["base_width"] = args.base_width
        if args.encoder_steps is not None:
            overrides["encoder_steps"] = args.encoder_steps
        if args.prior_steps is not None:
            overrides["prior_steps"] = args.prior_steps
        config = preset_config(args.preset, steps=args.steps, seed=args.seed, **overrides)
        rng = np.random.default_rng(config.seed)
        images = [a.image for a in dataset]
        print(f"pretraining encoder ({config.encoder_steps} steps)")
        encoder = pretrain_encoder(
            images, EncoderPretrainConfig(d_emb=config.d_emb, steps=config.encoder_steps), rng
        )
        state = init_train_state(config, encoder)
        if config.prior_steps:
            print(f"prior pretraining ({config.prior_steps} steps)")
            pretrain_prior(state, dataset, config.prior_steps, rng)

    print(f"training ({args.steps} steps, preset={state.config.ablation_preset})")
    run_training(state, dataset, args.steps, rng)
    save_checkpoint(state, args.out)
    losses = state.loss_history
    tail = float(np.mean(losses[-50:])) if losses else float("nan")
    print(f"wrote checkpoint to {args.out} (step {state.step}, recent loss {tail:.5f})")
    return 0


def cmd_edit(args) -> int:
    model = load_edit_model(args.model)
    source = load_image(args.source)
    mask = _load_mask(args.mask)
    reference = load_image(args.reference)
    g = GuidanceConfig(scale=args.scale, num_steps=args.steps, seed=args.seed)
    out = edit_image(model, source, mask, reference, g)

    # Composite in 8-bit space so unmasked bytes match the input file exactly.
    with PILImage.open(args.source) as im:
        src_u8 = np.asarray(im.convert("RGB"))
    out_u8 = to_uint8(out)
    out_u8[mask == 0] = src_u8[mask == 0]
    PILImage.fromarray(out_u8, mode="RGB").save(args.out, format="PNG")
    print(f"wrote {args.out}")
    return 0


def _load_real_pool(path) -> list[np.ndarray]:
    root = Path(path)
    if (root / "annotations.json").is_file():
        return [a.image for a in load_annotations(root)]
    files = sorted(root.glob("*.png")) or sorted((root / "images").glob("*.png"))
    if not files:
        raise ExeditError(f"no images found under {root}")
    return [load_image(f) for f in files]


def cmd_eval(args) -> int:
    model = load_edit_model(args.model)
    cases_root = Path(args.cases)
    cases_file = cases_root / "cases.json"
    if not cases_file.is_file():
        print(f"error: cases file not found: {cases_file}", file=sys.stderr)
        return 1
    with open(cases_file) as f:
        records = json.load(f)
    cases = [
        (
            load_image(cases_root / rec["source"]),
            _load_mask(cases_root / rec["mask"]),
            load_image(cases_root / rec["reference"]),
        )
        for rec in records
    ]
    real_pool = _load_real_pool(args.real)
    g = GuidanceConfig(scale=args.scale, num_steps=args.steps, seed=args.seed)
    report = evaluate_benchmark(model, cases, g, real_pool)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(report.to_text())
    with open(out / "report.json", "w") as f:
        json.dump(report.to_dict(), f, indent=1)
    print(report.to_text(), end="")
    print(f"wrote {out / 'report.txt'} and {out / 'report.json'}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(
        model_path=args.model,
        max_side=args.max_side,
        static_dir=args.ui,
    )
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="exedit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dataset", help="generate a procedural toy dataset")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--count", type=int, default=2000, help="number of images")
    p.add_argument("--size", type=int, default=32, help="image side in pixels")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("train", help="train an edit model")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--preset", choices=PRESETS, default="classifier_free")
    p.add_argument("--steps", type=int, default=2000, help="conditional training steps")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--batch-size", type=int, default=0, help="override batch size")
    p.add_argument("--base-width", type=int, default=0, help="override denoiser width")
    p.add_argument("--encoder-steps", type=int, default=None, help="override encoder pretraining steps")
    p.add_argument("--prior-steps", type=int, default=None, help="override prior-stage steps")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("edit", help="edit one image with a reference")
    p.add_argument("--model", required=True, help="checkpoint path")
    p.add_argument("--source", required=True, help="source image (PNG)")
    p.add_argument("--mask", required=True, help="8-bit grayscale mask (threshold 128)")
    p.add_argument("--reference", required=True, help="reference image (PNG)")
    p.add_argument("--scale", type=float, default=5.0, help="guidance scale")
    p.add_argument("--steps", type=int, default=50, help="sampling steps")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output PNG path")
    p.set_defaults(func=cmd_edit)

    p = sub.add_parser("eval", help="run the benchmark metrics")
    p.add_argument("--model", required=True)
    p.add_argument("--cases", required=True, help="directory with cases.json + files")
    p.add_argument("--real", required=True, help="real-pool dataset directory")
    p.add_argument("--scale", type=float, default=5.0)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="report output directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="run the HTTP edit service")
    p.add_argument("--model", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--max-side", type=int, default=128)
    p.add_argument("--ui", help="directory of built UI assets to serve at /")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage/help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ExeditError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
