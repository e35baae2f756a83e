# -*- coding: utf-8 -*-
"""Command line interface for interacting with the module.

The command line interface runs detection on JPEG and MJPEG inputs, trains
and evaluates classifier models and benchmarks the pipeline.
"""
from pathlib import Path
import sys
import argparse
import itertools
import logging

from dctscene import __version__


def print_version(args):
    print(f"dctscene Version {__version__}")
    return 0


def _model_config(args):
    from dctscene.config import load_config
    return load_config(args.config).with_overrides(
        iterations=getattr(args, "iterations", None),
        n_bg=getattr(args, "n_bg", None),
        max_modes=getattr(args, "max_modes", None))


def run_detect(args):
    from dctscene.config import PipelineConfig
    from dctscene.pipeline import run_detection

    if args.model is not None and not Path(args.model).is_file():
        logging.error(f"Model file not found: {args.model}. Run 'dctscene-cli train' to create one, "
                      "or omit --model to use the shipped default model.")
        return 1
    try:
        config = PipelineConfig(
            model_config=_model_config(args),
            model_path=args.model,
            input=args.input,
            output_dir=args.out,
            emit_age_images=args.emit_age_images,
            emit_scores=args.emit_scores,
            snapshot_path=args.snapshot,
            initial_snapshot=args.initial_snapshot)
        summary = run_detection(config)
    except (OSError, ValueError) as error:
        logging.error(str(error))
        return 1
    print(f"{summary.frames} frames, {summary.skipped} skipped, {summary.blobs} foreground blobs")
    return 0


def run_train(args):
    from dctscene.classifier import save_model
    from dctscene.synthetic import iter_corpus
    from dctscene.training import TrainingError, train_model

    try:
        sequences = list(iter_corpus(args.corpus))
        config = _model_config(args)
    except (OSError, ValueError) as error:
        logging.error(str(error))
        return 1
    if not sequences:
        logging.error(f"No sequences found in {args.corpus}")
        return 1
    logging.info(f"Training on {len(sequences)} sequences with {config.iterations} spatial iterations.")
    try:
        model = train_model(sequences, config.iterations, config, seed=args.seed, holdout=args.holdout)
    except TrainingError as error:
        logging.error(f"Training failed: {error}")
        return 1
    save_model(model, args.out)
    return 0


def run_eval(args):
    from dctscene.evaluation import evaluate_detections

    try:
        report = evaluate_detections(args.detections, args.gt)
    except FileNotFoundError as error:
        logging.error(str(error))
        return 1
    print(report.summary())
    if args.csv:
        report.to_csv(args.csv)
    return 0


def run_bench(args):
    from dctscene.classifier import load_model
    from dctscene.evaluation import measure_resources
    from dctscene.mjpeg import iter_mjpeg_frames
    from dctscene.pipeline import Pipeline

    try:
        pipeline = Pipeline(load_model(args.model), _model_config(args))
        if args.input is not None:
            frames = list(itertools.islice(iter_mjpeg_frames(args.input), args.frames))
        else:
            from dctscene.synthetic import SyntheticConfig, generate_sequence
            logging.info(f"Generating {args.frames} synthetic frames of {args.width}x{args.height}.")
            sequence = generate_sequence("random", SyntheticConfig(width=args.width, height=args.height,
                                                                   n_frames=args.frames), seed=args.seed)
            frames = sequence.frames
    except (OSError, ValueError) as error:
        logging.error(str(error))
        return 1
    if not frames:
        logging.error("No frames to benchmark")
        return 1
    # first frame compiles the kernels
    pipeline.process_frame(frames[0])
    report = measure_resources(pipeline, frames[1:] or frames)
    print(f"frames: {report.frames}")
    print(f"frames per second: {report.fps:.1f}")
    print(f"scene model: {report.model_bytes} bytes ({report.model_kilobytes:.0f} KB), "
          f"at most {report.max_model_bytes // 1024} KB")
    return 0


def run_synth(args):
    from dctscene.synthetic import SyntheticConfig, generate_corpus, write_corpus

    config = SyntheticConfig(width=args.width, height=args.height, n_frames=args.frames,
                             subsampling=args.subsampling, block_noise=args.block_noise, quality=args.quality)
    sequences = generate_corpus(args.sequences, config, seed=args.seed, scenario=args.scenario)
    write_corpus(sequences, args.out)
    print(f"Wrote {len(sequences)} sequences to {args.out}")
    return 0


def run_demo(args):
    from dctscene import demo
    return demo.run_demo(args)


def cli():
    parser = argparse.ArgumentParser(prog="dctscene-cli")

    loglevels = {
        'critical': logging.CRITICAL,
        'error': logging.ERROR,
        'warn': logging.WARNING,
        'warning': logging.WARNING,
        'info': logging.INFO,
        'debug': logging.DEBUG
    }

    def lowercase(value: str):
        return value.lower()

    parser.add_argument('-log', "--loglevel",
                        default="warning",
                        choices=loglevels.keys(),
                        type=lowercase,
                        help="Logging level to use. Example: 'debug'. Default: 'warning'.")

    commands = {
        'version': print_version,
        'detect': run_detect,
        'train': run_train,
        'eval': run_eval,
        'bench': run_bench,
        'synth': run_synth,
        'demo': run_demo,
    }
    cmdparsers = parser.add_subparsers(dest="command", required=True)
    version_parser = cmdparsers.add_parser('version')   # noqa: F841

    def add_model_options(cmd_parser, *, model=True):
        if model:
            cmd_parser.add_argument("--model", type=Path,
                                    help="Classifier model file. Default: the model shipped with the package.")
        cmd_parser.add_argument("--config", type=Path, help="JSON configuration file.")
        cmd_parser.add_argument("--iterations", type=int, help="Number of spatial iterations.")
        cmd_parser.add_argument("--n-bg", dest="n_bg", type=int, help="Background age horizon, in frames.")
        cmd_parser.add_argument("--max-modes", dest="max_modes", type=int, help="Maximum modes per block.")

    detect_parser = cmdparsers.add_parser('detect', help="Detect foreground blobs in a JPEG/MJPEG input.")
    detect_parser.add_argument("--input", required=True,
                               help="MJPEG or JPEG file, directory of JPEG frames, or http(s) URL.")
    detect_parser.add_argument("--out", required=True, type=Path, help="Output directory.")
    add_model_options(detect_parser)
    detect_parser.add_argument("--emit-age-images", action='store_true', help="Write age images as PGM.")
    detect_parser.add_argument("--emit-scores", action='store_true', help="Write per-block match scores as .npy.")
    detect_parser.add_argument("--snapshot", type=Path, help="Save the final scene model to this file.")
    detect_parser.add_argument("--initial-snapshot", type=Path, help="Start from a saved scene model.")

    train_parser = cmdparsers.add_parser('train', help="Train a classifier model on a labeled corpus.")
    train_parser.add_argument("--corpus", required=True, type=Path, help="Corpus directory (see 'synth').")
    train_parser.add_argument("--out", required=True, type=Path, help="Model file to write.")
    add_model_options(train_parser, model=False)
    train_parser.add_argument("--seed", default=0, type=int, help="Random seed. Default: 0.")
    train_parser.add_argument("--holdout", default=0.25, type=float,
                              help="Share of pairs held out for the match threshold. Default: 0.25.")

    eval_parser = cmdparsers.add_parser('eval', help="Score detection output against ground truth.")
    eval_parser.add_argument("--detections", required=True, type=Path, help="Output directory of 'detect'.")
    eval_parser.add_argument("--gt", required=True, type=Path, help="Ground truth directory.")
    eval_parser.add_argument("--csv", type=Path, help="Write the report as CSV to this file.")

    bench_parser = cmdparsers.add_parser('bench', help="Measure throughput and scene model memory.")
    bench_parser.add_argument("--input", help="Input to benchmark. Default: synthetic frames.")
    bench_parser.add_argument("--frames", default=100, type=int, help="Number of frames. Default: 100.")
    bench_parser.add_argument("--width", default=768, type=int, help="Synthetic frame width. Default: 768.")
    bench_parser.add_argument("--height", default=576, type=int, help="Synthetic frame height. Default: 576.")
    bench_parser.add_argument("--seed", default=0, type=int, help="Random seed. Default: 0.")
    add_model_options(bench_parser)

    synth_parser = cmdparsers.add_parser('synth', help="Write a synthetic labeled corpus.")
    synth_parser.add_argument("--out", required=True, type=Path, help="Corpus directory.")
    synth_parser.add_argument("--sequences", default=20, type=int, help="Number of sequences. Default: 20.")
    synth_parser.add_argument("--frames", default=120, type=int, help="Frames per sequence. Default: 120.")
    synth_parser.add_argument("--width", default=160, type=int, help="Frame width. Default: 160.")
    synth_parser.add_argument("--height", default=120, type=int, help="Frame height. Default: 120.")
    synth_parser.add_argument("--scenario", default="random",
                              choices=["random", "static", "walk_stop_leave", "abandoned_bag"])
    synth_parser.add_argument("--subsampling", default="4:2:0", choices=["4:4:4", "4:2:2", "4:2:0"])
    synth_parser.add_argument("--quality", default=90, type=int, help="JPEG quality. Default: 90.")
    synth_parser.add_argument("--block-noise", dest="block_noise", default=0.0, type=float,
                              help="Probability of a block offset per block and frame. Default: 0.")
    synth_parser.add_argument("--seed", default=0, type=int, help="Random seed. Default: 0.")

    demo_parser = cmdparsers.add_parser('demo', help="Median filter versus moving average impulse response.")
    demo_parser.add_argument("--baseline", default=100, type=int, help="Baseline coefficient value.")
    demo_parser.add_argument("--impulse", default=60, type=int, help="Impulse magnitude.")
    demo_parser.add_argument("--alpha-amf", dest="alpha_amf", default=3.0, type=float, help="Median filter step.")
    demo_parser.add_argument("--alpha-ema", dest="alpha_ema", default=0.1, type=float,
                             help="Moving average learning rate.")
    demo_parser.add_argument("--frames", default=10, type=int, help="Number of frames.")
    demo_parser.add_argument("--style", default=1, type=int, choices=[1, 2], help="Plotting style to use.")
    demo_parser.add_argument("--save", type=str, help="Save output to provided filename")
    demo_parser.add_argument("--noshow", default=False, action='store_true', help="Do not show the output image.")
    demo_parser.add_argument("--noplot", default=False, action='store_true', help="Only print the table.")

    args = parser.parse_args()
    logging.basicConfig(level=loglevels[args.loglevel])

    sys.exit(commands[args.command](args))


if __name__ == "__main__":
    cli()
