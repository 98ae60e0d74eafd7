#!/usr/bin/env python3
"""
DiG-Net experiment harness.

    python dig_net_cli.py synth --count 520 --out-dir runs/bench
    python dig_net_cli.py prepare --manifest runs/bench/manifest.jsonl
    python dig_net_cli.py train --manifest runs/bench/manifest.jsonl
    python dig_net_cli.py eval --checkpoint runs/train/best.pt --manifest runs/bench/manifest.jsonl
    python dig_net_cli.py stream --checkpoint runs/train/best.pt --manifest ... --n 8 --fps-table
"""

import os
import sys
import logging
import argparse
from dataclasses import asdict, replace
from typing import List, Optional

import numpy as np

import config
from errors import DigNetError, EXIT_OK, ValidationError, exit_code_for
from experiment_config import ExperimentConfig, load_experiment_config, save_experiment_config
from gesture_dataset import CLASS_NAMES, load_manifest, write_manifest, PACKED_CLIP_SUFFIX
from degradation import DegradationConfig
from gesture_synth import (SyntheticSceneSpec, benchmark_items, generate_benchmark, render_item,
                           resolve_classes, save_clip, synth_sequence)
from preprocess import ProcessedStore, preprocess, prepare_dataset
from stgt import load_checkpoint
from trainer import (ClipProvider, ablate, evaluate, finetune_extend, select_classes, success_rate,
                     sweep_data, sweep_frames, train)
from streaming import StreamRunner, fps_table, sequence_accuracy, serve_stream, window_predictions
from reports import (ablation_rows, emit_figures, format_table, plot_finetune_curve, read_json,
                     validate_report, write_json)

logger = logging.getLogger('dig_net')


def _floats(text: str) -> List[float]:
    return [float(v) for v in text.split(',') if v.strip()]


def _ints(text: str) -> List[int]:
    return [int(v) for v in text.split(',') if v.strip()]


def _names(text: str) -> List[str]:
    return [v.strip() for v in text.split(',') if v.strip()]


def _samples(args):
    return load_manifest(args.manifest)


def _provider(args, cfg: ExperimentConfig) -> ClipProvider:
    return ClipProvider(_samples(args), cfg.preprocess)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_synth(args, cfg: ExperimentConfig) -> int:
    synth = cfg.synth
    classes = resolve_classes(_names(args.classes) if args.classes else synth.classes)
    deg = synth.degradation_config()
    if args.degradation or args.clutter:
        base = DegradationConfig.preset(args.degradation or synth.degradation).to_dict()
        base['clutter'] = args.clutter or synth.clutter
        deg = DegradationConfig(**base)

    items = benchmark_items(args.count or synth.count, synth.seed, classes, synth.distance_range,
                            synth.environments, synth.split_fractions, synth.frame_count)
    generate_benchmark(args.out_dir, items, deg, args.workers)

    if args.sequences:
        rng = np.random.default_rng(synth.seed)
        seq_dir = os.path.join(args.out_dir, 'sequences')
        os.makedirs(seq_dir, exist_ok=True)
        gestures = [c for c in classes if config.GESTURE_CLASSES[CLASS_NAMES[c]]['kind'] != 'null']
        samples = []
        for i in range(args.sequences):
            labels = [int(l) for l in rng.choice(gestures, size=int(rng.integers(3, 6)))]
            spec = SyntheticSceneSpec(distance=round(float(rng.uniform(*synth.distance_range)), 3),
                                      gesture=labels[0], background_seed=int(rng.integers(0, 2 ** 31 - 1)),
                                      frame_count=synth.frame_count)
            sample = synth_sequence(spec, labels, deg, seed=synth.seed * 100003 + i)
            sample = replace(sample, clip_id=f"sequence-{synth.seed}-{i:04d}", split='test')
            stored = save_clip(sample, os.path.join(seq_dir, sample.clip_id + PACKED_CLIP_SUFFIX))
            samples.append(replace(stored, raw_video=None, annotations=None))
        write_manifest(os.path.join(seq_dir, 'manifest.jsonl'), samples)
        logger.info(f"Wrote {len(samples)} gesture sequences to {seq_dir}")

    save_experiment_config(os.path.join(args.out_dir, 'experiment.json'), cfg)
    return EXIT_OK


def cmd_prepare(args, cfg: ExperimentConfig) -> int:
    store_dir = args.store or os.path.join(args.out_dir, 'processed')
    store = prepare_dataset(_samples(args), store_dir, cfg.preprocess, args.workers)
    logger.info(f"Processed store at {store_dir} with {len(store.entries())} clips")
    return EXIT_OK


def _training_clips(args, cfg: ExperimentConfig):
    if args.store:
        store = ProcessedStore(args.store)
        return store.load('train'), store.load('val')
    provider = _provider(args, cfg)
    return provider.clips('train'), provider.clips('val')


def cmd_train(args, cfg: ExperimentConfig) -> int:
    train_clips, val_clips = _training_clips(args, cfg)
    names = list(CLASS_NAMES)
    if args.classes:
        names = [CLASS_NAMES[i] for i in resolve_classes(_names(args.classes))]
        train_clips, val_clips = select_classes(train_clips, names), select_classes(val_clips, names)
    model_cfg = replace(cfg.model, num_classes=len(names))
    result = train(model_cfg, train_clips, val_clips, cfg.train, args.out_dir, cfg.margin, names)
    save_experiment_config(os.path.join(args.out_dir, 'experiment.json'), cfg)
    logger.info(f"Best epoch {result.best_epoch} (val loss {result.best_val_loss:.4f}); "
                f"checkpoint {result.checkpoint_path}")
    return EXIT_OK


def cmd_eval(args, cfg: ExperimentConfig) -> int:
    model, payload = load_checkpoint(args.checkpoint, device=cfg.train.device)
    names = payload['class_names']
    samples = [s for s in _samples(args) if s.split == args.split]
    if not samples:
        raise ValidationError(f"manifest has no '{args.split}' clips")
    clips = select_classes([preprocess(s, cfg.preprocess) for s in samples], names)

    windows = None
    if args.gss_stride > 0:
        kept = {c.clip_id for c in clips}
        windows = window_predictions(model, [s for s in samples if s.clip_id in kept],
                                     args.gss_window, args.gss_stride, cfg.preprocess)
    records, report = evaluate(model, clips, windows)
    payload_out = report.to_dict()
    validate_report(payload_out)
    write_json(os.path.join(args.out_dir, 'report.json'), payload_out)
    write_json(os.path.join(args.out_dir, 'predictions.json'), [asdict(r) for r in records])

    sweeps = {}
    for key, name in (('data_sweep', 'sweep_data.json'), ('frame_sweep', 'sweep_frames.json')):
        path = os.path.join(args.out_dir, name)
        if os.path.exists(path):
            sweeps[key] = read_json(path)
    emit_figures(args.out_dir, payload_out, names, **sweeps)
    logger.info(f"Success {report.success_rate:.3f}, DWA {report.dwa_normalized:.3f}, "
                f"macro-F1 {report.macro_f1:.3f}, mAP {report.mean_average_precision:.3f}")
    return EXIT_OK


def cmd_ablate(args, cfg: ExperimentConfig) -> int:
    variants = _names(args.variants) if args.variants else list(config.ABLATION_VARIANTS)
    results = ablate(_provider(args, cfg), cfg.model, cfg.train, args.out_dir, variants, cfg.margin)
    write_json(os.path.join(args.out_dir, 'ablation.json'), results)
    print(format_table(ablation_rows(results), ['variant', 'status', 'success_rate', 'dwa', 'macro_f1', 'mAP']))
    return EXIT_OK


def cmd_sweep_frames(args, cfg: ExperimentConfig) -> int:
    rows = sweep_frames(_provider(args, cfg), cfg.model, cfg.train, args.out_dir, _ints(args.n), cfg.margin)
    write_json(os.path.join(args.out_dir, 'sweep_frames.json'), rows)
    emit_figures(args.out_dir, frame_sweep=rows)
    print(format_table(rows, ['n', 'status', 'success', 'success_dynamic', 'success_static']))
    return EXIT_OK


def cmd_sweep_data(args, cfg: ExperimentConfig) -> int:
    rows = sweep_data(_provider(args, cfg), cfg.model, cfg.train, args.out_dir,
                      _floats(args.fractions), args.repeats, cfg.margin)
    write_json(os.path.join(args.out_dir, 'sweep_data.json'), rows)
    emit_figures(args.out_dir, data_sweep=rows)
    print(format_table(rows, ['fraction', 'status', 'clips', 'mean', 'std']))
    return EXIT_OK


def cmd_finetune(args, cfg: ExperimentConfig) -> int:
    rows = finetune_extend(args.checkpoint, _provider(args, cfg), _ints(args.counts), cfg.train,
                           args.out_dir, _ints(args.seeds), cfg.margin,
                           _names(args.new_classes) if args.new_classes else None)
    write_json(os.path.join(args.out_dir, 'finetune.json'), rows)
    plot_finetune_curve(rows, os.path.join(args.out_dir, 'finetune_curve.png'))
    print(format_table(rows, ['count', 'seed', 'status', 'success', 'success_new', 'success_old']))
    return EXIT_OK


def cmd_stream(args, cfg: ExperimentConfig) -> int:
    model, payload = load_checkpoint(args.checkpoint, device=cfg.train.device)
    samples = _samples(args)
    if args.clip_id:
        samples = [s for s in samples if s.clip_id == args.clip_id]
        if not samples:
            raise ValidationError(f"clip '{args.clip_id}' not in manifest")
    runner = StreamRunner(model, args.n, args.stride, cfg.preprocess)

    if args.serve:
        serve_stream(runner, samples, args.port)
        return EXIT_OK

    output = {'n': args.n, 'stride': args.stride, 'clips': []}
    sequences = []
    for sample in samples:
        sample = sample.load()
        state = runner.run(sample)
        output['clips'].append({
            'clip_id': sample.clip_id,
            'predictions': [[p.start, payload['class_names'][p.label]] for p in state.history],
            'fps': state.fps if state.history else None,
            'notice': None if state.history else f"fewer than {args.n} frames; no prediction",
        })
        if 'segments' in sample.metadata:
            sequences.append((state.history, sample.metadata['segments']))
    if sequences:
        output['sequence_accuracy'] = sequence_accuracy(sequences)
        logger.info(f"Sequence accuracy over {len(sequences)} sequences: {output['sequence_accuracy']:.3f}")
    if args.fps_table and samples:
        output['fps_table'] = fps_table(model, samples[0], _ints(args.fps_windows), cfg.preprocess)
        print(format_table(output['fps_table'], ['label', 'windows', 'fps', 'memory_mb']))
    write_json(os.path.join(args.out_dir, 'stream.json'), output)
    return EXIT_OK


def cmd_robustness(args, cfg: ExperimentConfig) -> int:
    model, payload = load_checkpoint(args.checkpoint, device=cfg.train.device)
    names = payload['class_names']
    synth = cfg.synth
    classes = [CLASS_NAMES.index(n) for n in names]
    items = benchmark_items(args.count, synth.seed + 1, classes, synth.distance_range, synth.environments,
                            (0.0, 0.0, 1.0), synth.frame_count)

    conditions = [('clutter', level, DegradationConfig(clutter=level)) for level in config.CLUTTER_PRESETS]
    conditions += [('degradation', name, DegradationConfig.preset(name)) for name in config.DEGRADATION_PRESETS]
    rows = []
    for kind, name, deg in conditions:
        try:
            clips = select_classes([preprocess(render_item(item, deg), cfg.preprocess) for item in items], names)
            rows.append({'kind': kind, 'condition': name, 'status': 'ok',
                         'success_rate': success_rate(model, clips)})
        except DigNetError as e:
            logger.error(f"Condition {kind}={name} failed: {e}")
            rows.append({'kind': kind, 'condition': name, 'status': 'failed', 'error': str(e)})
    write_json(os.path.join(args.out_dir, 'robustness.json'), rows)
    print(format_table(rows, ['kind', 'condition', 'status', 'success_rate']))
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="DiG-Net hyper-range gesture recognition harness")
    parser.add_argument('--config', help="experiment config JSON (schema_version 1)")
    parser.add_argument('--seed', type=int, help="override every seed in the config")
    parser.add_argument('--out-dir', default=config.OUTPUT_DIR)
    parser.add_argument('--workers', type=int, default=1)
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('synth', help="generate a synthetic benchmark")
    p.add_argument('--count', type=int)
    p.add_argument('--classes', help="class names or all/dynamic/static, comma separated")
    p.add_argument('--degradation', choices=sorted(config.DEGRADATION_PRESETS))
    p.add_argument('--clutter', choices=sorted(config.CLUTTER_PRESETS))
    p.add_argument('--sequences', type=int, default=0, help="also write N gesture sequences")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser('prepare', help="preprocess a manifest into a processed-clip store")
    p.add_argument('--manifest', required=True)
    p.add_argument('--store')
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser('train', help="train a model")
    p.add_argument('--manifest')
    p.add_argument('--store', help="processed-clip store instead of a raw manifest")
    p.add_argument('--classes', help="restrict to these classes (e.g. dynamic)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser('eval', help="evaluate a checkpoint")
    p.add_argument('--checkpoint', required=True)
    p.add_argument('--manifest', required=True)
    p.add_argument('--split', default='test')
    p.add_argument('--gss-window', type=int, default=config.STREAM_WINDOW_LENGTH)
    p.add_argument('--gss-stride', type=int, default=1, help="0 skips the stability score")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser('ablate', help="train and evaluate ablation variants")
    p.add_argument('--manifest', required=True)
    p.add_argument('--variants', help=f"comma separated subset of {config.ABLATION_VARIANTS}")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser('sweep-frames', help="success rate against window length n")
    p.add_argument('--manifest', required=True)
    p.add_argument('--n', default='1,8,16,32,84')
    p.set_defaults(func=cmd_sweep_frames)

    p = sub.add_parser('sweep-data', help="success rate against training-set size")
    p.add_argument('--manifest', required=True)
    p.add_argument('--fractions', default=','.join(str(f) for f in config.DATA_SWEEP_FRACTIONS))
    p.add_argument('--repeats', type=int, default=config.DATA_SWEEP_REPEATS)
    p.set_defaults(func=cmd_sweep_data)

    p = sub.add_parser('finetune', help="extend a checkpoint to the classes it lacks")
    p.add_argument('--checkpoint', required=True)
    p.add_argument('--manifest', required=True)
    p.add_argument('--counts', default=','.join(str(c) for c in config.FINETUNE_CLIP_COUNTS))
    p.add_argument('--seeds', default='0,1,2')
    p.add_argument('--new-classes', help="classes to add, comma separated (default: every missing class)")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser('stream', help="sliding-window streaming inference")
    p.add_argument('--checkpoint', required=True)
    p.add_argument('--manifest', required=True)
    p.add_argument('--clip-id')
    p.add_argument('--n', type=int, default=config.STREAM_WINDOW_LENGTH)
    p.add_argument('--stride', type=int, default=1)
    p.add_argument('--fps-table', action='store_true')
    p.add_argument('--fps-windows', default=','.join(str(n) for n in config.STREAM_FPS_WINDOWS))
    p.add_argument('--serve', action='store_true', help="run in the background behind /health and /status")
    p.add_argument('--port', type=int, default=config.STREAM_SERVICE_PORT)
    p.set_defaults(func=cmd_stream)

    p = sub.add_parser('robustness', help="success rate under each clutter and degradation preset")
    p.add_argument('--checkpoint', required=True)
    p.add_argument('--count', type=int, default=130)
    p.set_defaults(func=cmd_robustness)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(
        level=getattr(logging, config.LOG_LEVEL, logging.INFO),
        format=config.LOG_FORMAT,
        handlers=[logging.StreamHandler()]
    )
    args = build_parser().parse_args(argv)
    try:
        cfg = load_experiment_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        if args.command == 'train' and not (args.manifest or args.store):
            raise ValidationError("train needs --manifest or --store")
        os.makedirs(args.out_dir, exist_ok=True)
        return args.func(args, cfg)
    except DigNetError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return exit_code_for(e)
    except Exception as e:
        logger.exception(f"Unexpected failure: {e}")
        return exit_code_for(e)


if __name__ == "__main__":
    sys.exit(main())
