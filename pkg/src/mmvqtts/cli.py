"""Command-line entry point: ``mmvqtts <subcommand> [--config F] [--seed N] [--store DIR]``.

Exit status is 0 on success, 1 when a stage fails (the stage is named on
stderr) and 2 on usage errors.
"""

from __future__ import annotations

import argparse
import base64
import logging
import sys
from pathlib import Path

from .errors import StageError, VQTTSError


def _global_flags(p: argparse.ArgumentParser, suppress: bool):
    default = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=default, help="config file (falls back to $VQTTS_CONFIG)")
    p.add_argument("--seed", type=int, default=default, help="override every seed in the config")
    p.add_argument("--store", default=default, help="override the feature store directory")
    p.add_argument("--log-file", default=default, help="also append log lines here")
    p.add_argument("-q", "--quiet", action="store_true", default=argparse.SUPPRESS if suppress else False)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mmvqtts", description="Multi-speaker multi-lingual VQ-token TTS pipeline")
    _global_flags(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_ in (("prepare", "extract features, align and score every utterance"),
                        ("select", "two-stage budgeted data selection and speaker profiles"),
                        ("train-sil", "train the silence predictor"),
                        ("train-am", "train txt2vec"),
                        ("train-voc", "train vec2wav")):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.add_argument("--force", action="store_true", help="ignore completion markers")

    sub.add_parser("run-all", parents=[common], help="every stage, then mono and cross demos per language")

    p = sub.add_parser("synth", parents=[common], help="synthesize one utterance")
    p.add_argument("--text", required=True)
    p.add_argument("--speaker", required=True)
    p.add_argument("--lang", required=True)
    p.add_argument("--native", help="native speaker for the acoustic model in cross-lingual mode")
    p.add_argument("--out", required=True, help="output wav path")
    p.add_argument("--trace", help="trace TSV path")
    p.add_argument("--server", help="base URL of a running `mmvqtts serve`; skips local model loading")

    p = sub.add_parser("make-toy", parents=[common], help="write the synthetic 6-speaker x 3-language corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n-per-speaker", type=int, default=16)
    p.add_argument("--toy-seed", type=int, default=0)

    p = sub.add_parser("serve", parents=[common], help="serve synthesis over HTTP")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    return parser


def _remote_synth(args) -> int:
    import httpx

    from .synthesis import SynthesisTrace

    r = httpx.post(args.server.rstrip("/") + "/synthesize", timeout=300.0,
                   json={"text": args.text, "speaker": args.speaker, "language": args.lang, "native": args.native})
    if r.status_code != 200:
        print(f"error: synth: server answered {r.status_code}: {r.text}", file=sys.stderr)
        return 1
    body = r.json()
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_bytes(base64.b64decode(body["wav_base64"]))
    if args.trace:
        Path(args.trace).write_text(SynthesisTrace(**body["trace"]).to_tsv(), encoding="utf-8")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)

    if args.command == "make-toy":
        from .toy import make_toy_corpus, write_toy_config

        utts = make_toy_corpus(args.out, args.n_per_speaker, args.toy_seed)
        cfg_path = write_toy_config(args.out)
        print(f"wrote {len(utts)} utterances and {cfg_path}")
        return 0
    if args.command == "synth" and args.server:
        return _remote_synth(args)

    from . import pipeline
    from .config import load_config

    try:
        cfg = load_config(args.config, seed=args.seed, store=args.store)
    except (OSError, ValueError) as e:
        print(f"error: config: {e}", file=sys.stderr)
        return 2
    pipeline.setup_logging(args.log_file, logging.WARNING if args.quiet else logging.INFO)

    try:
        if args.command == "prepare":
            pipeline.run_prepare(cfg, force=args.force)
        elif args.command == "select":
            pipeline.run_select(cfg, force=args.force)
        elif args.command == "train-sil":
            pipeline.run_train_sil(cfg, force=args.force)
        elif args.command == "train-am":
            pipeline.run_train_am(cfg, force=args.force)
        elif args.command == "train-voc":
            pipeline.run_train_voc(cfg, force=args.force)
        elif args.command == "run-all":
            pipeline.run_all(cfg)
        elif args.command == "synth":
            pipeline.run_synth(cfg, args.text, args.speaker, args.lang, args.native, args.out, args.trace)
        elif args.command == "serve":
            import uvicorn

            from .service import create_app

            uvicorn.run(create_app(pipeline.Synthesizer.load(cfg)), host=args.host, port=args.port)
    except StageError as e:
        print(f"error: stage {e.stage}: {e.message}", file=sys.stderr)
        return 1
    except VQTTSError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
