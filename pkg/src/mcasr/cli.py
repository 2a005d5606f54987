"""Command-line interface: dataset generation, training, evaluation, ablation,
parameter counting, and gradient checking.

Exit codes: 0 success, 2 config error, 3 I/O error, 4 numeric failure.
Failures print one machine-readable JSON object to stderr. The ``MCX_LOG``
environment variable sets the log level (e.g. ``MCX_LOG=debug``).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import configio
from .decoding import evaluate_dataset, run_ablation
from .errors import ConfigError, DataError, InputError, TrainingError
from .frontend import build_dataset, read_manifest
from .gradcheck import check_gradients
from .model import (
    ModelConfig,
    MultiChannelTransformer,
    ParameterStore,
    count_parameters,
    label_smoothed_loss,
    parameter_breakdown,
)
from .training import train_loop
from .util import sha256_file, substream

log = logging.getLogger("mcasr.cli")

GRADCHECK_TOLERANCE = 1e-4

_TOY_MODEL = dict(
    num_channels=2, d_model=8, d_ff=16, n_heads=2, n_enc_layers=1, n_dec_layers=1,
    vocab_size=6, f_mag=10, f_pha=6,
)


def _setup_logging() -> None:
    level = os.environ.get("MCX_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")


def _write_run_manifest(out_dir: Path, command: str, config_path, cfg: dict, args) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "argv": sys.argv[1:],
        "config_path": str(config_path),
        "config_sha256": sha256_file(config_path),
        "resolved_config": cfg,
        "seed": args.seed,
    }
    with open(out_dir / "run_manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, default=str)


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(args) -> int:
    cfg = configio.load_config(args.config)
    scene = configio.scene_config(cfg, seed_override=args.seed)
    n_utt, ratios = configio.dataset_size(cfg)
    out_dir = Path(args.out)
    _write_run_manifest(out_dir, "gen", args.config, cfg, args)
    paths = build_dataset(scene, n_utt, ratios, out_dir)
    print(json.dumps({name: str(p) for name, p in paths.items()}))
    return 0


def cmd_train(args) -> int:
    cfg = configio.load_config(args.config)
    model_cfg = configio.model_config(cfg)
    run_cfg = configio.train_run_config(cfg, seed_override=args.seed)
    out_dir = Path(args.out)
    _write_run_manifest(out_dir, "train", args.config, cfg, args)
    summary = train_loop(model_cfg, run_cfg, args.data, out_dir)
    summary.pop("metrics", None)
    print(json.dumps(summary))
    return 0


def cmd_eval(args) -> int:
    store = ParameterStore.load(args.checkpoint)
    model = MultiChannelTransformer(store.cfg, store)
    manifest = Path(args.data) / f"{args.split}.jsonl"
    entries = read_manifest(manifest)
    if not entries:
        raise DataError(f"no utterances in {manifest}")
    report = evaluate_dataset(model, entries, args.data, beam_size=args.beam)
    payload = report.to_dict()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            json.dump(payload, f, indent=2)
    print(json.dumps({"corpus_wer": payload["corpus_wer"],
                      "reference_tokens": payload["reference_tokens"],
                      "utterances": len(payload["per_utterance"])}))
    return 0


def cmd_ablate(args) -> int:
    cfg = configio.load_config(args.config)
    model_cfg = configio.model_config(cfg)
    run_cfg = configio.train_run_config(cfg, seed_override=args.seed)
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    if not seeds:
        raise ConfigError("--seeds must list at least one integer")
    out_dir = Path(args.out)
    _write_run_manifest(out_dir, "ablate", args.config, cfg, args)
    summary = run_ablation(args.data, model_cfg, run_cfg, seeds, out_dir)
    print(json.dumps({"mean_wer": summary["mean_wer"],
                      "mean_werr_vs_full": summary["mean_werr_vs_full"],
                      "csv_path": summary["csv_path"]}))
    return 0


def cmd_params(args) -> int:
    cfg = configio.load_config(args.config)
    model_cfg = configio.model_config(cfg)
    total = count_parameters(model_cfg)
    breakdown = parameter_breakdown(model_cfg)
    assert breakdown["total"] == total
    print(json.dumps({"total": total, "millions": round(total / 1e6, 2),
                      "breakdown": breakdown}))
    return 0


def cmd_gradcheck(args) -> int:
    if args.config:
        cfg = configio.load_config(args.config)
        model_cfg = configio.model_config(cfg)
    else:
        model_cfg = ModelConfig(**_TOY_MODEL)
    rng = substream(args.seed if args.seed is not None else 0, "gradcheck")
    model = MultiChannelTransformer(model_cfg, rng=rng)
    t_frames, n_tokens = 6, 4
    feats = [
        (rng.normal(size=(t_frames, model_cfg.f_mag)), rng.normal(size=(t_frames, model_cfg.f_pha)))
        for _ in range(model_cfg.num_channels)
    ]
    from .model import BOS_ID, EOS_ID, NUM_SPECIAL_TOKENS

    body = rng.integers(NUM_SPECIAL_TOKENS, model_cfg.vocab_size, size=n_tokens - 1)
    dec_input = np.concatenate([[BOS_ID], body])      # BOS + targets
    targets = np.concatenate([body, [EOS_ID]])        # targets + EOS

    def build_loss():
        logits = model.forward(feats, dec_input)
        return label_smoothed_loss(logits, targets, model_cfg.label_smoothing)

    max_err, records = check_gradients(
        build_loss,
        dict(model.params.items()),
        max_entries_per_tensor=args.samples,
        rng=rng,
    )
    ok = max_err < GRADCHECK_TOLERANCE
    print(json.dumps({"max_rel_err": max_err, "tolerance": GRADCHECK_TOLERANCE,
                      "entries_checked": len(records), "pass": ok}))
    if not ok:
        raise TrainingError(f"gradient check failed: max relative error {max_err:.3e}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mcasr",
        description="Multi-channel transformer ASR on synthetic microphone-array audio.",
    )
    parser.add_argument("--seed", type=int, default=None,
                        help="master seed overriding the config file seeds")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker-count cap for parallel sections")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--config", required=True, help="INI config path")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a model on a generated dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True, help="dataset directory from `gen`")
    p.add_argument("--out", required=True, help="run output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="decode a split and report WER")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=["train", "valid", "test"])
    p.add_argument("--beam", type=int, default=1)
    p.add_argument("--out", default=None, help="write the full report JSON here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train/evaluate full, CSA-only, CCA-only variants")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--seeds", required=True, help="comma-separated seed list")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("params", help="report the model parameter count")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("gradcheck", help="finite-difference gradient oracle report")
    p.add_argument("--config", default=None, help="optional config; defaults to a toy model")
    p.add_argument("--samples", type=int, default=2,
                   help="parameter entries sampled per tensor")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InputError) as e:
        print(json.dumps({"error": str(e), "type": type(e).__name__, "exit_code": 2}),
              file=sys.stderr)
        return 2
    except (DataError, OSError) as e:
        print(json.dumps({"error": str(e), "type": type(e).__name__, "exit_code": 3}),
              file=sys.stderr)
        return 3
    except (TrainingError, ArithmeticError) as e:
        print(json.dumps({"error": str(e), "type": type(e).__name__, "exit_code": 4}),
              file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
