"""Operator command line: synth, train, eval, recommend, ablate.

Every command writes a run manifest next to its outputs, exits 0 on
success, 2 on usage errors, 3 on data errors and 4 on numeric failures,
and never leaves partially written output files behind.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import checkpoint as ckpt
from . import config as cfgmod
from . import data as datamod
from . import train as trainmod
from .errors import (
    AltrecoError,
    ContractError,
    DataError,
    DimensionError,
    NumericError,
    ParseError,
    VocabularyError,
)
from .losses import HuberConfig, JitterConfig, LossWeights
from .model import ModelConfig

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class _UsageError(AltrecoError):
    pass


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


def _file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(
    out_dir: Path,
    command: str,
    seed: Optional[int],
    config_obj,
    inputs: list[Path],
    outputs: list[Path],
    started: float,
) -> None:
    manifest = {
        "command": command,
        "seed": seed,
        "config_digest": hashlib.sha256(
            json.dumps(config_obj, sort_keys=True, default=str).encode("utf-8")
        ).hexdigest(),
        "inputs": {str(p): _file_digest(p) for p in inputs if p.is_file()},
        "outputs": [str(p) for p in outputs],
        "started": started,
        "finished": time.time(),
    }
    _atomic_write_text(out_dir / "manifest.json", json.dumps(manifest, indent=2) + "\n")


# ---------------------------------------------------------------------
# config-file parsing into package dataclasses
# ---------------------------------------------------------------------


def _section_value(sections: dict, section: str, key: str, parse, default):
    raw = sections.get(section, {}).get(key)
    if raw is None:
        return default
    try:
        return parse(raw)
    except (ValueError, ParseError) as exc:
        raise _UsageError(f"[{section}] {key}: {exc}") from exc


def _synth_spec_from(sections: dict) -> datamod.SyntheticSpec:
    required = ("num_users", "num_clusters", "num_images", "vocab_size", "feature_dim")
    synth = sections.get("synth", {})
    missing = [key for key in required if key not in synth]
    if missing:
        raise _UsageError(f"[synth] section is missing keys: {', '.join(missing)}")
    kwargs = {key: int(synth[key]) for key in required}
    lo = _section_value(sections, "synth", "tags_per_image_min", int, 3)
    hi = _section_value(sections, "synth", "tags_per_image_max", int, 8)
    kwargs["tags_per_image_range"] = (lo, hi)
    kwargs["cluster_tag_affinity"] = _section_value(
        sections, "synth", "cluster_tag_affinity", float, 0.6
    )
    kwargs["seed"] = _section_value(sections, "synth", "seed", int, 0)
    kwargs["feature_noise"] = _section_value(sections, "synth", "feature_noise", float, 0.5)
    return datamod.SyntheticSpec(**kwargs)


def _train_config_from(sections: dict) -> trainmod.TrainConfig:
    get = lambda key, parse, default: _section_value(sections, "train", key, parse, default)
    weights = LossWeights(
        personalized=_section_value(sections, "losses", "personalized", float, 1.0),
        generalized=_section_value(sections, "losses", "generalized", float, 1.0),
        reconstruction=_section_value(sections, "losses", "reconstruction", float, 1.0),
        adversarial=_section_value(sections, "losses", "adversarial", float, 1.0),
    )
    jitter = JitterConfig(
        presence_scale=_section_value(sections, "jitter", "presence_scale", float, 0.7),
        noise_range=_section_value(sections, "jitter", "noise_range", float, 0.3),
    )
    huber = HuberConfig(delta=_section_value(sections, "huber", "delta", float, 1.0))
    return trainmod.TrainConfig(
        batch_size=get("batch_size", int, 50),
        max_steps=get("max_steps", int, 2000),
        seed=get("seed", int, 0),
        loss_weights=weights,
        jitter=jitter,
        huber=huber,
        use_preference=get("use_preference", cfgmod.parse_bool, True),
        adversarial_mode=get("adversarial_mode", str, "independent"),
        joint_training=get("joint_training", cfgmod.parse_bool, True),
        cold_start_eval=get("cold_start_eval", cfgmod.parse_bool, False),
        reconstruction=get("reconstruction", str, "huber"),
        non_saturating_generator=get("non_saturating_generator", cfgmod.parse_bool, False),
        test_fraction=get("test_fraction", float, 0.2),
        early_stop=get("early_stop", cfgmod.parse_bool, False),
        checkpoint_interval=get("checkpoint_interval", int, 0),
    )


def _model_config_from(sections: dict, vocab_size: int, feature_dim: int) -> ModelConfig:
    get = lambda key, parse, default: _section_value(sections, "model", key, parse, default)
    return ModelConfig(
        vocab_size=vocab_size,
        feature_dim=feature_dim,
        visual_dim=get("visual_dim", int, 256),
        latent_dim=get("latent_dim", int, 128),
        visual_hidden=get("visual_hidden", int, 512),
        encoder_widths=get("encoder_widths", cfgmod.parse_int_list, (1024, 512, 256, 128)),
        decoder_widths=get("decoder_widths", cfgmod.parse_int_list, (128, 256, 512, 1024)),
        classifier_widths=get("classifier_widths", cfgmod.parse_int_list, (512, 512)),
        generator_widths=get("generator_widths", cfgmod.parse_int_list, (512, 512, 512)),
        discriminator_widths=get(
            "discriminator_widths", cfgmod.parse_int_list, (1024, 256, 64, 16)
        ),
        use_skip=get("use_skip", cfgmod.parse_bool, True),
    )


def _load_sections(path: Optional[str]) -> dict:
    if path is None:
        return {}
    config_path = Path(path)
    if not config_path.is_file():
        raise _UsageError(f"config file not found: {config_path}")
    return cfgmod.load_config(config_path)


def _corpus_inputs(corpus_dir: Path) -> list[Path]:
    return [
        corpus_dir / datamod.VOCABULARY_FILE,
        corpus_dir / datamod.INTERACTIONS_FILE,
        corpus_dir / datamod.FEATURES_FILE,
    ]


# ---------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------


def _cmd_synth(args) -> int:
    started = time.time()
    sections = _load_sections(args.spec)
    spec = _synth_spec_from(sections)
    seed = cfgmod.resolve_seed(spec.seed, args.seed)
    spec = replace(spec, seed=seed)
    corpus, _, _ = datamod.generate_synthetic(spec)
    out_dir = Path(args.out)
    datamod.save_corpus(out_dir, corpus)
    outputs = _corpus_inputs(out_dir)
    _write_manifest(out_dir, "synth", seed, spec.__dict__, [Path(args.spec)], outputs, started)
    print(f"wrote corpus with {len(corpus.samples)} samples, "
          f"{corpus.vocabulary.size} tags to {out_dir}")
    return EXIT_OK


def _cmd_train(args) -> int:
    started = time.time()
    sections = _load_sections(args.config)
    cfg = _train_config_from(sections)
    if args.ablation:
        cfg = cfg.with_ablation(args.ablation)
    seed = cfgmod.resolve_seed(cfg.seed, args.seed)
    overrides = {"seed": seed}
    if args.max_steps is not None:
        overrides["max_steps"] = args.max_steps
    if args.batch_size is not None:
        overrides["batch_size"] = args.batch_size
    cfg = replace(cfg, **overrides)

    corpus_dir = Path(args.corpus)
    corpus = datamod.load_corpus(corpus_dir)
    model_config = _model_config_from(sections, corpus.vocabulary.size, corpus.feature_dim)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    checkpoint_path = out_dir / "checkpoint.bin"
    cfg = replace(cfg, checkpoint_path=str(checkpoint_path))

    result = trainmod.train(corpus, cfg, model_config)
    report_path = out_dir / "train_report.txt"
    _atomic_write_text(report_path, "\n".join(result.report.to_lines()) + "\n")
    inputs = list(_corpus_inputs(corpus_dir))
    if args.config:
        inputs.append(Path(args.config))
    _write_manifest(
        out_dir, "train", seed, cfg.meta_dict(), inputs, [checkpoint_path, report_path], started
    )
    final = result.report.records[-1].values
    print(f"trained {len(result.report.records)} steps; "
          f"final total loss {final['total']:.4f}; checkpoint at {checkpoint_path}")
    return EXIT_OK


def _load_checkpoint_for_corpus(path: str, corpus: datamod.Corpus) -> ckpt.LoadedCheckpoint:
    loaded = ckpt.load_model_checkpoint(path)
    config = loaded.model.config
    if config.vocab_size != corpus.vocabulary.size:
        raise DimensionError(
            f"checkpoint expects {config.vocab_size} tags, corpus has {corpus.vocabulary.size}"
        )
    if corpus.samples and config.feature_dim != corpus.feature_dim:
        raise DimensionError(
            f"checkpoint expects {config.feature_dim}-dim features, "
            f"corpus has {corpus.feature_dim}"
        )
    return loaded


def _split_from_meta(corpus: datamod.Corpus, meta: dict):
    seed = int(meta.get("seed", 0))
    fraction = float(meta.get("test_fraction", 0.2))
    return trainmod.split_corpus(corpus.samples, seed, fraction)


def _cmd_eval(args) -> int:
    started = time.time()
    corpus = datamod.load_corpus(Path(args.corpus))
    loaded = _load_checkpoint_for_corpus(args.checkpoint, corpus)
    ks = cfgmod.parse_int_list(args.ks)
    if not ks:
        raise _UsageError("at least one k is required")

    _, test_samples = _split_from_meta(corpus, loaded.train_meta)
    test_ids = frozenset(s.image_id for s in test_samples)
    histories = datamod.build_histories(corpus.samples, corpus.vocabulary.size, exclude=test_ids)
    report = trainmod.evaluate(
        loaded.model, test_samples, histories, ks=ks, cold_start=args.cold_start
    )
    table = report.to_table()
    print(table)
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        report_path = out_dir / "metrics.txt"
        _atomic_write_text(
            report_path, table + "\n\n" + "\n".join(report.to_records()) + "\n"
        )
        _write_manifest(
            out_dir,
            "eval",
            int(loaded.train_meta.get("seed", 0)),
            {"ks": list(ks), "cold_start": args.cold_start},
            _corpus_inputs(Path(args.corpus)) + [Path(args.checkpoint)],
            [report_path],
            started,
        )
    return EXIT_OK


def _cmd_recommend(args) -> int:
    corpus = datamod.load_corpus(Path(args.corpus))
    loaded = _load_checkpoint_for_corpus(args.checkpoint, corpus)
    model = loaded.model
    vocabulary = corpus.vocabulary

    if args.image_id:
        matches = [s for s in corpus.samples if s.image_id == args.image_id]
        if not matches:
            raise DataError(f"unknown image id {args.image_id!r}")
        features = matches[0].features
    elif args.features_file:
        table = datamod.decode_features(Path(args.features_file).read_bytes(),
                                        source=args.features_file)
        if len(table) != 1:
            raise DataError(
                f"{args.features_file}: expected exactly 1 record, found {len(table)}"
            )
        features = next(iter(table.values()))
    else:
        raise _UsageError("one of --image-id or --features-file is required")

    if args.history_tags is not None:
        tags = [t for t in args.history_tags.split(",") if t]
        history = datamod.history_from_tags(
            [vocabulary.index(t) for t in tags], vocabulary.size
        )
    elif args.user_id is not None:
        _, test_samples = _split_from_meta(corpus, loaded.train_meta)
        test_ids = frozenset(s.image_id for s in test_samples)
        history = datamod.build_user_history(
            corpus.samples, args.user_id, vocabulary.size, exclude=test_ids
        ).vector
    else:
        history = np.zeros(vocabulary.size)  # cold start

    from .tensor import Tensor

    outputs = model.full_forward(
        Tensor(features.reshape(1, -1)), Tensor(history.reshape(1, -1))
    )
    scores = outputs.personalized.data[0]
    from .metrics import top_k

    for tag_index in top_k(scores, args.k):
        print(f"{vocabulary.tag(tag_index)}\t{scores[tag_index]:.6f}")
    return EXIT_OK


def _cmd_ablate(args) -> int:
    started = time.time()
    sections = _load_sections(args.config)
    base_cfg = _train_config_from(sections)
    seed = cfgmod.resolve_seed(base_cfg.seed, args.seed)
    base_cfg = replace(base_cfg, seed=seed)
    if args.max_steps is not None:
        base_cfg = replace(base_cfg, max_steps=args.max_steps)

    corpus_dir = Path(args.corpus)
    corpus = datamod.load_corpus(corpus_dir)
    model_config = _model_config_from(sections, corpus.vocabulary.size, corpus.feature_dim)

    rows = trainmod.run_ablation_suite(corpus, base_cfg, model_config)
    table = trainmod.ablation_table(rows)
    print(table)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    table_path = out_dir / "ablations.txt"
    _atomic_write_text(table_path, table + "\n")
    inputs = list(_corpus_inputs(corpus_dir))
    if args.config:
        inputs.append(Path(args.config))
    _write_manifest(out_dir, "ablate", seed, base_cfg.meta_dict(), inputs, [table_path], started)
    return EXIT_OK


# ---------------------------------------------------------------------
# argument parsing and dispatch
# ---------------------------------------------------------------------

ABLATION_CHOICES = tuple(trainmod.ABLATIONS)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="altreco",
        description="Preference-aware adversarial tag recommendation experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic corpus")
    p_synth.add_argument("spec", help="config file with a [synth] section")
    p_synth.add_argument("out", help="output corpus directory")
    p_synth.add_argument("--seed", type=int, default=None)
    p_synth.set_defaults(handler=_cmd_synth)

    p_train = sub.add_parser("train", help="train a model on a corpus")
    p_train.add_argument("corpus", help="corpus directory")
    p_train.add_argument("out", help="output directory")
    p_train.add_argument("--config", default=None, help="config file")
    p_train.add_argument("--ablation", choices=sorted(ABLATION_CHOICES), default=None)
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--max-steps", type=int, default=None)
    p_train.add_argument("--batch-size", type=int, default=None)
    p_train.set_defaults(handler=_cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    p_eval.add_argument("checkpoint")
    p_eval.add_argument("corpus")
    p_eval.add_argument("--ks", default="3,5,10", help="comma-separated k values")
    p_eval.add_argument("--cold-start", action="store_true",
                        help="zero every user history during evaluation")
    p_eval.add_argument("--out", default=None, help="optional output directory")
    p_eval.set_defaults(handler=_cmd_eval)

    p_rec = sub.add_parser("recommend", help="top-k tags for one image")
    p_rec.add_argument("checkpoint")
    p_rec.add_argument("corpus")
    p_rec.add_argument("--image-id", default=None)
    p_rec.add_argument("--features-file", default=None)
    p_rec.add_argument("--history-tags", default=None,
                       help="comma-separated tags forming an ad-hoc history")
    p_rec.add_argument("--user-id", default=None)
    p_rec.add_argument("-k", type=int, default=5)
    p_rec.set_defaults(handler=_cmd_recommend)

    p_abl = sub.add_parser("ablate", help="train and tabulate the six study rows")
    p_abl.add_argument("corpus")
    p_abl.add_argument("out")
    p_abl.add_argument("--config", default=None)
    p_abl.add_argument("--seed", type=int, default=None)
    p_abl.add_argument("--max-steps", type=int, default=None)
    p_abl.set_defaults(handler=_cmd_ablate)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ContractError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, VocabularyError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DimensionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
