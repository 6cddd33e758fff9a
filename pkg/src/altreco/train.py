"""End-to-end training with alternating discriminator updates, the
ablation grid of the evaluation study, and the experiment drivers.

Each training step has two phases: the discriminator first sees
jittered ground-truth vectors against detached generated tags and takes
one update; the main networks then minimise the weighted total loss
while the discriminator's parameters stay untouched.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import losses as L
from .checkpoint import save_model_checkpoint
from .config import subsystem_rng
from .data import Corpus, Sample, build_histories, history_from_tags
from .errors import ContractError, NumericError
from .metrics import MetricsReport, PredictionSet, compute_report, rank_all, top_k
from .model import ForwardOutputs, ModelConfig, TagModel
from .nn import ParamRegistry
from .optim import Adadelta
from .tensor import Tape, Tensor

ADVERSARIAL_MODES = ("off", "independent", "personalized")
RECONSTRUCTION_MODES = ("huber", "mse")

#: Flag presets matching the rows of the ablation study.  A4 is not a
#: separate training run: it re-evaluates the A6 model with zeroed
#: histories.
ABLATIONS = {
    "A1": dict(use_preference=False, adversarial_mode="off", joint_training=False,
               cold_start_eval=False),
    "A2": dict(use_preference=True, adversarial_mode="off", joint_training=True,
               cold_start_eval=False),
    "A3": dict(use_preference=True, adversarial_mode="independent", joint_training=False,
               cold_start_eval=False),
    "A4": dict(use_preference=True, adversarial_mode="independent", joint_training=True,
               cold_start_eval=True),
    "A5": dict(use_preference=True, adversarial_mode="personalized", joint_training=True,
               cold_start_eval=False),
    "A6": dict(use_preference=True, adversarial_mode="independent", joint_training=True,
               cold_start_eval=False),
}


@dataclass
class TrainConfig:
    batch_size: int = 50
    max_steps: int = 2000
    seed: int = 0
    loss_weights: L.LossWeights = field(default_factory=L.LossWeights)
    jitter: L.JitterConfig = field(default_factory=L.JitterConfig)
    huber: L.HuberConfig = field(default_factory=L.HuberConfig)
    use_preference: bool = True
    adversarial_mode: str = "independent"
    joint_training: bool = True
    cold_start_eval: bool = False
    reconstruction: str = "huber"
    non_saturating_generator: bool = False
    test_fraction: float = 0.2
    early_stop: bool = False
    checkpoint_interval: int = 0
    checkpoint_path: Optional[str] = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ContractError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_steps < 1:
            raise ContractError(f"max_steps must be >= 1, got {self.max_steps}")
        if self.adversarial_mode not in ADVERSARIAL_MODES:
            raise ContractError(f"unknown adversarial_mode {self.adversarial_mode!r}")
        if self.reconstruction not in RECONSTRUCTION_MODES:
            raise ContractError(f"unknown reconstruction {self.reconstruction!r}")
        if self.adversarial_mode == "personalized" and not self.use_preference:
            raise ContractError("adversarial_mode='personalized' requires use_preference")
        if not 0.0 < self.test_fraction < 1.0:
            raise ContractError(f"test_fraction must be in (0, 1), got {self.test_fraction}")

    def with_ablation(self, name: str) -> "TrainConfig":
        if name not in ABLATIONS:
            raise ContractError(f"unknown ablation {name!r}, expected one of {sorted(ABLATIONS)}")
        return replace(self, **ABLATIONS[name])

    def meta_dict(self) -> dict:
        return {
            "batch_size": self.batch_size,
            "max_steps": self.max_steps,
            "seed": self.seed,
            "use_preference": self.use_preference,
            "adversarial_mode": self.adversarial_mode,
            "joint_training": self.joint_training,
            "cold_start_eval": self.cold_start_eval,
            "reconstruction": self.reconstruction,
            "test_fraction": self.test_fraction,
        }


LOSS_NAMES = ("personalized", "generalized", "reconstruction", "adversarial",
              "discriminator", "disc_real", "disc_fake", "total")


@dataclass
class StepRecord:
    step: int
    values: dict  # loss name -> float, absent terms omitted


@dataclass
class TrainReport:
    records: list
    wall_seconds: float = 0.0
    checkpoint_path: Optional[str] = None

    def series(self, name: str) -> list[float]:
        return [r.values[name] for r in self.records if name in r.values]

    def to_lines(self) -> list[str]:
        """Deterministic ``step<TAB>loss<TAB>value`` records plus a
        trailing summary block (wall-clock time is deliberately left
        out so identical runs serialize identically)."""
        lines = []
        for record in self.records:
            for name in LOSS_NAMES:
                if name in record.values:
                    lines.append(f"{record.step}\t{name}\t{record.values[name]!r}")
        for name in LOSS_NAMES:
            series = self.series(name)
            if series:
                tail = series[-20:]
                lines.append(f"summary\t{name}_last20_mean\t{sum(tail) / len(tail)!r}")
        return lines


@dataclass
class TrainResult:
    model: TagModel
    report: TrainReport
    optimizer_main: Adadelta
    optimizer_disc: Adadelta
    train_samples: list
    test_samples: list
    histories: dict


def split_corpus(
    samples: Sequence[Sample], seed: int, test_fraction: float
) -> tuple[list, list]:
    """Deterministic train/test split driven by the master seed."""
    order = subsystem_rng(seed, "split").permutation(len(samples))
    n_test = max(1, int(round(len(samples) * test_fraction)))
    test_idx = set(int(i) for i in order[:n_test])
    train = [s for i, s in enumerate(samples) if i not in test_idx]
    test = [s for i, s in enumerate(samples) if i in test_idx]
    return train, test


def _batch_arrays(
    batch: Sequence[Sample],
    histories: dict,
    vocab_size: int,
    use_history: bool,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    features = np.stack([s.features for s in batch])
    labels = np.zeros((len(batch), vocab_size))
    for row, sample in enumerate(batch):
        for tag in sample.tags:
            labels[row, tag] = 1.0
    history = np.zeros((len(batch), vocab_size))
    if use_history:
        for row, sample in enumerate(batch):
            user = histories.get(sample.user_id)
            if user is not None:
                history[row] = user.vector
    return features, history, labels


def _check_loss(name: str, value: Tensor, step: int) -> float:
    scalar = value.item()
    if not math.isfinite(scalar):
        raise NumericError(f"loss '{name}' is not finite at step {step}")
    return scalar


def _reconstruction_loss(outputs: ForwardOutputs, history: Tensor, cfg: TrainConfig) -> Tensor:
    if cfg.reconstruction == "mse":
        return L.squared_reconstruction(outputs.history_recon, history)
    return L.huber_reconstruction(outputs.history_recon, history, cfg.huber)


def train_step(
    model: TagModel,
    batch: Sequence[Sample],
    cfg: TrainConfig,
    opt_main: Adadelta,
    opt_disc: Adadelta,
    histories: dict,
    rng_jitter: np.random.Generator,
    step: int = 0,
    active_prefixes: Optional[frozenset] = None,
    train_reconstruction: bool = True,
) -> StepRecord:
    """One alternating update: discriminator phase, then main phase.

    ``active_prefixes`` limits which main sub-networks actually move
    (others get their gradients zeroed before the update); None means
    every main network trains.
    """
    features_arr, history_arr, labels_arr = _batch_arrays(
        batch, histories, model.config.vocab_size, cfg.use_preference
    )
    features = Tensor(features_arr)
    history = Tensor(history_arr)
    labels = Tensor(labels_arr)
    values: dict[str, float] = {}
    model.clear_grads()

    if cfg.adversarial_mode != "off":
        # Discriminator phase: detached fakes, jittered reals, update D only.
        if cfg.adversarial_mode == "personalized":
            fake = model.classify_personalized(
                model.visual_encode(features), model.preference_encode(history)[0]
            ).detach()
        else:
            fake = model.generate_tags(model.visual_encode(features)).detach()
        real = Tensor(L.jitter_ground_truth(labels_arr, cfg.jitter, rng_jitter))
        with Tape() as tape:
            real_scores = model.discriminate(real)
            fake_scores = model.discriminate(fake)
            disc_loss = L.discriminator_loss(real_scores, fake_scores)
            values["discriminator"] = _check_loss("discriminator", disc_loss, step)
            values["disc_real"] = float(real_scores.data.mean())
            values["disc_fake"] = float(fake_scores.data.mean())
            tape.backward(disc_loss)
        opt_disc.step()

    # Main phase: full forward, weighted total, update the main networks.
    with Tape() as tape:
        outputs = model.full_forward(features, history)
        personalized = L.bce_multilabel(outputs.personalized, labels)
        values["personalized"] = _check_loss("personalized", personalized, step)
        generalized = L.bce_multilabel(outputs.generalized, labels)
        values["generalized"] = _check_loss("generalized", generalized, step)

        reconstruction = None
        if cfg.use_preference and train_reconstruction:
            reconstruction = _reconstruction_loss(outputs, history, cfg)
            values["reconstruction"] = _check_loss("reconstruction", reconstruction, step)

        adversarial = None
        if cfg.adversarial_mode != "off":
            target = (
                outputs.personalized
                if cfg.adversarial_mode == "personalized"
                else outputs.generalized
            )
            adversarial = L.adversarial_generator_loss(
                model.discriminate(target), non_saturating=cfg.non_saturating_generator
            )
            values["adversarial"] = _check_loss("adversarial", adversarial, step)

        total = L.total_loss(
            personalized, generalized, reconstruction, adversarial, cfg.loss_weights
        )
        values["total"] = _check_loss("total", total, step)
        tape.backward(total)

    _freeze_inactive(model.params, active_prefixes)
    opt_main.step()
    model.disc_params.clear_grads()  # adversarial term grazes D; discard
    return StepRecord(step=step, values=values)


def _freeze_inactive(params: ParamRegistry, active_prefixes: Optional[frozenset]) -> None:
    """Zero the gradients of sub-networks that must not move this phase,
    and of parameters a gated-off loss left untouched."""
    for name, param in params.items():
        prefix = name.split(".", 1)[0]
        inactive = active_prefixes is not None and prefix not in active_prefixes
        if inactive or param.grad is None:
            param.grad = np.zeros_like(param.data)


def _improvement_stalled(series: list[float], window: int = 100, tol: float = 1e-3) -> bool:
    if len(series) < 2 * window:
        return False
    recent = sum(series[-window:]) / window
    previous = sum(series[-2 * window : -window]) / window
    if previous == 0.0:
        return True
    return (previous - recent) / abs(previous) < tol


class _BatchStream:
    """Seeded epoch reshuffling; partial final batches are kept."""

    def __init__(self, samples: Sequence[Sample], batch_size: int, seed: int):
        self._samples = list(samples)
        self._batch_size = batch_size
        self._rng = subsystem_rng(seed, "shuffle")
        self._queue: list[Sample] = []

    def next_batch(self) -> list:
        if not self._queue:
            order = self._rng.permutation(len(self._samples))
            self._queue = [self._samples[int(i)] for i in order]
        batch = self._queue[: self._batch_size]
        self._queue = self._queue[self._batch_size :]
        return batch


def train(
    corpus: Corpus,
    cfg: TrainConfig,
    model_config: Optional[ModelConfig] = None,
) -> TrainResult:
    """Full training run over a corpus.

    The split, the histories (train images only), the parameter init,
    the batch order and the jitter draws all derive deterministically
    from ``cfg.seed``.
    """
    started = time.monotonic()
    if model_config is None:
        model_config = ModelConfig(
            vocab_size=corpus.vocabulary.size, feature_dim=corpus.feature_dim
        )
    if model_config.vocab_size != corpus.vocabulary.size:
        raise ContractError(
            f"model expects {model_config.vocab_size} tags, corpus has {corpus.vocabulary.size}"
        )
    train_samples, test_samples = split_corpus(corpus.samples, cfg.seed, cfg.test_fraction)
    test_ids = frozenset(s.image_id for s in test_samples)
    histories = build_histories(corpus.samples, corpus.vocabulary.size, exclude=test_ids)

    model = TagModel(model_config, subsystem_rng(cfg.seed, "init"))
    opt_main = Adadelta(model.params)
    opt_disc = Adadelta(model.disc_params)
    rng_jitter = subsystem_rng(cfg.seed, "jitter")
    stream = _BatchStream(train_samples, cfg.batch_size, cfg.seed)

    records: list[StepRecord] = []
    step = 0

    if not cfg.joint_training and cfg.use_preference:
        # Two-phase schedule: bring the history autoencoder to
        # convergence on reconstruction alone, freeze it, then train the
        # rest on the remaining budget.
        phase_cap = cfg.max_steps // 2
        recon_series: list[float] = []
        while step < phase_cap:
            batch = stream.next_batch()
            record = _autoencoder_step(model, batch, cfg, opt_main, histories, step)
            records.append(record)
            recon_series.append(record.values["reconstruction"])
            step += 1
            if _improvement_stalled(recon_series):
                break
        active = frozenset(("f", "c", "g"))
        train_recon = False
    else:
        active = None
        train_recon = cfg.use_preference

    total_series: list[float] = []
    while step < cfg.max_steps:
        batch = stream.next_batch()
        record = train_step(
            model,
            batch,
            cfg,
            opt_main,
            opt_disc,
            histories,
            rng_jitter,
            step=step,
            active_prefixes=active,
            train_reconstruction=train_recon,
        )
        records.append(record)
        total_series.append(record.values["total"])
        step += 1
        if cfg.checkpoint_path and cfg.checkpoint_interval and step % cfg.checkpoint_interval == 0:
            save_model_checkpoint(
                cfg.checkpoint_path, model, opt_main, opt_disc, cfg.meta_dict()
            )
        if cfg.early_stop and _improvement_stalled(total_series):
            break

    report = TrainReport(records=records, wall_seconds=time.monotonic() - started)
    if cfg.checkpoint_path:
        save_model_checkpoint(cfg.checkpoint_path, model, opt_main, opt_disc, cfg.meta_dict())
        report.checkpoint_path = cfg.checkpoint_path
    return TrainResult(
        model=model,
        report=report,
        optimizer_main=opt_main,
        optimizer_disc=opt_disc,
        train_samples=train_samples,
        test_samples=test_samples,
        histories=histories,
    )


def _autoencoder_step(
    model: TagModel,
    batch: Sequence[Sample],
    cfg: TrainConfig,
    opt_main: Adadelta,
    histories: dict,
    step: int,
) -> StepRecord:
    """Reconstruction-only pre-training step for the non-joint schedule."""
    _, history_arr, _ = _batch_arrays(batch, histories, model.config.vocab_size, True)
    history = Tensor(history_arr)
    model.clear_grads()
    with Tape() as tape:
        preference, skips = model.preference_encode(history)
        recon = model.preference_decode(preference, skips)
        if cfg.reconstruction == "mse":
            loss = L.squared_reconstruction(recon, history)
        else:
            loss = L.huber_reconstruction(recon, history, cfg.huber)
        value = _check_loss("reconstruction", loss, step)
        tape.backward(loss)
    _freeze_inactive(model.params, frozenset(("ue", "ud")))
    opt_main.step()
    return StepRecord(step=step, values={"reconstruction": value, "total": value})


# ---------------------------------------------------------------------
# evaluation and experiments
# ---------------------------------------------------------------------


def predict_rankings(
    model: TagModel,
    samples: Sequence[Sample],
    histories: dict,
    cold_start: bool = False,
    batch_size: int = 256,
) -> list[PredictionSet]:
    """Full tag rankings for each sample from the personalized head."""
    preds: list[PredictionSet] = []
    for start in range(0, len(samples), batch_size):
        batch = samples[start : start + batch_size]
        features_arr, history_arr, _ = _batch_arrays(
            batch, histories, model.config.vocab_size, use_history=not cold_start
        )
        outputs = model.full_forward(Tensor(features_arr), Tensor(history_arr))
        scores = outputs.personalized.data
        for row, sample in enumerate(batch):
            preds.append(
                PredictionSet(ground_truth=frozenset(sample.tags), ranking=rank_all(scores[row]))
            )
    return preds


def evaluate(
    model: TagModel,
    samples: Sequence[Sample],
    histories: dict,
    ks: Sequence[int] = (3, 5, 10),
    cold_start: bool = False,
) -> MetricsReport:
    preds = predict_rankings(model, samples, histories, cold_start=cold_start)
    return compute_report(preds, ks)


@dataclass
class AblationRow:
    name: str
    flags: dict
    metrics: dict  # k -> {"P": .., "R": .., "Acc": ..}


def run_ablation_suite(
    corpus: Corpus,
    base_cfg: TrainConfig,
    model_config: Optional[ModelConfig] = None,
    ks: Sequence[int] = (3, 5, 10),
) -> list[AblationRow]:
    """Train and evaluate the six study configurations.

    A4 is the A6 model re-evaluated with zeroed histories, so five
    training runs produce the six rows.
    """
    results: dict[str, TrainResult] = {}
    for name in ("A1", "A2", "A3", "A5", "A6"):
        results[name] = train(corpus, base_cfg.with_ablation(name), model_config)

    rows = []
    for name in ("A1", "A2", "A3", "A4", "A5", "A6"):
        source = results["A6"] if name == "A4" else results[name]
        flags = ABLATIONS[name]
        report = evaluate(
            source.model,
            source.test_samples,
            source.histories,
            ks=ks,
            cold_start=flags["cold_start_eval"],
        )
        metrics = {
            k: {m: report.rows[k][m] for m in ("P", "R", "Acc")} for k in report.ks
        }
        rows.append(AblationRow(name=name, flags=flags, metrics=metrics))
    return rows


def ablation_table(rows: Sequence[AblationRow], ks: Sequence[int] = (3, 5, 10)) -> str:
    header = ["row", "UP", "Adv-I", "Adv-P", "Joint", "Cold"]
    for metric in ("P", "R", "Acc"):
        header += [f"{metric}@{k}" for k in ks]
    table = [header]
    for row in rows:
        mode = row.flags["adversarial_mode"]
        cells = [
            row.name,
            "x" if row.flags["use_preference"] else "-",
            "x" if mode == "independent" else "-",
            "x" if mode == "personalized" else "-",
            "x" if row.flags["joint_training"] else "-",
            "x" if row.flags["cold_start_eval"] else "-",
        ]
        for metric in ("P", "R", "Acc"):
            cells += [f"{row.metrics[k][metric]:.4f}" for k in ks]
        table.append(cells)
    widths = [max(len(line[i]) for line in table) for i in range(len(header))]
    return "\n".join(
        "  ".join(cell.rjust(widths[i]) for i, cell in enumerate(line)) for line in table
    )


def recommend(
    model: TagModel, features: np.ndarray, history_vector: np.ndarray, k: int
) -> list[int]:
    """Top-k tag indices for one image under one history vector."""
    outputs = model.full_forward(
        Tensor(np.asarray(features, dtype=np.float64).reshape(1, -1)),
        Tensor(np.asarray(history_vector, dtype=np.float64).reshape(1, -1)),
    )
    return top_k(outputs.personalized.data[0], k)


def rank_for_cold_start(model: TagModel, features: np.ndarray, k: int) -> list[int]:
    return recommend(model, features, np.zeros(model.config.vocab_size), k)


def run_dynamic_history(
    model: TagModel,
    features: np.ndarray,
    history_stages: Sequence,
    k: int,
) -> list[list[int]]:
    """Top-k recommendations for one image as the history grows.

    Each stage is an iterable of tag indices; stage 0 is typically empty
    (cold start).  Every listed tag counts once, so present entries
    normalize to 1.
    """
    vocab_size = model.config.vocab_size
    return [
        recommend(model, features, history_from_tags(stage, vocab_size), k)
        for stage in history_stages
    ]


def topk_flip_fraction(
    model: TagModel,
    samples: Sequence[Sample],
    history_a: np.ndarray,
    history_b: np.ndarray,
    k: int,
) -> float:
    """Fraction of samples whose top-k set changes between two histories."""
    features_arr = np.stack([s.features for s in samples])
    features = Tensor(features_arr)
    flips = 0
    rows_a = model.full_forward(
        features, Tensor(np.tile(history_a, (len(samples), 1)))
    ).personalized.data
    rows_b = model.full_forward(
        features, Tensor(np.tile(history_b, (len(samples), 1)))
    ).personalized.data
    for row in range(len(samples)):
        if set(top_k(rows_a[row], k)) != set(top_k(rows_b[row], k)):
            flips += 1
    return flips / len(samples)
