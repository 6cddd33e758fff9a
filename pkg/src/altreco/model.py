"""The full recommendation network.

Six sub-networks share one parameter space, split into two registries:
the main registry covers the visual encoder, the skip-connected history
autoencoder, the preference-conditioned classifier and the generalized
tag generator; the discriminator keeps its own registry so the two
adversarial players can be updated in alternation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError
from .nn import DenseLayer, ParamRegistry, forward_dense, init_dense
from .tensor import Tensor


@dataclass
class ModelConfig:
    vocab_size: int
    feature_dim: int
    visual_dim: int = 256
    latent_dim: int = 128
    visual_hidden: int = 512
    encoder_widths: tuple = (1024, 512, 256, 128)
    decoder_widths: tuple = (128, 256, 512, 1024)
    classifier_widths: tuple = (512, 512)
    generator_widths: tuple = (512, 512, 512)
    discriminator_widths: tuple = (1024, 256, 64, 16)
    use_skip: bool = True

    def __post_init__(self):
        self.encoder_widths = tuple(self.encoder_widths)
        self.decoder_widths = tuple(self.decoder_widths)
        self.classifier_widths = tuple(self.classifier_widths)
        self.generator_widths = tuple(self.generator_widths)
        self.discriminator_widths = tuple(self.discriminator_widths)
        for name in ("vocab_size", "feature_dim", "visual_dim", "latent_dim", "visual_hidden"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be >= 1")
        all_widths = (
            self.encoder_widths
            + self.decoder_widths
            + self.classifier_widths
            + self.generator_widths
            + self.discriminator_widths
        )
        if any(w < 1 for w in all_widths):
            raise ContractError("all layer widths must be >= 1")
        if self.encoder_widths[-1] != self.latent_dim:
            raise ContractError("last encoder width must equal latent_dim")
        if self.decoder_widths != tuple(reversed(self.encoder_widths)):
            raise ContractError("decoder widths must mirror encoder widths")

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "feature_dim": self.feature_dim,
            "visual_dim": self.visual_dim,
            "latent_dim": self.latent_dim,
            "visual_hidden": self.visual_hidden,
            "encoder_widths": list(self.encoder_widths),
            "decoder_widths": list(self.decoder_widths),
            "classifier_widths": list(self.classifier_widths),
            "generator_widths": list(self.generator_widths),
            "discriminator_widths": list(self.discriminator_widths),
            "use_skip": self.use_skip,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        return cls(**data)


@dataclass
class EncoderSkips:
    """Pre-latent encoder activations captured once per forward pass.

    ``latent`` is the preference tensor produced alongside them; the
    decoder checks identity on it to reject stale or mismatched state.
    """

    latent: Tensor
    activations: tuple  # outermost (widest) encoder activation first


@dataclass
class ForwardOutputs:
    visual: Tensor  # batch x visual_dim
    preference: Tensor  # batch x latent_dim, tanh range
    history_recon: Tensor  # batch x vocab_size, sigmoid range
    personalized: Tensor  # batch x vocab_size, sigmoid range
    generalized: Tensor  # batch x vocab_size, sigmoid range


def _stack(layers: list[DenseLayer], x: Tensor) -> Tensor:
    for layer in layers:
        x = forward_dense(layer, x)
    return x


class TagModel:
    """Builds and runs the joint network for one ModelConfig.

    ``rng=None`` allocates zero-valued parameters (checkpoint loading,
    degenerate-case tests); otherwise Glorot initialisation consumes the
    generator in a fixed construction order, so a seed pins every weight.
    """

    def __init__(self, config: ModelConfig, rng: Optional[np.random.Generator]):
        self.config = config
        self.params = ParamRegistry()
        self.disc_params = ParamRegistry()
        cfg = config

        def dense(reg: ParamRegistry, name: str, in_w: int, out_w: int, act: str) -> DenseLayer:
            return reg.add_layer(name, init_dense(in_w, out_w, act, rng))

        self.visual_layers = [
            dense(self.params, "f.l0", cfg.feature_dim, cfg.visual_hidden, "relu"),
            dense(self.params, "f.l1", cfg.visual_hidden, cfg.visual_dim, "relu"),
        ]

        self.encoder_layers = []
        in_w = cfg.vocab_size
        for i, width in enumerate(cfg.encoder_widths):
            act = "tanh" if i == len(cfg.encoder_widths) - 1 else "relu"
            self.encoder_layers.append(dense(self.params, f"ue.l{i}", in_w, width, act))
            in_w = width

        # Decoder layer i takes the previous activation plus, from layer 1
        # on, the width-matched encoder skip; the reconstruction head sees
        # the last decoder activation alone.
        self.decoder_layers = []
        in_w = cfg.latent_dim
        for i, width in enumerate(cfg.decoder_widths):
            skip_w = self._skip_width(i)
            self.decoder_layers.append(
                dense(self.params, f"ud.l{i}", in_w + skip_w, width, "relu")
            )
            in_w = width
        self.recon_layer = dense(
            self.params, "ud.recon", cfg.decoder_widths[-1], cfg.vocab_size, "sigmoid"
        )

        self.classifier_layers = []
        in_w = cfg.visual_dim + cfg.latent_dim
        for i, width in enumerate(cfg.classifier_widths):
            self.classifier_layers.append(dense(self.params, f"c.l{i}", in_w, width, "relu"))
            in_w = width
        self.classifier_head = dense(self.params, "c.head", in_w, cfg.vocab_size, "sigmoid")

        self.generator_layers = []
        in_w = cfg.visual_dim
        for i, width in enumerate(cfg.generator_widths):
            self.generator_layers.append(dense(self.params, f"g.l{i}", in_w, width, "relu"))
            in_w = width
        self.generator_head = dense(self.params, "g.head", in_w, cfg.vocab_size, "sigmoid")

        self.discriminator_layers = []
        in_w = cfg.vocab_size
        for i, width in enumerate(cfg.discriminator_widths):
            self.discriminator_layers.append(
                dense(self.disc_params, f"d.l{i}", in_w, width, "relu")
            )
            in_w = width
        self.discriminator_head = dense(self.disc_params, "d.head", in_w, 1, "sigmoid")

    def _skip_width(self, decoder_index: int) -> int:
        """Width of the encoder activation concatenated into a decoder layer."""
        if not self.config.use_skip or decoder_index == 0:
            return 0
        return self.config.encoder_widths[len(self.config.encoder_widths) - 1 - decoder_index]

    # -- sub-network forwards -------------------------------------------

    def visual_encode(self, features: Tensor) -> Tensor:
        if features.data.ndim != 2 or features.shape[1] != self.config.feature_dim:
            raise DimensionError(
                f"visual_encode expects batch x {self.config.feature_dim}, got {features.shape}"
            )
        return _stack(self.visual_layers, features)

    def preference_encode(self, history: Tensor) -> tuple[Tensor, EncoderSkips]:
        if history.data.ndim != 2 or history.shape[1] != self.config.vocab_size:
            raise DimensionError(
                f"preference_encode expects batch x {self.config.vocab_size}, got {history.shape}"
            )
        if history.data.min() < 0.0 or history.data.max() > 1.0:
            raise ContractError("history entries must lie in [0, 1]")
        activations = []
        x = history
        for layer in self.encoder_layers:
            x = forward_dense(layer, x)
            activations.append(x)
        latent = activations[-1]
        return latent, EncoderSkips(latent=latent, activations=tuple(activations[:-1]))

    def preference_decode(self, preference: Tensor, skips: EncoderSkips) -> Tensor:
        if skips.latent is not preference:
            raise ContractError("skip state does not belong to this preference forward")
        x = preference
        for i, layer in enumerate(self.decoder_layers):
            if self._skip_width(i):
                skip = skips.activations[len(self.config.encoder_widths) - 1 - i]
                x = T.concat(x, skip, axis=1)
            x = forward_dense(layer, x)
        return forward_dense(self.recon_layer, x)

    def classify_personalized(self, visual: Tensor, preference: Tensor) -> Tensor:
        if visual.shape[0] != preference.shape[0]:
            raise DimensionError(
                f"batch mismatch: visual {visual.shape} vs preference {preference.shape}"
            )
        x = T.concat(visual, preference, axis=1)
        x = _stack(self.classifier_layers, x)
        return forward_dense(self.classifier_head, x)

    def generate_tags(self, visual: Tensor) -> Tensor:
        x = _stack(self.generator_layers, visual)
        return forward_dense(self.generator_head, x)

    def discriminate(self, tags: Tensor) -> Tensor:
        if tags.data.ndim != 2 or tags.shape[1] != self.config.vocab_size:
            raise DimensionError(
                f"discriminate expects batch x {self.config.vocab_size}, got {tags.shape}"
            )
        if tags.data.min() < 0.0 or tags.data.max() > 1.0:
            raise ContractError("discriminator inputs must lie in [0, 1]")
        x = _stack(self.discriminator_layers, tags)
        return forward_dense(self.discriminator_head, x)

    def full_forward(self, features: Tensor, history: Tensor) -> ForwardOutputs:
        if features.shape[0] != history.shape[0]:
            raise DimensionError(
                f"batch mismatch: features {features.shape} vs history {history.shape}"
            )
        visual = self.visual_encode(features)
        preference, skips = self.preference_encode(history)
        recon = self.preference_decode(preference, skips)
        personalized = self.classify_personalized(visual, preference)
        generalized = self.generate_tags(visual)
        return ForwardOutputs(
            visual=visual,
            preference=preference,
            history_recon=recon,
            personalized=personalized,
            generalized=generalized,
        )

    # -- parameter access -------------------------------------------------

    def all_params(self) -> ParamRegistry:
        return self.params.merged_with(self.disc_params)

    def clear_grads(self) -> None:
        self.params.clear_grads()
        self.disc_params.clear_grads()

    def load_param_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        """Overwrite every parameter from name-keyed arrays (checkpoints)."""
        registry = self.all_params()
        expected = set(registry.names())
        provided = set(arrays)
        if expected != provided:
            missing = sorted(expected - provided)[:3]
            extra = sorted(provided - expected)[:3]
            raise ContractError(f"parameter name mismatch: missing {missing}, extra {extra}")
        for name, param in registry.items():
            value = np.asarray(arrays[name], dtype=np.float64)
            if value.shape != param.data.shape:
                raise DimensionError(
                    f"parameter '{name}' has shape {value.shape}, expected {param.data.shape}"
                )
            param.data = value
