"""Network assembly: shapes, ranges, structural independence, skips."""

import dataclasses

import numpy as np
import pytest

from altreco.config import subsystem_rng
from altreco.errors import ContractError, DimensionError
from altreco.losses import HuberConfig, huber_reconstruction
from altreco.model import ModelConfig, TagModel
from altreco.tensor import Tape, Tensor

TINY = ModelConfig(
    vocab_size=12, feature_dim=8, visual_dim=16, latent_dim=4, visual_hidden=16,
    encoder_widths=(32, 16, 8, 4), decoder_widths=(4, 8, 16, 32),
    classifier_widths=(16, 16), generator_widths=(16, 16, 16),
    discriminator_widths=(32, 16, 8, 4),
)


def _model(seed=0, **overrides):
    cfg = dataclasses.replace(TINY, **overrides) if overrides else TINY
    return TagModel(cfg, subsystem_rng(seed, "init"))


def _inputs(batch=5, seed=1):
    rng = np.random.default_rng(seed)
    features = Tensor(rng.normal(size=(batch, TINY.feature_dim)))
    history = Tensor(rng.uniform(0, 1, size=(batch, TINY.vocab_size)))
    return features, history


class TestConfigInvariants:
    def test_decoder_must_mirror_encoder(self):
        with pytest.raises(ContractError):
            dataclasses.replace(TINY, decoder_widths=(4, 8, 32, 16))

    def test_last_encoder_width_is_latent(self):
        with pytest.raises(ContractError):
            dataclasses.replace(TINY, latent_dim=8)

    def test_round_trip_via_dict(self):
        assert ModelConfig.from_dict(TINY.to_dict()) == TINY

    def test_default_widths_match_published_topology(self):
        cfg = ModelConfig(vocab_size=100, feature_dim=64)
        assert cfg.encoder_widths == (1024, 512, 256, 128)
        assert cfg.decoder_widths == (128, 256, 512, 1024)
        assert cfg.discriminator_widths == (1024, 256, 64, 16)
        assert cfg.latent_dim == 128


class TestForwardShapesAndRanges:
    def test_full_forward_shapes(self):
        model = _model()
        features, history = _inputs(batch=7)
        outs = model.full_forward(features, history)
        assert outs.visual.shape == (7, TINY.visual_dim)
        assert outs.preference.shape == (7, TINY.latent_dim)
        assert outs.history_recon.shape == (7, TINY.vocab_size)
        assert outs.personalized.shape == (7, TINY.vocab_size)
        assert outs.generalized.shape == (7, TINY.vocab_size)

    def test_sigmoid_and_tanh_ranges(self):
        model = _model()
        features, history = _inputs()
        outs = model.full_forward(features, history)
        for head in (outs.history_recon, outs.personalized, outs.generalized):
            assert head.data.min() >= 0.0 and head.data.max() <= 1.0
        assert outs.preference.data.min() >= -1.0
        assert outs.preference.data.max() <= 1.0

    def test_zero_init_zero_input_gives_zeros(self):
        model = TagModel(TINY, rng=None)
        x = Tensor(np.zeros((3, TINY.feature_dim)))
        assert np.array_equal(model.visual_encode(x).data, np.zeros((3, TINY.visual_dim)))
        u, _ = model.preference_encode(Tensor(np.zeros((3, TINY.vocab_size))))
        assert np.array_equal(u.data, np.zeros((3, TINY.latent_dim)))

    def test_zero_weight_discriminator_scores_half(self):
        model = TagModel(TINY, rng=None)
        scores = model.discriminate(Tensor(np.full((4, TINY.vocab_size), 0.5)))
        assert scores.shape == (4, 1)
        assert np.all(scores.data == 0.5)

    def test_cold_start_history_is_valid(self):
        model = _model()
        features, _ = _inputs()
        outs = model.full_forward(features, Tensor(np.zeros((5, TINY.vocab_size))))
        assert np.isfinite(outs.personalized.data).all()

    def test_deterministic_under_seed(self):
        features, history = _inputs()
        a = _model(seed=3).full_forward(features, history).personalized.data
        b = _model(seed=3).full_forward(features, history).personalized.data
        assert np.array_equal(a, b)

    def test_batch_row_independence(self):
        model = _model()
        features, history = _inputs(batch=6)
        full = model.full_forward(features, history).personalized.data
        row = model.full_forward(
            Tensor(features.data[2:3]), Tensor(history.data[2:3])
        ).personalized.data
        assert np.allclose(full[2], row[0], atol=1e-12)

    def test_dimension_errors(self):
        model = _model()
        with pytest.raises(DimensionError):
            model.visual_encode(Tensor(np.zeros((2, 3))))
        with pytest.raises(DimensionError):
            model.preference_encode(Tensor(np.zeros((2, 5))))
        with pytest.raises(ContractError):
            model.preference_encode(Tensor(np.full((2, TINY.vocab_size), 1.5)))


class TestPreferencePathways:
    def test_classifier_responds_to_preference(self):
        model = _model()
        features, history = _inputs()
        outs_a = model.full_forward(features, history)
        other = Tensor(np.clip(history.data + 0.3, 0.0, 1.0))
        outs_b = model.full_forward(features, other)
        assert not np.allclose(outs_a.personalized.data, outs_b.personalized.data)

    def test_generator_independent_of_history(self):
        """t_g is bit-identical across 100 random histories."""
        model = _model()
        features, _ = _inputs()
        rng = np.random.default_rng(17)
        reference = None
        for _ in range(100):
            history = Tensor(rng.uniform(0, 1, size=(5, TINY.vocab_size)))
            generalized = model.full_forward(features, history).generalized.data
            if reference is None:
                reference = generalized
            else:
                assert np.array_equal(generalized, reference)

    def test_generator_has_no_tape_path_from_history(self):
        model = _model()
        features, history = _inputs()
        history.requires_grad = True
        with Tape() as tape:
            outs = model.full_forward(features, history)
            tape.backward(outs.generalized.sum())
        assert history.grad is None
        for name, p in model.params.subset("ue.").items():
            assert p.grad is None, name


class TestSkipConnections:
    def test_decoder_consumes_three_skips(self):
        model = _model()
        _, history = _inputs()
        _, skips = model.preference_encode(history)
        assert len(skips.activations) == len(TINY.encoder_widths) - 1
        consumed = sum(1 for i in range(len(TINY.decoder_widths)) if model._skip_width(i))
        assert consumed == 3

    def test_skips_are_live(self):
        """Zeroing the skip activations changes the reconstruction."""
        model = _model(seed=9)
        _, history = _inputs()
        preference, skips = model.preference_encode(history)
        with_skips = model.preference_decode(preference, skips).data

        zeroed = dataclasses.replace(
            skips,
            activations=tuple(Tensor(np.zeros_like(a.data)) for a in skips.activations),
        )
        zeroed = dataclasses.replace(zeroed, latent=preference)
        without = model.preference_decode(preference, zeroed).data
        assert not np.allclose(with_skips, without)

    def test_stale_skip_state_rejected(self):
        model = _model()
        _, history = _inputs()
        pref_a, skips_a = model.preference_encode(history)
        pref_b, _ = model.preference_encode(history)
        with pytest.raises(ContractError):
            model.preference_decode(pref_b, skips_a)

    def test_no_skip_variant_has_narrow_decoder_inputs(self):
        model = _model(use_skip=False)
        for i, layer in enumerate(model.decoder_layers):
            expected = TINY.latent_dim if i == 0 else TINY.decoder_widths[i - 1]
            assert layer.in_width == expected
        _, history = _inputs()
        preference, skips = model.preference_encode(history)
        recon = model.preference_decode(preference, skips)
        assert recon.shape == (5, TINY.vocab_size)

    def test_skip_model_reconstructs_no_worse_when_trained(self):
        """A few hundred reconstruction-only steps: the skip model's
        final loss does not exceed the no-skip ablation's."""
        from altreco.optim import Adadelta

        rng = np.random.default_rng(33)
        histories = rng.uniform(0, 1, size=(64, TINY.vocab_size))
        losses = {}
        for use_skip in (True, False):
            model = _model(seed=5, use_skip=use_skip)
            opt = Adadelta(model.params.subset("u"))
            final = None
            for step in range(300):
                batch = histories[(step * 16) % 64 : (step * 16) % 64 + 16]
                h = Tensor(batch)
                with Tape() as tape:
                    pref, skips = model.preference_encode(h)
                    recon = model.preference_decode(pref, skips)
                    loss = huber_reconstruction(recon, h, HuberConfig())
                    tape.backward(loss)
                final = loss.item()
                opt.step()
            losses[use_skip] = final
        assert losses[True] <= losses[False]


class TestRegistryPartition:
    def test_registries_are_disjoint_and_cover_everything(self):
        model = _model()
        main = set(model.params.names())
        disc = set(model.disc_params.names())
        assert not (main & disc)
        prefixes = {name.split(".")[0] for name in main}
        assert prefixes == {"f", "ue", "ud", "c", "g"}
        assert {name.split(".")[0] for name in disc} == {"d"}

    def test_every_trainable_tensor_is_registered(self):
        model = _model()
        registered = {id(p) for _, p in model.all_params().items()}
        layers = (
            model.visual_layers + model.encoder_layers + model.decoder_layers
            + [model.recon_layer] + model.classifier_layers + [model.classifier_head]
            + model.generator_layers + [model.generator_head]
            + model.discriminator_layers + [model.discriminator_head]
        )
        for layer in layers:
            assert id(layer.weight) in registered
            assert id(layer.bias) in registered
