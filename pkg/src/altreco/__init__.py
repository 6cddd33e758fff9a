"""Preference-aware adversarial tag recommendation.

A desk-scale training engine for a joint network of visual encoder,
skip-connected user-history autoencoder, preference-conditioned
classifier, generalized-tag generator and adversarial discriminator,
plus data tooling, ranking metrics and a CLI.
"""

__version__ = "0.1.0"
