"""Environmental noise embeddings for neural acoustic models, at desk scale.

Modules map onto the processing chain: ``signal_corpus`` synthesises a
labelled noisy corpus, ``features`` turns audio into spliced LDA features,
``neural_net`` holds the feedforward engine, ``adaptation`` and ``ivector``
produce the auxiliary noise features, and ``evaluation`` scores systems.
"""

__version__ = "0.1.0"
