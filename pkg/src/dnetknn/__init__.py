"""Non-linear embeddings for large-margin kNN classification.

The pipeline has three stages: greedy layer-wise pretraining of a stack of
restricted Boltzmann machines (``rbm``), conversion of the stack into a deep
feed-forward encoder (``encoder``), and discriminative fine-tuning of that
encoder with a triplet hinge loss built from pixel-space neighbor tables
(``neighbors``, ``margin``, ``trainer``).  Code-space classifiers and error
reporting live in ``classify``; data ingestion in ``dataset``; the command
line front end in ``cli``.

This module intentionally imports nothing heavy so that the CLI can pin
thread counts before numpy is loaded.
"""

__version__ = "0.1.0"
