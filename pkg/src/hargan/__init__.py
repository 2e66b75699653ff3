"""Toolkit for GAN-based augmentation of wearable-sensor activity windows.

Modules:
    tensor      float64 autodiff substrate
    nn          differentiable building blocks (conv, LSTM, attention, losses)
    datasets    ingestion, windowing, normalization, splits, persistence
    models      the two GAN families and the two validation classifiers
    training    Adam, classifier training, per-class adversarial training, gate
    evaluation  F1/confusion, Pearson channel report, epoch-time benchmark
    cli         reproducible command-line runs
"""

__version__ = "0.1.0"
