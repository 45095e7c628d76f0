"""
satad: anomaly detection for multichannel sensor streams with a small
self-attention GAN, written on numpy with a hand-rolled reverse-mode tape.

Modules
-------
tensor     Tensor type, gradient tape and differentiable primitives
data       series I/O, normalization, windowing, synthetic data
model      generator / discriminator and checkpoint files
train      adversarial training loop
detect     latent inversion, anomaly scores, labelling
baselines  PCA and k-nearest-neighbour detectors
evaluate   precision / recall / F1 and threshold sweeps
config     flat key = value run configuration
cli        the ``satad`` command
"""

__version__ = "0.1.0"
