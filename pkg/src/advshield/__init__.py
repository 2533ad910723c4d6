"""advshield: gradient-based adversarial attacks and a purification defense.

Pure numpy/numba implementation of FGSM, BIM and PGD against a small
convolutional classifier, plus a convolutional autoencoder that purifies
perturbed inputs before classification.
"""

__version__ = "0.1.0"
