"""plab: a desk-scale laboratory for perturbation-channel defenses.

Small dense-tensor core (FFT, SVD, convolution, seeded noise), a manually
differentiated convolutional classifier, six input-perturbation channels,
white-box and black-box attacks, defense wrappers, and the instability
measurement suite, orchestrated by a config-driven CLI (``plab``).
"""

from plab.kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
