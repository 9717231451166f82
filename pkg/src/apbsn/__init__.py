"""Self-supervised denoising with asymmetric pixel-shuffle downsampling and a blind-spot network."""

__version__ = "0.1.0"
