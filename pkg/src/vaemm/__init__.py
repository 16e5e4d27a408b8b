"""Unsupervised audio-visual speech enhancement with a per-frame VAE mixture."""

__version__ = "0.1.0"
