"""Autoregressive 3D Gaussian scene toolkit: quantized sparse autoencoder,
traversal-order token serialization, spatial-rotary causal transformer, and
constrained samplers for generation, completion, and outpainting."""

__version__ = "0.1.0"
