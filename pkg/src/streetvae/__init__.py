"""streetvae: latent representations of street networks.

Two-stage generative model (autoregressive coordinate model + variational
graph autoencoder) over clipped street network tiles, with topological and
geometric evaluation, clustering, and orientation analysis.
"""

__version__ = "0.1.0"
