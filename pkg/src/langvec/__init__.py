"""Language embeddings from a word-reordering denoising autoencoder."""

__version__ = "0.1.0"
