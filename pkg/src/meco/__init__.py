"""Maximum-likelihood training of unnormalized models by compositional optimization."""

__version__ = "0.1.0"
