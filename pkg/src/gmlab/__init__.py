"""gmlab: diffusion, flow matching and jump processes as Markov generators on toy problems."""

__version__ = "0.1.0"
