"""Block-based compressive sensing: AMP and diffusion message passing
solvers, state-evolution diagnostics, and a trainable unfolded
reconstruction network."""

__version__ = "0.1.0"
