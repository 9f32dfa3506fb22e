"""viewcraft: learned stochastic bounded-adversary views for contrastive pretraining."""

__version__ = "0.1.0"
