"""Deep metric learning losses under a tightness/contrastive split, with bound checkers."""

__version__ = "0.1.0"
