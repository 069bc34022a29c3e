"""Desk-scale laboratory for heterogeneous emergent communication.

Two agents with private perceptual embeddings (audio on the sending
side, audio or images on the receiving side) learn a binary protocol by
playing a multi-step referential game with REINFORCE. The package
provides the autodiff substrate, a synthetic shapes world, the agents
and the game, training with reward baselines, protocol analyses, and
sender/receiver interoperability experiments.
"""

__version__ = "0.1.0"

from . import agents, checkpoint, game, optim, rng, tensor, training, worldgen  # noqa: F401
from . import analysis, config, interop, svg  # noqa: F401
