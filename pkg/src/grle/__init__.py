"""Early-exit CNN inference offloading in dynamic edge networks, learned with a graph actor-critic."""

__version__ = "0.1.0"
