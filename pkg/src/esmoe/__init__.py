"""Emotional-support dialogue policy: multi-task mixture of experts over a
keyword graph, selected turn by turn with REINFORCE against a simulated seeker."""

__version__ = "0.1.0"
