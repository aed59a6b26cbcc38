"""tensched: greedy tensor-pipeline autoscheduler with a learned value function."""

__version__ = "0.1.0"
