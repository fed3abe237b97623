"""Active-experimentation detection of out-of-task-distribution environments."""

__version__ = "0.1.0"
