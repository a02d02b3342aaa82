"""Multi-teacher single-student distillation for multi-domain dialogue."""

__version__ = "0.1.0"
