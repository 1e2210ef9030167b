"""Object-token video transformer with hand-object graph supervision,
frame-clip consistency, and key-frame temporal localization, on a
deterministic synthetic benchmark with verified gradients."""

__version__ = "0.1.0"
