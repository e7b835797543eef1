"""Desk-scale visual servoing stack.

Simulated overhead-camera robot control: weakly supervised data
generation, a 360-degree orientation estimator trained with wrap-aware
losses, and an image-space PD path follower, with a CLI and an HTTP
operator service on top.
"""

__version__ = "0.1.0"
