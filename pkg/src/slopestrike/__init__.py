"""Stock-forecast robustness toolkit.

Trains a multi-rate pooled MLP forecaster on daily adjusted prices, runs
white-box adversarial attacks against it (including slope-targeted ones),
evaluates stealth against a CNN discriminator, and trains an adversarial
conditional WGAN-GP that carries the frozen forecaster as a second critic.
"""

__version__ = "0.1.0"
