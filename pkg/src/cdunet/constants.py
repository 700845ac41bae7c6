"""Constants for the CDUNet toolkit."""

import os

# Configuration directory
CONFIG_DIR = os.getenv("CDUNET_CONFIG_DIR", ".")

# File paths
CONFIG_FILE = os.path.join(CONFIG_DIR, "cdunet.conf")

# Physics
SPEED_OF_SOUND = 343.0  # m/s, shared by room simulation and steering
MIC_SPACING = 0.03  # m

# Signal defaults
DEFAULT_SAMPLE_RATE = 16000
WINDOW_SIZE = 512
HOP_SIZE = 256

# Direction defaults (degrees)
DEFAULT_WIDTH = 7.0
MIN_SEPARATION = 15.0
