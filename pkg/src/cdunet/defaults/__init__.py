"""Default configuration files."""
