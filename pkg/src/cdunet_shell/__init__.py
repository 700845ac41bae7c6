"""Command-line surface for the CDUNet toolkit."""
