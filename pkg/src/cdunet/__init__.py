"""Dual-microphone directed speech enhancement toolkit."""
