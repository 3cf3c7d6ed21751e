"""Leaky multicolor sandpiles and their limit shapes."""
