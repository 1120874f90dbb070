"""Packaged study configuration templates."""
