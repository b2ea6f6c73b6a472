"""Utility helpers for the Py-TeFS toolkit."""
