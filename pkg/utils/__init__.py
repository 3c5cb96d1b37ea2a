"""Utility modules for the CUSP uncertainty toolkit."""
