"""Service modules for the CUSP uncertainty toolkit."""
