"""Model modules for the CUSP uncertainty toolkit."""
