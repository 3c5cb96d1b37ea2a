"""Results storage for the CUSP uncertainty toolkit."""
