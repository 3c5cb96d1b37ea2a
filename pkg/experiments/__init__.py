"""Experiment harness for the CUSP uncertainty toolkit."""
