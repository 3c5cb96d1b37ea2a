"""Reverse-mode array engine for the CUSP uncertainty toolkit."""
