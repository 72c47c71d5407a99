"""Experiment configuration, closed-loop runs, export and the command line."""
