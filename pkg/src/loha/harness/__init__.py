"""Experiment drivers and the ``plan`` command-line interface."""
