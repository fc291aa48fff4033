"""Cough-audio TB screening pipeline and statistical evaluation harness."""

__version__ = "0.1.0"
