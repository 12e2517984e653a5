"""Desk-scale rejection-sampling fine-tuning pipeline over a toy household simulator."""

__version__ = "0.1.0"
