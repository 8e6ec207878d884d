"""Upstream-checkpoint to DWT weight-container converter."""

from .export import ExportError, convert, count_parameters, export, load_state_dict

__version__ = "0.1.0"

__all__ = ["ExportError", "convert", "count_parameters", "export", "load_state_dict"]
