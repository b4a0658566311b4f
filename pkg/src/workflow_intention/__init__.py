"""Multimodal artefact encoding and workflow-intention generation."""

__version__ = "0.1.0"
