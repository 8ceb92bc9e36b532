"""Multimodal tabular prediction: cells rendered as medical-language prompts,
embedded into a shared space, fused by a transformer encoder, and trained
against classification and regression objectives."""

__version__ = "0.1.0"
