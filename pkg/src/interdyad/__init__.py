"""Desk-scale dyadic speech-to-video mechanisms: identity-bound attention,
flow matching, modality alignment, role-aware guidance, interactivity
metrics and clip curation, on synthetic scenes."""

__version__ = "0.1.0"
