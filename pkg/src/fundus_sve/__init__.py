"""Retinal fundus image enhancement and classification pipeline.

Vessel-mask-guided intensity enhancement in HSI space, seeded data
augmentation, HOG/LBP feature extraction, simple meta-learners and a
full evaluation-metric stack, glued together by a manifest-driven CLI.
"""

__version__ = "0.1.0"
