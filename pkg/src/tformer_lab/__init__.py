"""Desk-scale question-guided temporal querying transformer lab.

A small, fully self-contained stack: a reverse-mode autodiff engine over
float64 numpy arrays, a temporal-query transformer that compresses a frame
sequence into a fixed token budget under question guidance, the competing
temporal aggregation baselines, a trainable answer reasoner, synthetic
video-QA task generators, and a training / ablation / visualization CLI.
"""

__version__ = "0.1.0"
