"""Scoring and stress-testing toolkit for long multi-shot generated videos.

Submodules:
    manifest       shot-manifest and prompt-suite data model with JSON I/O
    embedder       embedding providers (mock, file store, remote) and pooling
    stats          rank/linear correlation, OLS, histogram mutual information
    dsa            structural alignment score and fusion with the judge score
    judge          MLLM-as-judge pipeline with cassette record/replay
    corruption     shot-level corruption operators, sweeps, sensitivity
    orthogonality  short-vs-long metric independence checks
    harness        rating ingestion, correlation/ablation reports, suite builder
    cli            the `longshot` command
"""

__version__ = "0.1.0"
