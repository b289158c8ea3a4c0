"""smpkit: deterministic reward, curriculum, and evaluation engine for
three-class stock-movement prediction rollouts.

Library surface, one module per concern:

- labeling: OHLCV ingestion rules, movement classes, similarity, splits
- parsing: structured response grammar and format reports
- rewards: shaped reward and the SFT rejection filter
- grpo: group-relative advantage, clipped surrogate, KL, objective
- curriculum: rollout-difficulty binning and training order
- voting: majority voting, scaling curves, macro-F1 evaluation
- service: stateless batch scoring over HTTP/JSON
- synth: seeded synthetic prices and simulated rollouts
- cli: file-based pipeline entry point
"""

__version__ = "0.1.0"

from .labeling import (  # noqa: F401
    DateRange,
    LabeledSample,
    MovementLabel,
    PriceBar,
    SplitTag,
    assign_splits,
    balance_labels,
    classify,
    compute_change_pct,
    label_series,
    top_similar,
)
