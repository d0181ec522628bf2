"""Depth-recurrent latent-reasoning engine for sequential recommendation.

Pipeline: `corpus` ingests interaction logs into leave-one-out splits;
`model` is the recurrent-depth recommender; `pretrain` runs the
self-supervised stage with trajectory- and step-level alignment;
`posttrain` runs clipped policy-gradient refinement with ranking-metric
rewards; `evalrank` computes full-catalog Recall/NDCG; `harness` is the
CLI, config, checkpoint, and benchmark layer.

Hot numeric kernels are numba-jitted with a pure-numpy fallback; select
with LARES_BACKEND=numba|numpy|auto.
"""

__version__ = "0.1.0"

from . import corpus, evalrank, kernels, model, posttrain, pretrain

__all__ = ["corpus", "evalrank", "kernels", "model", "posttrain", "pretrain", "__version__"]
