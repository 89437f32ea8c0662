"""Federated-learning simulator for embedding-based classifiers.

Implements weighted-average, adaptive pseudo-gradient, cosine
spread-out, proximal, and contrastive baselines next to an SVM-guided
strategy that aggregates only support-vector class embeddings and then
spreads the aggregated embeddings out along the fitted max-margin
directions.
"""

__version__ = "0.1.0"
