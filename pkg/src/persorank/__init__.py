"""Personalized search re-ranking from click logs.

Pipeline stages: parse TSV click logs into sessions, derive per-document
relevance grades from dwell time, pick per-user target queries, build an
inverted query index, extract context features, train and blend re-ranking
models, and evaluate with NDCG@10 and Kendall tau.
"""

__version__ = "0.1.0"
