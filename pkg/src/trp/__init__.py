"""Temporal relationship prediction on insertion-only co-occurrence
graphs, trained with positive-unlabeled risk estimators and a
variational class-prior estimate."""

__version__ = "0.1.0"
