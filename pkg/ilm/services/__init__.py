"""Artifact storage, the pipeline registry and its audit trail."""
