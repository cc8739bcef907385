"""Data preparation: ingestion, synthetic generation, splits, pair datasets and prompts."""
