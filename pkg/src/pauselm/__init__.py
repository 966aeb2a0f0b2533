"""Pause-aware masked language modeling for word-level-timestamped transcripts.

Pipeline: ingest timestamped transcripts -> quantize word durations and
inter-word pauses into 10 ms bins -> train a transformer encoder whose
input embedding adds word, position, and concatenated duration/pause
embeddings -> evaluate via masked-pause RMSE and binary AD/control
classification. A seeded synthetic-corpus generator supports desk-scale
verification of the whole mechanism.
"""

__version__ = "0.1.0"
