"""Error hierarchy and response envelopes."""
