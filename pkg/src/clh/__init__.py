"""Four-stage agentic ICD-10-CM coding engine (Analyze, Locate, Assign, Verify)."""

__version__ = "0.1.0"
