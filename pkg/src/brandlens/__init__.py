"""Two-phase LLM phishing page detection: brand identification, then domain verification."""

__version__ = "0.1.0"
