"""Data-dependent scaling laws from PCFG corpora and gzip-compressibility."""

__version__ = "0.1.0"
