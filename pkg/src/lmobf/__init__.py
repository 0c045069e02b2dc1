"""Coset-state authentication, measurement-program compilation, and
classical-oracle obfuscation, exactly simulated at small security parameters."""

__version__ = "0.1.0"
