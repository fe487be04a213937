"""irisbench: iris preprocessing, embedding and verification benchmark"""

__version__ = "1.0"
