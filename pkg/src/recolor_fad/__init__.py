"""Color-quantization (recolor) features for fake audio detection."""

__version__ = "0.1.0"

SAMPLE_RATE = 16000
TARGET_LENGTH = 65600
