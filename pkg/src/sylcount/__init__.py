"""Syllable count estimation from speech.

End-to-end neural counting (gated convolutional network with a recurrent
accumulator, plus a recurrent baseline), an envelope-based peak-picking
pipeline with exhaustive-search calibration, and an adaptation-curve
experiment harness.
"""

__version__ = "0.1.0"
