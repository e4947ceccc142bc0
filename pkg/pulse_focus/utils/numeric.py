# ABOUTME: Numeric helpers shared by the model, gating and analytics code
# ABOUTME: Stable softmax and the CSV float formatting rule

import math

import numpy as np


def softmax(scores, axis=-1):
    """
    Numerically stable softmax.

    Args:
        scores (np.ndarray): Logits; ``-inf`` entries get zero weight
        axis (int): Axis to normalize over

    Returns:
        np.ndarray: Probabilities with the same shape as ``scores``
    """
    shifted = scores - np.max(scores, axis=axis, keepdims=True)
    weights = np.exp(shifted)
    return weights / np.sum(weights, axis=axis, keepdims=True)


def format_float(value):
    """
    Format a float for CSV output: 9 significant digits, trailing zeros dropped.

    ``None`` and NaN render as an empty cell.
    """
    if value is None:
        return ""
    value = float(value)
    if math.isnan(value):
        return ""
    text = f"{value:.9g}"
    if text == "-0":
        return "0"
    return text
