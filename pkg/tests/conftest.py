"""Shared test helpers."""

import numpy as np

from pacsbo.predictor import MlpPredictor


def constant_predictor(value, input_len=100):
    """Trace-independent predictor: no hidden layers, zero weights, and a
    bias chosen so the softplus output equals ``value``."""
    b = float(np.log(np.expm1(value)))
    return MlpPredictor(
        input_len=input_len,
        hidden=(),
        weights=(np.zeros((1, input_len)),),
        biases=(np.array([b]),),
        feat_mean=np.zeros(input_len),
        feat_scale=np.ones(input_len),
        final_loss=0.0,
    )
