"""MOLLI cardiac T1 mapping toolkit.

Synthetic curve and phantom generation, a batched Levenberg-Marquardt fitter
with polarity restoration, and a NumPy LSTM regressor trained on decomposed
parameter losses.
"""

__version__ = "0.1.0"
