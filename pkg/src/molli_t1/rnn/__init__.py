"""Recurrent (LSTM) regressor of MOLLI recovery parameters."""

from molli_t1.rnn.loss import loss_grad, loss_terms, per_sample_loss, total_loss
from molli_t1.rnn.model import (
    DegenerateCurveError,
    NormalizationSpec,
    RnnConfig,
    RnnWeights,
    forward,
    predict,
)
from molli_t1.rnn.train import (
    CurveSource,
    TrainingDiverged,
    TrainState,
    grad_check,
    infer_map,
    init_state,
    loss_and_grad,
    relative_t1_error,
    train,
)
