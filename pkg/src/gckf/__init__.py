"""Generalised compressed Kalman filtering with subsystem switching and information exchange."""

from gckf.cores import ObservationModel, ProcessModel, UkfParams
from gckf.engine import (
    AugmentedBelief,
    VirtualLikelihood,
    extract_virtual_likelihood,
    global_update,
    init_augmented,
    local_predict,
    local_update,
)
from gckf.errors import (
    ArgumentError,
    CapabilityError,
    GckfError,
    MeasurementError,
    NumericalError,
    ProtocolError,
    StabilityError,
)
from gckf.exchange import ExchangeMessage, apply_message, message_round, synthesize_message
from gckf.gaussian import GaussianBelief, RegressionResult, marginalize, schur_regression
from gckf.partition import PartitionLayout, SwitchSchedule, build_layout, next_layout

__version__ = "0.1.0"
