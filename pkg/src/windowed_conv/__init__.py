"""Window-trained convolutional networks on stationary signals, with a MID demo."""
from ._accel import BACKEND, HAS_NUMBA
from .conv_net import CNNModel, ConvLayer, backward, forward, l1_product, load_checkpoint, save_checkpoint, shift_signal
from .mid import ChannelParams, evaluate_zero_shot, min_power, mst_mean_edge_power, oracle_comm_positions
from .rasterize import ExtractionConfig, PositionSet, RasterConfig, extract_positions, rasterize
from .signal_core import GridSignal, StationaryPairConfig, WindowSpec, apply_window, generate_stationary_pair
from .training import BoundInputs, TrainConfig, estimate_full_loss, theorem_bound, train_windowed, verify_bound, windowed_loss

__version__ = "0.1.0"
