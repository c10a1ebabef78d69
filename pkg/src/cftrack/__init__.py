"""Real-time single-object tracking: kernelized correlation filters over
channel-reduced convolutional features, with a lazy feature cache and an
OTB-style benchmark harness."""

from .adaptation import (AdapterBank, ScaleFilter, apply_adapter, identity_banks,
                         load_adapter, random_banks, random_select_channels,
                         save_adapter)
from .bench import (EvalCurves, SequenceMeta, auc, center_error, dp_at, evaluate,
                    iou, load_sequence, precision_curve, read_report, run_benchmark,
                    run_ope, success_curve, write_report)
from .errors import ConfigError, DataError
from .kcf import (KcfModel, KcfParams, detect, gaussian_labels, hann_window,
                  kernel_correlation, train_model, update_model)
from .runtime import (LayerSpec, NetworkSpec, bilinear_resize, conv2d, fft2,
                      forward_extract, identity_network, ifft2, load_network,
                      max_pool2d, relu, save_network)
from .tracker import (FeatureCache, Rect, TrackerConfig, TrackState,
                      WindowGeometry, compute_windows, crop_patch, fetch_features,
                      fuse_responses, init_tracker, track_frame)

__version__ = "0.1.0"
