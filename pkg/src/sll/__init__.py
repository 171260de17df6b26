"""sll: a desk-scale split-learning laboratory.

Simulates two-party split learning over a deterministic numpy substrate and
implements a feature-alignment reconstruction attack (substitute client via
discriminator + multi-kernel MMD losses, decoder-based reconstruction),
three client-side defenses, and a gradient-anomaly detector.
"""

from .rng import Rng
from .network import (Network, LayerSpec, build_network, subnetwork,
                      conv, convT, linear, relu, tanh, maxpool, batchnorm, resblock)
from .losses import mse, cross_entropy, bce_logit, accuracy, sigmoid
from .optim import SGDMomentum, Adam, make_optimizer
from .gradcheck import grad_check
from .datasets import (ImageDataset, SyntheticSpec, gen_synthetic, load_cifar10,
                       save_cifar10, filter_categories, subsample)
from .framing import Message, frame_encode, frame_decode, save_tensors, load_tensors
from .models import (target_specs, substitute_specs, discriminator_specs,
                     inverse_specs, build_split_pair, split_index, smashed_shape)
from .protocol import SessionConfig, SessionResult, run_training, monolithic_train
from .attack import (AttackConfig, AttackObserver, CompositeObserver,
                     kernel_ladder, mmd2, mmd2_with_grad)
from .defenses import (DefenseConfig, Defense, make_defense, distance_correlation,
                       distance_correlation_grad, dp_sanitize, noise_obfuscate)
from .detection import GsConfig, GsState, make_monitor, batch_similarities
from .metrics import (psnr, ssim, image_mse, feature_similarity, MetricsReport,
                      write_grid_ppm, read_ppm, write_report)
from .experiment import (ConfigError, load_config, validate_config, config_hash,
                         run_experiment, run_sweep, preset_path, list_presets)

__version__ = "0.1.0"
