"""Segmentation networks trained from object-size labels.

The size of a binary mask is twice the largest Chebyshev distance from a
foreground pixel to the background. Because that size is a discrete function
of a sampled mask, networks are trained through an unbiased flip estimator of
the gradient of the expected squared size error.
"""
from .grid import BACKGROUND, FOREGROUND, GridError, iou, size_error, threshold
from .dtransform import SaturatedMaskError, chebyshev_dt, chebyshev_dt_bruteforce, chebyshev_dt_batch
from .sizefn import FlipSizeTable, flip_size_table, flip_size_table_fast, object_size
from .stochastic import (NoiseSpec, expected_loss_exact, expected_loss_mc, logistic_cdf, make_rng,
                         prob_map, sample_mask)
from .estimator import (EstimatorConfig, chain_to_logits, exact_grad_wrt_probs, flip_estimate,
                        single_sample_grad)
from .network import (Architecture, NetworkParams, OptimizerState, forward, init_params,
                      load_checkpoint, save_checkpoint, sgd_step)
from .data import (DatasetSplit, MaskedSample, SizedSample, generate_synthetic, load_split, save_split,
                   split_dataset)
from .training import TrainConfig, evaluate, finetune, pretrain
from .verify import verify

__version__ = "0.1.0"
