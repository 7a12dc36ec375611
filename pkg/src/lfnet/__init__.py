"""Lattice fusion networks for Gaussian image denoising, on a small NumPy autograd engine."""
from .autograd import backward_pass, forward_pass, grad_check
from .evaluation import denoise_image, evaluate_dataset, load_image, psnr, save_image, ssim
from .lattice import (LatticeSpec, NetworkModel, PlainSpec, analyze, build_lattice, build_plain, count_parameters,
                      distance_to_output, initialize_model, min_max_depth, receptive_field)
from .model_io import load_model, save_model
from .training import Fixed, TrainConfig, UniformRange, train

__version__ = "0.1.0"
