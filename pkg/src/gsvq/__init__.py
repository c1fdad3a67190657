"""Vector-quantised compression of 3D Gaussian splat clouds."""
from gsvq.codec import decode, encode, size_report
from gsvq.compressor import CompressionConfig, compress, finetune_frozen, prune, train_codebooks
from gsvq.metrics import EvalReport, attribute_mse, evaluate, psnr
from gsvq.quantized import QuantizedCloud, canonicalize, dequantize
from gsvq.renderer import Camera, load_cameras, render, render_colour_backward, save_cameras
from gsvq.splat_model import GaussianSplat, SplatCloud, load_ply, save_ply
from gsvq.synth import SceneSpec, generate_cloud, generate_orbit_cameras
from gsvq.vq import Codebook, kmeans_init, nsvq_backward, quantize_hard, quantize_nsvq, replace_inactive

__version__ = "0.1.0"
