"""Degradation-prompted selective state-space restoration engine (numpy)."""
from .degradation import DegradationSpec, LabeledSample, degrade, make_corpus
from .extractor import ExtractorNet, extract, linear_probe, pretrain_extractor
from .losses import LossConfig, psnr, ssim, total_loss
from .modulation import ModulationHeads, delta_stats, dp_scan
from .network import DpmambaNet, Restorer, build_restorer, load_restorer, save_restorer
from .ssm import ScanInputs, SsmParams, discretize_zoh, scan, scan_backward, scan_parallel, scan_sequential

__version__ = "0.1.0"

__all__ = [
    "DegradationSpec", "LabeledSample", "degrade", "make_corpus",
    "ExtractorNet", "extract", "linear_probe", "pretrain_extractor",
    "LossConfig", "psnr", "ssim", "total_loss",
    "ModulationHeads", "delta_stats", "dp_scan",
    "DpmambaNet", "Restorer", "build_restorer", "load_restorer", "save_restorer",
    "ScanInputs", "SsmParams", "discretize_zoh", "scan", "scan_backward", "scan_parallel", "scan_sequential",
]
