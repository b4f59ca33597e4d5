"""Texture forensics: GLCM contrast analysis, image edits, and Gram-Net detection."""

from .editing import EditSpec, apply_edit, bilinear_resize, gaussian_blur, add_gaussian_noise, jpeg_codec, l0_smooth
from .gram import BaselineNet, GramBlock, GramNet, GramNetConfig, build_model, covariance_matrix, gram_matrix
from .image import center_crop, load_image, save_image, to_grayscale
from .texture import compute_glcm, contrast_correlation_analysis, contrast_from_glcm, dataset_contrast, pearson

__version__ = "0.1.0"
