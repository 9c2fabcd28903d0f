"""Raw cycling records, cleaning filters, input matrices and synthetic corpora."""

from .filters import clean_outliers, savgol_coefficients, savitzky_golay
from .inputs import (N_TIMESTEPS, VARIANTS, InputTensor, Normalizer, PreprocessConfig, build_input,
                     build_raw, voltage_grid)
from .io import convert_dump, load_corpus, records_to_frame, save_corpus
from .records import CellRecord, ChargingPolicy, CycleTrace, IngestError
from .synthetic import SyntheticSpec, generate_synthetic, synthetic_fade

__all__ = [
    "CellRecord", "ChargingPolicy", "CycleTrace", "IngestError", "InputTensor", "N_TIMESTEPS",
    "Normalizer", "PreprocessConfig", "SyntheticSpec", "VARIANTS", "build_input", "build_raw",
    "clean_outliers", "convert_dump", "generate_synthetic", "load_corpus", "records_to_frame",
    "save_corpus", "savgol_coefficients", "savitzky_golay", "synthetic_fade", "voltage_grid",
]
