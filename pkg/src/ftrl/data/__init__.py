from .features import DEFAULT_FEATURES, price_features
from .frame import CsvFormatError, SchemaError, SeriesFrame, load_csv, write_csv
from .indicators import bollinger, ema, forward_fill, log_returns, macd, rsi
from .synth import PRESETS, Regime, SynthSpec, preset_frame, preset_spec, spectral_radius, synth_generate
from .windows import SPLITS, WindowedDataset, make_windows, raw_split_counts, split

__all__ = [
    "CsvFormatError", "DEFAULT_FEATURES", "PRESETS", "Regime", "SPLITS", "SchemaError", "SeriesFrame",
    "SynthSpec", "WindowedDataset", "bollinger", "ema", "forward_fill", "load_csv", "log_returns", "macd",
    "make_windows", "preset_frame", "preset_spec", "price_features", "raw_split_counts", "rsi",
    "spectral_radius", "split", "synth_generate", "write_csv",
]
