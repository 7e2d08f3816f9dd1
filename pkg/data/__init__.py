from data.tabular import (
    DatasetSchema,
    MinMaxScaler,
    RawTable,
    TabularDataset,
    encode_frame,
    load_and_scale,
    load_table,
    random_split,
    split_table,
    table_from_arrays,
)
from data.shift import ShiftReport, ShiftSpec, fit_glm, make_shift_split
from data.series import SeriesDataset, load_series, series_from_values, window_series
from data.synthetic import (
    ackley,
    ackley_arrays,
    ackley_noise_scale,
    gen_ackley,
    gen_ar1,
    gen_random_walk,
    series_frame,
)

__all__ = [
    "DatasetSchema",
    "MinMaxScaler",
    "RawTable",
    "TabularDataset",
    "encode_frame",
    "load_and_scale",
    "load_table",
    "random_split",
    "split_table",
    "table_from_arrays",
    "ShiftReport",
    "ShiftSpec",
    "fit_glm",
    "make_shift_split",
    "SeriesDataset",
    "load_series",
    "series_from_values",
    "window_series",
    "ackley",
    "ackley_arrays",
    "ackley_noise_scale",
    "gen_ackley",
    "gen_ar1",
    "gen_random_walk",
    "series_frame",
]
