from .dataset import Dataset, preprocess
from .features import Contexts, encode_contexts, repeat_time, repeat_zones
from .ingest import (FieldSet, SpatioTemporalField, WeatherEncoder, aggregate_orders, aggregate_trajectories,
                     encode_weather, haversine_km)
from .partition import Grid, TimeAxis, partition_time
from .samples import (FeatureRoster, InputBlock, Normalizer, SampleBatch, SampleSet, SplitSpec, make_samples)
from .synth import synth_generate, write_raw

__all__ = [
    "Dataset", "preprocess",
    "Contexts", "encode_contexts", "repeat_time", "repeat_zones",
    "FieldSet", "SpatioTemporalField", "WeatherEncoder", "aggregate_orders", "aggregate_trajectories",
    "encode_weather", "haversine_km",
    "Grid", "TimeAxis", "partition_time",
    "FeatureRoster", "InputBlock", "Normalizer", "SampleBatch", "SampleSet", "SplitSpec", "make_samples",
    "synth_generate", "write_raw",
]
