"""On-the-fly simulation of target speaker extraction training data."""

__version__ = "0.1.0"

from .audio import (AudioClip, convolve, read_wav, rescale_to_snr, rms,
                    sum_and_rescale, write_wav)
from .config import SimConfig
from .fusion import AffineProjection, fuse_add, fuse_concat, fuse_film, fuse_multiply
from .metrics import si_snr, snr
from .rir import Rir, SyntheticRirConfig, load_rir_set, pick_rir, synth_rir
from .shards import Catalog, UtteranceRecord, build_catalog, pack_shards, stream_shards
from .simulate import (MixtureSpec, TrainingExample, assemble_mixture, dsm_select,
                       export_batch, sample_enrollment, simulate_stream)

__all__ = [
    "AudioClip", "convolve", "read_wav", "rescale_to_snr", "rms", "sum_and_rescale", "write_wav",
    "SimConfig", "AffineProjection", "fuse_add", "fuse_concat", "fuse_film", "fuse_multiply",
    "si_snr", "snr", "Rir", "SyntheticRirConfig", "load_rir_set", "pick_rir", "synth_rir",
    "Catalog", "UtteranceRecord", "build_catalog", "pack_shards", "stream_shards",
    "MixtureSpec", "TrainingExample", "assemble_mixture", "dsm_select", "export_batch",
    "sample_enrollment", "simulate_stream",
]
