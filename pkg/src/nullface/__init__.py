"""Training-free face anonymization by diffusion inversion.

Recover per-step noise maps from an input latent, then re-denoise under
negated identity-embedding guidance with optional region masks.
"""

from .conditioning import (AdapterParams, IdentityEmbedding, decoupled_attention,
                           extract_embedding, negate_scale, null_embedding)
from .denoiser import (AnonymizationConfig, GuidedStepTrace, anonymize,
                       anonymize_from_top, guidance_combine, mask_combine)
from .errors import (DataCorruptionError, FaceNotFoundError,
                     FingerprintMismatchError, NullfaceError, PluginError,
                     ValidationError)
from .estimator import FaceAnonymizer
from .evaluation import (MetricsReport, attack_recover, frechet_distance,
                         identity_distance, re_id_rate, run_sweep)
from .inversion import (InversionRecord, invert, load_record, save_record,
                        verify_roundtrip)
from .masks import (PRESET_NAMES, RegionMask, SegmentationMap, complement,
                    full_mask, load_mask_file, mask_from_regions, preset_mask,
                    save_mask_file)
from .schedule import (NoiseSchedule, add_noise, default_schedule,
                       make_linear_schedule, posterior_mean, schedule_from_betas,
                       schedule_from_json, schedule_to_json)

__version__ = "0.1.0"

__all__ = [
    "AdapterParams", "AnonymizationConfig", "DataCorruptionError",
    "FaceAnonymizer", "FaceNotFoundError", "FingerprintMismatchError",
    "GuidedStepTrace", "IdentityEmbedding", "InversionRecord", "MetricsReport",
    "NoiseSchedule", "NullfaceError", "PRESET_NAMES", "PluginError",
    "RegionMask", "SegmentationMap", "ValidationError", "add_noise",
    "anonymize", "anonymize_from_top", "attack_recover", "complement",
    "decoupled_attention", "default_schedule", "extract_embedding",
    "frechet_distance", "full_mask", "guidance_combine", "identity_distance",
    "invert", "load_mask_file", "load_record", "make_linear_schedule",
    "mask_combine", "mask_from_regions", "negate_scale", "null_embedding",
    "posterior_mean", "preset_mask", "re_id_rate", "run_sweep", "save_mask_file",
    "save_record", "schedule_from_betas", "schedule_from_json",
    "schedule_to_json", "verify_roundtrip",
]
