"""Adaptive dynamic sampling steganography over seed-controlled channels."""

from .ads import (
    CollisionSet,
    DecodeResult,
    StegoTranscript,
    StepMap,
    StopMode,
    StopPolicy,
    build_step_map,
    choose_token,
    decode,
    encode,
    expand,
    filter_candidates,
    init_collision_set,
    shared_prefix,
)
from .channel import (
    Channel,
    MarkovChannel,
    RemoteChannel,
    RemoteConfig,
    ReplayChannel,
    UniformChannel,
    dumps_channel,
    load_channel,
    next_distribution,
    sample,
)
from .estimator import AdaptiveDynamicSampling
from .keystream import FrameStatus, derive_seed, frame, key_gen, mask, unframe, unmask

__version__ = "0.1.0"

__all__ = [
    "AdaptiveDynamicSampling",
    "Channel",
    "CollisionSet",
    "DecodeResult",
    "FrameStatus",
    "MarkovChannel",
    "RemoteChannel",
    "RemoteConfig",
    "ReplayChannel",
    "StegoTranscript",
    "StepMap",
    "StopMode",
    "StopPolicy",
    "UniformChannel",
    "build_step_map",
    "choose_token",
    "decode",
    "derive_seed",
    "dumps_channel",
    "encode",
    "expand",
    "filter_candidates",
    "frame",
    "init_collision_set",
    "key_gen",
    "load_channel",
    "mask",
    "next_distribution",
    "sample",
    "shared_prefix",
    "unframe",
    "unmask",
]
