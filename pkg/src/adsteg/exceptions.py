"""Exception hierarchy shared by the channel, codec and CLI layers."""


class ADSError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(ADSError, ValueError):
    """Invalid parameter or configuration value."""


class ChannelError(ADSError):
    """A channel could not produce a sample."""


class ChannelFormatError(ChannelError, ValueError):
    """Malformed channel file or invalid channel parameters."""


class ChannelUnusableError(ChannelError):
    """The channel answered non-deterministically or the transport failed."""


class ScriptExhaustedError(ChannelError, KeyError):
    """A replay channel was queried outside its script."""


class DistributionUnavailableError(ChannelError):
    """The channel does not expose an explicit next-token distribution."""


class DesyncError(ADSError):
    """Decoder state diverged from the encoder (wrong key or channel drift)."""


class PrefixLimitError(ADSError):
    """Expansion would push the embedded prefix past the configured maximum."""


class TranscriptFormatError(ADSError, ValueError):
    """Malformed transcript file."""
