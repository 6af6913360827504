"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration: shape/width mismatches, bad parameter values."""


class ContractError(ValueError):
    """An operation was called with inputs violating its numeric contract."""


class FormatError(ValueError):
    """Malformed bitstream, dataset file, or CSV."""


class DecodeError(FormatError):
    """Bitstream payload cannot be decoded (truncated or inconsistent)."""


class RangeError(ValueError):
    """A value fell outside the representable/encodable range."""
