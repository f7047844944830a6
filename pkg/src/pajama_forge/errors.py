class PajamaForgeError(Exception):
    """Base class for data errors raised by the toolkit (CLI exit code 2)."""


class CorpusError(PajamaForgeError):
    """Malformed shard, manifest, or record."""


class ParamsMismatchError(PajamaForgeError):
    """Signatures or artifacts built with incompatible parameters."""


class BpeError(PajamaForgeError):
    """Invalid vocab/merges files or an unencodable symbol."""
