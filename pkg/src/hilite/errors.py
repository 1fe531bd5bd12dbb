"""Exception hierarchy.

Every domain error carries a short machine-readable ``code`` so the CLI can
report it as ``{"code": ..., "message": ...}``.
"""


class HiliteError(Exception):
    code = "error"


class MissingFileError(HiliteError, FileNotFoundError):
    code = "missing_file"


class UnsupportedFormatError(HiliteError):
    code = "unsupported_format"


class CorruptImageError(HiliteError):
    code = "corrupt_image"


class UnwritablePathError(HiliteError):
    code = "unwritable_path"


class DimensionMismatchError(HiliteError, ValueError):
    code = "dimension_mismatch"


class ImageTooSmallError(HiliteError, ValueError):
    code = "image_too_small"


class DepthTooLargeError(HiliteError, ValueError):
    code = "depth_too_large"


class UndefinedClassError(HiliteError, ValueError):
    """BER requested while one of the ground-truth classes is empty."""

    code = "undefined_class"

    def __init__(self, empty_class: str):
        self.empty_class = empty_class
        super().__init__(f"ground truth has no {empty_class} pixels; BER is undefined")


class NonFiniteError(HiliteError, ValueError):
    code = "non_finite"


class InvalidRangeError(HiliteError, ValueError):
    code = "invalid_range"


class ManifestError(HiliteError):
    code = "manifest"


class EmptyRootError(ManifestError):
    code = "empty_root"


class DuplicateIdError(ManifestError):
    code = "duplicate_id"

    def __init__(self, pair_id: str, first: str, second: str):
        self.pair_id = pair_id
        self.paths = (first, second)
        super().__init__(f"duplicate id {pair_id!r}: {first} and {second}")


class EmptyManifestError(ManifestError):
    code = "empty_manifest"
