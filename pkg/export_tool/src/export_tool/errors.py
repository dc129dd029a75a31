"""Error taxonomy for the export tool."""


class ExportToolError(Exception):
    """Base class; CLI maps these to exit code 3."""


class DatasetScanError(ExportToolError):
    """The dataset tree is missing, empty, or malformed."""


class DecodeError(ExportToolError):
    """An image file exists but cannot be decoded."""


class UnknownBackboneError(ExportToolError):
    """Requested backbone name is not in the registry."""


class UnsupportedSizeError(ExportToolError):
    """Requested input size is not supported by the chosen backbone."""


class BackboneLoadError(ExportToolError):
    """Pretrained weights could not be imported or downloaded."""


class FormatError(ExportToolError):
    """An embedding file violates the binary layout."""
