class ConfigError(ValueError):
    """Invalid network configuration or mismatched layer shapes."""

    def __init__(self, message, line=None, layer=None):
        self.line = line
        self.layer = layer
        prefix = []
        if line is not None:
            prefix.append(f"line {line}")
        if layer is not None:
            prefix.append(f"layer {layer}")
        if prefix:
            message = f"{', '.join(prefix)}: {message}"
        super().__init__(message)


class DataError(ValueError):
    """Malformed input data: images, label files, manifests, detections."""


class WeightsFormatError(DataError):
    """Weights file that does not match the network layout."""
