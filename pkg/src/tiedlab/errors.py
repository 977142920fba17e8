"""Exception types raised across tiedlab."""


class TiedlabError(Exception):
    pass


class ShapeError(TiedlabError, ValueError):
    """Tensor shapes or channel counts are incompatible with an operation."""


class InputError(TiedlabError, ValueError):
    """An argument value is out of its legal range."""


class ConfigError(TiedlabError, ValueError):
    """A model configuration failed to parse or validate.

    ``index`` is the offending layer position when the error is layer-specific.
    """

    def __init__(self, message, index=None):
        if index is not None:
            message = f"layer {index}: {message}"
        super().__init__(message)
        self.index = index
