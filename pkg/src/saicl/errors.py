"""Error type carrying the stable error codes surfaced by every module and the CLI."""


class SaiclError(ValueError):
    """Raised with a short machine-readable ``code`` (e.g. ``"empty_batch"``)."""

    def __init__(self, code: str, message: str = ""):
        self.code = code
        self.message = message
        super().__init__(f"{code}: {message}" if message else code)
