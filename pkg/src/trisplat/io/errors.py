class DataError(ValueError):
    """Malformed or inconsistent input data (files, manifests, masks)."""


class FormatError(DataError):
    """Structured parse failure pointing at a file and line."""

    def __init__(self, path, line, msg):
        self.path = str(path)
        self.line = line
        where = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{where}: {msg}")
