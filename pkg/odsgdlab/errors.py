class LabError(Exception):
    """Base class for every error raised by odsgdlab"""


class ShapeError(LabError):
    def __init__(self, subject, message_fmt="Shape mismatch: {subject}"):
        self.subject = subject
        self.message = message_fmt.format(subject=subject)
        super().__init__(self.message)


class NumericError(LabError):
    def __init__(self, subject, message_fmt="Non-finite value produced by {subject}"):
        self.subject = subject
        self.message = message_fmt.format(subject=subject)
        super().__init__(self.message)


class ConfigError(LabError):
    def __init__(self, field, detail, message_fmt="Invalid configuration for {field}: {detail}"):
        self.field = field
        self.detail = detail
        self.message = message_fmt.format(field=field, detail=detail)
        super().__init__(self.message)


class FormatError(LabError):
    def __init__(self, subject, detail, line=None, message_fmt="Malformed {subject}: {detail}"):
        self.subject = subject
        self.detail = detail
        self.line = line
        self.message = message_fmt.format(subject=subject, detail=detail)
        if line is not None:
            self.message += f' (line {line})'
        super().__init__(self.message)


class IoError(LabError):
    def __init__(self, path, detail, message_fmt="Unable to read {path}: {detail}"):
        self.path = path
        self.detail = detail
        self.message = message_fmt.format(path=path, detail=detail)
        super().__init__(self.message)


class ProtocolError(LabError):
    def __init__(self, subject, message_fmt="Protocol violation: {subject}"):
        self.subject = subject
        self.message = message_fmt.format(subject=subject)
        super().__init__(self.message)
