"""
Exception hierarchy shared by the device model, the file system and the tools.
"""


class DurableFSError(Exception):
    """Base class for every error raised by DurableFS."""


class DeviceError(DurableFSError):
    pass


class BoundsError(DeviceError):
    pass


class AlignmentError(DeviceError):
    pass


class ReadBackMismatchError(DeviceError):
    """Commit record read back from the device differs from the value written."""


class FormatError(DurableFSError):
    pass


class CorruptionError(DurableFSError):
    pass


class LogFullError(DurableFSError):
    """Log has no free slot even after trimming; the caller must wait for commits."""


class FieldWidthError(DurableFSError):
    pass


class TxnError(DurableFSError):
    pass


class BusyError(TxnError):
    pass


class DoubleFreeError(TxnError):
    pass


class TxnStateError(TxnError):
    pass


class NoSpaceError(DurableFSError):
    pass


class FsError(DurableFSError):
    pass


class NotFoundError(FsError):
    pass


class ExistsError(FsError):
    pass


class NotEmptyError(FsError):
    pass


class TypeMismatchError(FsError):
    pass


class HandleClosedError(FsError):
    pass


class ReadOnlyHandleError(FsError):
    pass


class InvalidPathError(FsError):
    pass


class ScriptError(DurableFSError):
    pass
