"""Error taxonomy shared by every stage.

Each error carries the process exit code the CLI reports for it.
"""


class PruningError(Exception):
    exit_code = 1


class ConfigError(PruningError):
    exit_code = 2


class DataFormatError(PruningError):
    exit_code = 3

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class InfeasibleAllocationError(PruningError):
    exit_code = 4


class EmptySelectionError(PruningError):
    exit_code = 5


class AllocationInvariantError(PruningError):
    """The allocator produced counts the selection stage cannot honour."""


class StageError(PruningError):
    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, 'exit_code', PruningError.exit_code)
