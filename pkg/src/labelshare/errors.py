"""Exception types shared across the toolkit."""


class LabelShareError(Exception):
    """Base class for all toolkit errors."""


class EmptyInput(LabelShareError):
    pass


class MissingSizeRow(LabelShareError):
    def __init__(self, task_id, local_index):
        self.task_id = task_id
        self.local_index = local_index
        super().__init__(f"no size row for task {task_id!r}, label {local_index}")


class TaskTooLarge(LabelShareError):
    def __init__(self, task_id, n_task, n_star):
        self.task_id = task_id
        self.n_task = n_task
        self.n_star = n_star
        super().__init__(
            f"task {task_id!r} has {n_task} labels but the shared space has only "
            f"{n_star} groups"
        )


class DuplicateTask(LabelShareError):
    pass


class UnknownTask(LabelShareError):
    pass


class ShapeError(LabelShareError):
    pass


class NonFiniteCost(LabelShareError):
    pass


class ValidationError(LabelShareError):
    pass


class IoError(LabelShareError):
    pass


class ParseError(LabelShareError):
    pass


class MalformedHeader(ParseError):
    pass


class TruncatedData(ParseError):
    pass


class LabelNeverPresent(LabelShareError):
    def __init__(self, task_id, local_index):
        self.task_id = task_id
        self.local_index = local_index
        super().__init__(
            f"label {local_index} of task {task_id!r} appears in no sample"
        )


class EmptyManifest(LabelShareError):
    pass


class OutOfRangeLabel(LabelShareError):
    pass


class EmptyVolume(LabelShareError):
    pass


class PlacementFailure(LabelShareError):
    pass


class InvalidConfig(LabelShareError):
    pass


class AllChannelsMasked(LabelShareError):
    pass


class DomainMismatch(LabelShareError):
    pass


class EmptyDataset(LabelShareError):
    pass


class FingerprintMismatch(LabelShareError):
    pass


class VersionMismatch(LabelShareError):
    pass


class CorruptPayload(LabelShareError):
    pass


class EmptyForeground(LabelShareError):
    pass


class EmptySet(LabelShareError):
    def __init__(self, side):
        self.side = side
        super().__init__(f"{side} point set is empty")
