"""Exception hierarchy shared across the package."""


class ProxyNetError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(ProxyNetError):
    """Invalid run configuration; carries the offending key."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"config key '{key}': {message}")


# -- split / episode construction ------------------------------------------

class OverlapError(ProxyNetError):
    """Meta-split class sets are not pairwise disjoint."""

    def __init__(self, overlaps: dict[str, set]):
        self.overlaps = overlaps
        parts = [f"{pair}: {sorted(classes)}" for pair, classes in overlaps.items()]
        super().__init__("overlapping classes between splits: " + "; ".join(parts))


class MissingClassError(ProxyNetError):
    def __init__(self, missing: set):
        self.missing = missing
        super().__init__(f"classes listed in the split manifest but absent from the index: {sorted(missing)}")


class InsufficientClassesError(ProxyNetError):
    def __init__(self, available: int, required: int):
        self.available = available
        self.required = required
        super().__init__(f"need {required} classes for an episode but the index has {available}")


class InsufficientSamplesError(ProxyNetError):
    def __init__(self, class_id: str, available: int, required: int):
        self.class_id = class_id
        self.available = available
        self.required = required
        super().__init__(
            f"class '{class_id}' has {available} samples but the task needs {required} "
            f"(short by {required - available})"
        )


# -- dataset ingestion -------------------------------------------------------

class ParseError(ProxyNetError):
    def __init__(self, path, line_no: int, message: str):
        self.path = path
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {message}")


class EmptySplitError(ProxyNetError):
    def __init__(self, split: str):
        self.split = split
        super().__init__(f"split '{split}' contains no classes")


class DuplicateSampleError(ProxyNetError):
    def __init__(self, path, line_no: int, filename: str, class_id: str):
        self.filename = filename
        self.class_id = class_id
        super().__init__(f"{path}:{line_no}: duplicate sample ({filename}, {class_id})")


class DecodeError(ProxyNetError):
    pass


class DegenerateImageError(ProxyNetError):
    def __init__(self, size):
        self.size = size
        super().__init__(f"image of size {size} is too small to preprocess (every side must be >= 8 px)")


# -- model-side --------------------------------------------------------------

class ShapeError(ProxyNetError):
    pass


class ShapeMismatchError(ShapeError):
    pass


class UnknownBackboneError(ProxyNetError):
    def __init__(self, name: str, known):
        self.name = name
        super().__init__(f"unknown backbone '{name}' (known: {', '.join(sorted(known))})")


class GroupingError(ProxyNetError):
    pass


class ZeroVectorError(ProxyNetError):
    pass


# -- training / evaluation ---------------------------------------------------

class DivergenceError(ProxyNetError):
    def __init__(self, epoch: int, episode: int, loss):
        self.epoch = epoch
        self.episode = episode
        super().__init__(f"non-finite training loss ({loss}) at epoch {epoch}, episode {episode}")


class InsufficientTasksError(ProxyNetError):
    def __init__(self, n: int):
        self.n = n
        super().__init__(f"confidence interval needs at least 2 per-task accuracies, got {n}")


class CheckpointMismatchError(ProxyNetError):
    pass
