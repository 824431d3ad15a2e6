class SplatsegError(Exception):
    """Base class for pipeline errors."""


class SceneFormatError(SplatsegError):
    """Malformed or inconsistent input file (scene PLY, cameras JSON, mask PNG)."""


class TrainDivergedError(SplatsegError):
    """Training objective became non-finite."""
