"""Exception hierarchy shared by every ridge module."""


class RidgeError(Exception):
    """Base class for all errors raised by this package."""


class GraphError(RidgeError):
    pass


class DuplicateEdge(GraphError):
    pass


class SelfLoop(GraphError):
    pass


class NodeIdOutOfRange(GraphError):
    pass


class NoTriangles(GraphError):
    pass


class InvalidConfig(RidgeError):
    pass


class GammaTooLarge(RidgeError):
    pass


class GraphSaturated(RidgeError):
    pass


class RankTooLarge(RidgeError):
    pass


class ShapeMismatch(RidgeError):
    pass


class NonScalarLoss(RidgeError):
    pass


class EmptyLabelSet(RidgeError):
    pass


class NonFiniteLoss(RidgeError):
    pass


class SingleClass(RidgeError):
    pass


class MalformedRow(RidgeError):
    def __init__(self, line: int, text: str, reason: str = "") -> None:
        self.line = line
        self.text = text
        msg = f"line {line}: malformed row {text!r}"
        if reason:
            msg += f" ({reason})"
        super().__init__(msg)


class EmptyFile(RidgeError):
    pass


class ManifestMismatch(RidgeError):
    pass
