"""Exception types raised across the package."""


class MVHetError(Exception):
    """Base class for all library errors."""


# graph / schema
class UnknownType(MVHetError, KeyError):
    pass


class EndpointOutOfRange(MVHetError, IndexError):
    pass


class FeatureShapeMismatch(MVHetError, ValueError):
    pass


class MissingInversePair(MVHetError, ValueError):
    pass


# ingest
class ParseError(MVHetError, ValueError):
    def __init__(self, path, line: int, column: int, msg: str):
        self.path, self.line, self.column = path, line, column
        super().__init__(f"{path}:{line}:{column}: {msg}")


class ManifestInvalid(MVHetError, ValueError):
    pass


class SpecInvalid(MVHetError, ValueError):
    pass


# tensor
class ShapeMismatch(MVHetError, ValueError):
    pass


class InvalidProbability(MVHetError, ValueError):
    pass


class EmptyMask(MVHetError, ValueError):
    pass


class NotScalarLoss(MVHetError, ValueError):
    pass


# views
class TypeChainBroken(MVHetError, ValueError):
    def __init__(self, level: int, msg: str = ""):
        self.level = level
        super().__init__(f"metapath type chain broken at level {level}" + (f": {msg}" if msg else ""))


class UnknownRelation(MVHetError, KeyError):
    pass


class TypeMismatch(MVHetError, ValueError):
    pass


# model
class RowCountMismatch(MVHetError, ValueError):
    pass


class EmptyViewSet(MVHetError, ValueError):
    pass


class IndexOutOfRange(MVHetError, IndexError):
    pass


class CheckpointShapeMismatch(MVHetError, ValueError):
    pass


# trainer
class MissingLabels(MVHetError, ValueError):
    pass


class MissingLinkSplit(MVHetError, ValueError):
    pass


class EmptyPositives(MVHetError, ValueError):
    pass


class NonFiniteLoss(MVHetError, FloatingPointError):
    def __init__(self, epoch: int, parts: dict):
        self.epoch, self.parts = epoch, parts
        super().__init__(f"non-finite loss at epoch {epoch}: {parts}")


# evalkit
class DegenerateSplit(MVHetError, ValueError):
    pass


class SingleClass(MVHetError, ValueError):
    pass


# cli / config
class UnknownVariant(MVHetError, ValueError):
    pass


class ConfigError(MVHetError, ValueError):
    pass
