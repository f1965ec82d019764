"""Exception hierarchy shared by all acml modules."""


class AcmlError(Exception):
    pass


# parsing


class SmilesError(AcmlError, ValueError):
    """Base class for SMILES input that cannot be turned into a graph."""


class SmilesSyntaxError(SmilesError):
    pass


class UnclosedRing(SmilesError):
    pass


class UnbalancedParenthesis(SmilesError):
    pass


class UnknownAtomSymbol(SmilesError):
    pass


class ValenceOverflow(SmilesError):
    pass


class MultiFragmentInput(SmilesError):
    pass


class OversizeGraph(SmilesError):
    pass


class InvalidPermutation(AcmlError, ValueError):
    pass


# tensors


class ShapeMismatch(AcmlError, ValueError):
    pass


class InvalidSegmentIds(AcmlError, ValueError):
    pass


class NonScalarLoss(AcmlError, ValueError):
    pass


class NonFiniteLoss(AcmlError, FloatingPointError):
    pass


# encoders / stores


class EmptyGraph(AcmlError, ValueError):
    pass


class DimMismatch(AcmlError, ValueError):
    pass


class MissingEmbedding(AcmlError, KeyError):
    pass


class KindMismatch(AcmlError, TypeError):
    pass


class NegativeIntensity(AcmlError, ValueError):
    pass


class CorruptStore(AcmlError, ValueError):
    pass


class CorruptCheckpoint(AcmlError, ValueError):
    pass


# training / evaluation


class EmptyDataset(AcmlError, ValueError):
    pass


class TargetNotInPool(AcmlError, KeyError):
    pass


class DegenerateData(AcmlError, ValueError):
    pass


class ConstantInput(AcmlError, ValueError):
    pass


class RankDeficient(AcmlError, ValueError):
    pass


class MissingProperty(AcmlError, KeyError):
    pass


class SingleClassTask(AcmlError, ValueError):
    pass


class LengthMismatch(AcmlError, ValueError):
    pass


class EmptySplit(AcmlError, ValueError):
    pass


class ConfigError(AcmlError, ValueError):
    pass
