"""Exception types raised across the package."""


class MMFlowError(ValueError):
    """Base class for all package errors."""


# graph / task model
class DuplicateModality(MMFlowError):
    pass


class OverlappingSets(MMFlowError):
    pass


class UncoveredModality(MMFlowError):
    pass


class MissingPriorAssignment(MMFlowError):
    pass


class EmptyLigand(MMFlowError):
    pass


class MissingModality(MMFlowError):
    pass


# chemistry
class EmptyCorpus(MMFlowError):
    pass


class OutOfVocabulary(MMFlowError):
    pass


class NoEligibleFeatures(MMFlowError):
    pass


class BadDimension(MMFlowError):
    pass


class MissingMetadata(MMFlowError):
    pass


# flow matching
class SizeMismatch(MMFlowError):
    pass


class InvalidInput(MMFlowError):
    pass


class MissingWeight(MMFlowError):
    pass


class PastTerminal(MMFlowError):
    pass


class DenoiserContract(MMFlowError):
    pass


# network / autodiff / training
class DegenerateEdge(MMFlowError):
    pass


class NotScalar(MMFlowError):
    pass


class NonFiniteLoss(MMFlowError):
    pass


class RegistryMismatch(MMFlowError):
    pass


class CorruptCheckpoint(MMFlowError):
    pass


# storage
class ElementFilter(MMFlowError):
    pass
