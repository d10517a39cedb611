"""Exception hierarchy.

Every error carries the name of the module that raised it so the command
line can print ``module: ErrorName: message`` without inspecting tracebacks.
"""


class TripletSpaceError(Exception):
    module = "tripletspace"

    def __str__(self):
        msg = super().__str__()
        return f"{self.module}: {type(self).__name__}: {msg}"


# geometry
class GeometryError(TripletSpaceError):
    module = "geometry"


class ZeroVector(GeometryError):
    pass


class DimMismatch(TripletSpaceError, ValueError):
    module = "geometry"


# model
class ModelError(TripletSpaceError):
    module = "model"


class InvalidConfig(ModelError, ValueError):
    pass


class ShapeMismatch(ModelError, ValueError):
    pass


class CorruptCheckpoint(ModelError):
    pass


# loss
class IndexOutOfRange(TripletSpaceError, IndexError):
    module = "loss"


# mining
class MiningError(TripletSpaceError):
    module = "mining"


class InsufficientIdentities(MiningError):
    pass


class InsufficientSamples(MiningError):
    pass


class NoNegatives(MiningError):
    pass


# trainer
class TrainerError(TripletSpaceError):
    module = "trainer"


class CollapseDetected(TrainerError):
    pass


class ConfigError(TrainerError, ValueError):
    pass


# eval
class EvalError(TripletSpaceError):
    module = "eval"


class EmptyPairSet(EvalError):
    pass


class MissingDistance(EvalError, KeyError):
    pass


class EmptyReport(EvalError):
    pass


class BadPartition(EvalError, ValueError):
    pass


class CorruptFile(TripletSpaceError):
    module = "dataio"


# harmonic
class HarmonicError(TripletSpaceError):
    module = "harmonic"


class StageOrderViolation(HarmonicError):
    pass


class MissingEmbedding(HarmonicError, KeyError):
    pass


# cluster
class ClusterError(TripletSpaceError):
    module = "cluster"


class EmptyInput(ClusterError, ValueError):
    pass


class LabelMismatch(ClusterError, ValueError):
    pass


# dataio
class DataError(TripletSpaceError):
    module = "dataio"


class InvalidSpec(DataError, ValueError):
    pass


class TooFewIdentities(DataError):
    pass
