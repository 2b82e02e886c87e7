# Use of this source code is governed by a MIT-style
# license that can be found in the LICENSE file.


class LowBendError(Exception):
    "Base class for all errors"
    pass


class ParameterError(LowBendError):
    "Something's wrong with user supplied parameters"
    pass


class InvalidArgumentError(LowBendError):
    "A point does not belong to the manifold it was handed to"
    pass


class AmbiguousGeodesicError(LowBendError):
    "Two points are too far apart for a unique minimizing geodesic"
    pass


class GeometryDomainError(LowBendError):
    "Tangent vector or point pair outside the domain of exp/log"
    pass


class PathologicalEpsilonError(LowBendError):
    "The locality radius is so small that rejection sampling stalls"
    pass


class DegenerateGeometryError(LowBendError):
    "The sundial line of sight runs parallel to the ground plane"
    pass


class ShapeError(LowBendError):
    "Array shapes do not fit together"
    pass


class GradientError(LowBendError):
    "Backward pass or optimizer step cannot proceed"
    pass


class CollapsedEncoderError(LowBendError):
    "The encoder maps nearby points onto (almost) the same code"
    pass


class SingularGammaError(LowBendError):
    "Gamma is infinite because the matrix is rank deficient"
    pass


class DatasetLoadError(LowBendError):
    "Something went wrong when reading a dataset or checkpoint file"
    pass


class TrainingError(LowBendError):
    "Training produced a non-finite loss, the last good state was saved"

    def __init__(self, message, checkpoint_path=None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path
