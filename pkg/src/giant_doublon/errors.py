"""Exception hierarchy shared by all modules."""


class DoublonError(Exception):
    """Base class for all engine errors."""


class ConfigurationError(DoublonError, ValueError):
    """Invalid parameters or geometry."""


class GeometryError(ConfigurationError):
    """A coupling point or bond lies outside the lattice."""


class OutOfBand(DoublonError):
    """Twice the emitter detuning lies outside the doublon band."""


class OnBandSingularity(DoublonError):
    """Energy lies inside the relative-motion continuum."""


class ResonantSinglePhoton(DoublonError):
    """An emitter is resonant with the single-photon band."""


class SinglePhotonLeak(ResonantSinglePhoton):
    """Frequency mismatch pushes one emitter into the single-photon band."""


class NumericalError(DoublonError):
    """Base class for integration failures."""


class StepSizeUnderflow(NumericalError):
    pass


class NormDrift(NumericalError):
    pass


class StabilityError(NumericalError):
    pass


class NonMonotonic(NumericalError):
    """Population trace oscillates inside the fit window."""


class LowOccupation(DoublonError):
    """Photon-pair sector is (nearly) empty."""


class PositivityLoss(NumericalError):
    pass


class DegenerateSteadyState(NumericalError):
    def __init__(self, message, basis=None):
        super().__init__(message)
        self.basis = basis


class PoleProximity(NumericalError):
    """Pulse denominator approaches zero."""


class ReflectionContamination(NumericalError):
    pass


class SequenceError(DoublonError):
    pass
