"""Exception hierarchy shared by the toolkit."""


class Biped3DError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(Biped3DError):
    pass


class SingularImpactMatrix(Biped3DError):
    pass


class OffSurface(Biped3DError):
    pass


class DegeneratePhaseInterval(Biped3DError):
    pass


class ZeroPhaseRate(Biped3DError):
    pass


class SingularOutputSelection(Biped3DError):
    pass


class SingularDecoupling(Biped3DError):
    pass


class SingularReducedInertia(Biped3DError):
    pass


class NoImpact(Biped3DError):
    pass


class FallDetected(Biped3DError):
    pass


class IntegratorFailure(Biped3DError):
    pass


class NoReturn(Biped3DError):
    pass


class RiccatiDivergence(Biped3DError):
    pass


class InvalidChain(Biped3DError):
    pass


class EvaluationFailed(Biped3DError):
    def __init__(self, phase: str, message: str):
        super().__init__(f"[{phase}] {message}")
        self.phase = phase


class NoConvergence(Biped3DError):
    def __init__(self, message: str, best=None):
        super().__init__(message)
        self.best = best
