"""Exception hierarchy shared by the toolkit and mapped to CLI exit codes."""


class SpinCatError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 3


class NumericalError(SpinCatError):
    """A numerical routine could not meet its contract."""

    exit_code = 3


class StepSizeUnderflow(NumericalError):
    """Propagation tolerance unreachable before the step size underflowed."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class NoLocalMaximum(NumericalError):
    """A fidelity trace has no interior local maximum."""


class ResamplingCapExceeded(NumericalError):
    """A noise batch never satisfied its moment constraints."""


class ExperimentFailed(NumericalError):
    """Too many trials of a noise experiment failed."""


class ConstraintInfeasible(SpinCatError):
    """No scanned drive satisfies the displacement-angle constraint."""

    exit_code = 4
