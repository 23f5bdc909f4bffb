"""Exception hierarchy. Exit codes used by the command line are attached to the classes."""


class TransportError(Exception):
    exit_code = 2


class ConfigError(TransportError, ValueError):
    """Invalid problem configuration. Carries every problem found, not just the first."""

    exit_code = 1

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class DomainError(TransportError, ValueError):
    """Argument outside the domain of a cost or Hamiltonian evaluation."""

    exit_code = 1


class StructuralError(TransportError, ValueError):
    """Objects built on different lattices or with incompatible shapes."""

    exit_code = 1


class NumericalError(TransportError, RuntimeError):
    exit_code = 2

    def __init__(self, message, residual=None, history=None):
        super().__init__(message)
        self.residual = residual
        self.history = history


class InfeasibleError(TransportError):
    """The target marginal cannot be reached; ``certificate`` is a Farkas vector."""

    exit_code = 3

    def __init__(self, message, certificate=None):
        super().__init__(message)
        self.certificate = certificate
