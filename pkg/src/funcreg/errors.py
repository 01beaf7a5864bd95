"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: input/usage problems exit 2,
numerical failures exit 3.
"""


class InputError(ValueError):
    """Malformed or inconsistent user-supplied data."""


class DomainError(ValueError):
    """Evaluation point outside the functional domain."""


class NumericalError(RuntimeError):
    """A solver or decomposition failed beyond recovery."""


class InferenceError(RuntimeError):
    """Bootstrap inference could not produce valid replicates."""


class DegenerateBandError(ValueError):
    """All grid points have zero bootstrap SE.

    Callers that expect this (the bootstrap drivers) should pass
    ``on_degenerate="policy"`` to ``cma_band`` instead of catching this.
    """
