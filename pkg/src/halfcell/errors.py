"""Exception types shared by the solvers."""


class HalfcellError(Exception):
    """Base class for numerical failures."""


class MonotonicityViolation(HalfcellError):
    def __init__(self, node, detail: str):
        super().__init__(
            f"non-monotone stencil at node {node}: {detail}; "
            "refine the grid or rescale the coefficients"
        )
        self.node = node


class ObliquenessTooWeak(HalfcellError):
    def __init__(self, node, detail: str):
        super().__init__(f"oblique boundary direction too weak at node {node}: {detail}")
        self.node = node


class NonConvergence(HalfcellError):
    """Iteration did not reach tolerance; carries the best iterate."""

    def __init__(self, message: str, best=None, history=()):
        super().__init__(message)
        self.best = best
        self.history = list(history)


class ExtrapolationUnstable(HalfcellError):
    pass


class NonzeroCellConstant(HalfcellError):
    def __init__(self, value: float):
        super().__init__(
            f"cell constant is {value:.3e}, not zero: the singular drift does not "
            "homogenize to a second-order limit"
        )
        self.value = value


class AffinityViolation(HalfcellError):
    def __init__(self, deviation: float, tol: float):
        super().__init__(f"affine model deviation {deviation:.3e} exceeds {tol:.1e}")
        self.deviation = deviation


class ResolutionInsufficient(HalfcellError):
    pass


class StepRejected(HalfcellError):
    pass


class DegenerateDenominator(HalfcellError):
    pass


class NonUniqueBoundaryConstant(HalfcellError):
    pass
