"""Exception hierarchy shared by all bregmax modules."""


class BregmaxError(Exception):
    """Base class for every error raised by this package."""


# numerics
class NoBracket(BregmaxError):
    """Bracket expansion for a monotone root exceeded its width bound."""


class OutOfRange(BregmaxError):
    """Target value lies outside the range of a monotone function."""


class LpError(BregmaxError):
    pass


class Infeasible(LpError):
    pass


class Unbounded(LpError):
    pass


# generators
class NonPositiveReference(BregmaxError, ValueError):
    pass


class NegativeAlpha(BregmaxError, ValueError):
    pass


class NonPositiveArgument(BregmaxError, ValueError):
    pass


class MalformedGenerator(BregmaxError):
    """A generator violates the limit conditions on its derivative."""


# divergences and projections
class NegativeInput(BregmaxError, ValueError):
    pass


class NonConvergence(BregmaxError):
    pass


# directions and the auxiliary problem
class ZeroDirection(BregmaxError, ValueError):
    pass


class NonKernelSum(BregmaxError, ValueError):
    pass


class NonKernelDirection(BregmaxError, ValueError):
    """Direction is not annihilated by the design matrix."""


class TrivialKernel(BregmaxError):
    """The kernel space of the statistic is {0}."""


class MemberOfClosure(BregmaxError, ValueError):
    pass


class NonClassicalSystem(BregmaxError, ValueError):
    pass


class ViolatedNecessaryCondition(BregmaxError):
    """A reported maximizer fails a first-order necessary condition."""


# file formats
class ParseError(BregmaxError, ValueError):
    pass


class ValidationError(BregmaxError, ValueError):
    pass
