"""Exception hierarchy.

Every error carries a stable ``code`` string, which the CLI prints so that
scripts can match on failures without parsing messages.
"""

from __future__ import annotations


class HintOptError(Exception):
    code = "E000"


# plan parsing
class MalformedDocument(HintOptError, ValueError):
    code = "E101"


class MissingField(HintOptError, KeyError):
    code = "E102"

    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class UnsupportedShape(HintOptError, ValueError):
    code = "E103"


class NotAJoinTree(HintOptError, ValueError):
    code = "E104"


# record store
class EmptyInput(HintOptError, ValueError):
    code = "E201"


class DimensionMismatch(HintOptError, ValueError):
    code = "E202"


class ZeroVector(HintOptError, ValueError):
    code = "E203"


class MissingBaseline(HintOptError, LookupError):
    code = "E204"


# engine
class UnknownQuery(HintOptError, LookupError):
    code = "E301"


class AdapterUnavailable(HintOptError, RuntimeError):
    code = "E302"


class SpaceTooLarge(HintOptError, ValueError):
    code = "E303"


# reward / training
class NonPositiveRatio(HintOptError, ValueError):
    code = "E401"


class ZeroPolicyProbability(HintOptError, ValueError):
    code = "E402"


class UnknownHint(HintOptError, ValueError):
    code = "E403"


class NonFiniteUpdate(HintOptError, FloatingPointError):
    code = "E404"


class SupportMismatch(HintOptError, ValueError):
    code = "E405"


# datasets
class EmptyDataset(HintOptError, ValueError):
    code = "E501"


class SchemaViolation(HintOptError, ValueError):
    code = "E502"


# prompts
class SelfReference(HintOptError, ValueError):
    code = "E601"


class ZeroBaseline(HintOptError, ValueError):
    code = "E602"


# generators
class RemoteUnavailable(HintOptError, ConnectionError):
    code = "E701"


class RemoteTimeout(HintOptError, TimeoutError):
    code = "E702"


# orchestration / metrics
class InfeasiblePartition(HintOptError, ValueError):
    code = "E801"


class ConfigError(HintOptError, ValueError):
    code = "E802"


class MismatchedQuerySets(HintOptError, ValueError):
    code = "E901"


class ZeroBaselineTotal(HintOptError, ValueError):
    code = "E902"
