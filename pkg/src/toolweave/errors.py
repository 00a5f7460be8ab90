"""Exception taxonomy shared across the pipeline.

Two families matter for the CLI exit codes: ValidationFailure (bad inputs,
bad config, contract violations -> exit 1) and GatewayFailure (provider or
IO trouble -> exit 2). Everything raised by this package derives from
ToolweaveError.
"""

from __future__ import annotations


class ToolweaveError(Exception):
    """Base class for all errors raised by toolweave."""


class ValidationFailure(ToolweaveError):
    """Input, config, or contract violations. CLI exit code 1."""


class GatewayFailure(ToolweaveError):
    """Provider, fixture, or IO failures. CLI exit code 2."""


# --- schema ingest ---------------------------------------------------------


class MalformedRecord(ValidationFailure):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptyToolName(MalformedRecord):
    pass


class DuplicateArgumentName(MalformedRecord):
    pass


class DuplicatePayloadField(MalformedRecord):
    pass


class DuplicateToolId(MalformedRecord):
    pass


class EmptyAfterNormalization(ValidationFailure):
    pass


class NotEnoughRecords(ValidationFailure):
    pass


class UnknownLevel(ValidationFailure):
    pass


# --- dependency extraction -------------------------------------------------


class TooFewTools(ValidationFailure):
    pass


class MalformedProposal(ValidationFailure):
    """Unparseable proposal output; callers count it and move on."""


class MalformedVerdict(ValidationFailure):
    """Unparseable judge output; the candidate is rejected and counted."""


# --- graph core ------------------------------------------------------------


class UnknownToolInDependency(ValidationFailure):
    pass


class EmptySeeds(ValidationFailure):
    pass


class UnknownSeedNode(ValidationFailure):
    pass


class InvalidSeedMass(ValidationFailure):
    pass


class GraphFormatError(ValidationFailure):
    pass


# --- dense retrieval -------------------------------------------------------


class WrongRelation(ValidationFailure):
    pass


class EmptyText(ValidationFailure):
    pass


class DimsMismatch(ValidationFailure):
    pass


class DuplicateStoreId(ValidationFailure):
    pass


class StoreFormatError(ValidationFailure):
    pass


# --- plan generation -------------------------------------------------------


class EmptySubgraph(ValidationFailure):
    pass


class GenerationRejected(ValidationFailure):
    """Generated plan failed structural validation after all retries."""

    def __init__(self, reasons: list[str]):
        self.reasons = list(reasons)
        super().__init__("; ".join(self.reasons) or "rejected")


class StoreWriteError(GatewayFailure):
    pass


# --- evaluation ------------------------------------------------------------


class JudgeProtocolError(ValidationFailure):
    """Judge returned a score outside the allowed range {0, 1, 2}."""


# --- llm gateway -----------------------------------------------------------


class GatewayError(GatewayFailure):
    """Provider call failed; carries the request context when known."""

    def __init__(self, message: str, context: str | None = None):
        self.context = context
        if context:
            message = f"{message} [{context}]"
        super().__init__(message)


class MissingFixture(GatewayError):
    pass


class ProviderHttpError(GatewayError):
    def __init__(self, status: int, body: str, context: str | None = None):
        self.status = status
        self.body = body
        super().__init__(f"provider returned HTTP {status}: {body[:200]}", context)


class GatewayTimeout(GatewayError):
    pass


class FixtureFormatError(ValidationFailure):
    pass


# --- synthetic corpus ------------------------------------------------------


class InfeasibleSpec(ValidationFailure):
    pass


# --- cli / config ----------------------------------------------------------


class ConfigError(ValidationFailure):
    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"config field '{field}': {message}")


class UnknownSubcommand(ValidationFailure):
    pass
