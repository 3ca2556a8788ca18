"""Exception hierarchy shared by the broker modules."""


class BrokerError(Exception):
    """Base class for every error raised by the broker."""


# -- manifest ---------------------------------------------------------------

class ManifestError(BrokerError):
    pass


class ManifestSyntaxError(ManifestError):
    def __init__(self, line: int, column: int, expected: str, found: str = ""):
        self.line = line
        self.column = column
        self.expected = expected
        self.found = found
        msg = f"line {line}, column {column}: expected {expected}"
        if found:
            msg += f", found {found!r}"
        super().__init__(msg)


class DuplicateSelector(ManifestError):
    def __init__(self, line: int, selector: str = ""):
        self.line = line
        super().__init__(f"line {line}: duplicate selector {selector}".rstrip())


class MissingLifecycle(ManifestError):
    def __init__(self):
        super().__init__("manifest does not declare governance.lifecycle")


class InvalidOptionArgs(ManifestError):
    def __init__(self, line: int, reason: str):
        self.line = line
        self.reason = reason
        super().__init__(f"line {line}: invalid privateCloud arguments: {reason}")


class UnknownComponent(BrokerError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"unknown component {name!r}")


class UnboundComponent(BrokerError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"component {name!r} matches no binding")


# -- catalog ----------------------------------------------------------------

class ValidationError(BrokerError, ValueError):
    def __init__(self, field: str, reason: str = "invalid value"):
        self.field = field
        super().__init__(f"{field}: {reason}")


class DuplicateProduct(BrokerError):
    def __init__(self, product_id: str):
        self.product_id = product_id
        super().__init__(f"product {product_id!r} is already registered")


class UnknownProduct(BrokerError, KeyError):
    def __init__(self, product_id: str):
        self.product_id = product_id
        super().__init__(product_id)

    def __str__(self):
        return f"unknown product {self.product_id!r}"


class MissingFxRate(BrokerError):
    def __init__(self, currency: str):
        self.currency = currency
        super().__init__(f"no fx rate for currency {currency!r}")


# -- decision ---------------------------------------------------------------

class NoCandidates(BrokerError):
    pass


class NoFeasibleProduct(BrokerError):
    def __init__(self, component_name: str, option: str):
        self.component_name = component_name
        self.option = option
        super().__init__(f"no feasible product for component {component_name!r} (option {option})")


class AppMismatch(BrokerError):
    pass


# -- runtime / simcloud -------------------------------------------------------

class MissingAdapter(BrokerError):
    def __init__(self, product_id: str):
        self.product_id = product_id
        super().__init__(f"no provider adapter for product {product_id!r}")


class AdapterError(BrokerError):
    pass


class AlreadyDeployed(AdapterError):
    pass


class NotDeployed(AdapterError):
    pass


class InjectedFailure(AdapterError):
    pass


class ScenarioParseError(BrokerError):
    pass


class InitialPlanInfeasible(BrokerError):
    pass
