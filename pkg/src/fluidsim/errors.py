"""Exception types shared across the simulator."""


class ValidationError(ValueError):
    """Invalid input. ``field`` names the offending key, e.g. ``constellation.altitude``."""

    def __init__(self, field, message):
        self.field = field
        self.message = message
        super().__init__(f"{field}: {message}")


class ScenarioErrors(ValueError):
    """Aggregate of every validation problem found in one scenario file."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(str(e) for e in self.errors))


class SimulationError(RuntimeError):
    """Protocol-logic failure raised by the event engine or a protocol."""
