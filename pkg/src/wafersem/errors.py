"""Exception hierarchy shared across the pipeline."""


class InspectError(Exception):
    """Base class for all pipeline errors."""


class ValidationError(InspectError):
    """Invalid parameter or value supplied by the caller."""


class TaxonomyError(ValidationError):
    """Defect class label outside the closed five-class set."""


class BoundsError(ValidationError):
    """Box coordinates outside the image they belong to."""


class FormatError(ValidationError):
    """Malformed or schema-violating document."""


class CapacityError(InspectError):
    """Requested defects cannot be placed on the canvas."""
