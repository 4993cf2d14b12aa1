# salad is distributed under the terms of the BSD 3-clause license.
# Consult LICENSE.txt or http://opensource.org/licenses/BSD-3-Clause.
"""
salad-specific exceptions
"""

from __future__ import annotations

import textwrap

SEPARATOR = "-" * 70


def indent(s):
    return textwrap.fill(textwrap.dedent(s))


class SaladError(Exception):
    exit_code = 1


class ConfigError(SaladError):
    """Raised when a run configuration cannot be parsed or validated."""

    exit_code = 2

    def __init__(self, problems, original=None):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        self.original = original
        super().__init__("; ".join(self.problems))

    def error_msg(self):
        parts = [SEPARATOR, self.error_body()]
        if self.original is not None:
            parts.append(self.indented_exception())
        return "\n".join(parts)

    def error_body(self):
        lines = ["Configuration has validation errors:"]
        lines.extend(f"- {problem}" for problem in self.problems)
        return "\n".join(lines) + "\n"

    def indented_exception(self):
        orig = str(self.original)

        def indent(s):
            return s.replace("\n", "\n--> ")

        return f"Error Message:\n--> {indent(orig)}\n\n"


class UnableToParse(ConfigError):
    def __init__(self, original):
        super().__init__("unable to parse the configuration file", original=original)


class UnableToParseMissingJinja2(UnableToParse):
    def error_body(self):
        return "\n".join(
            [
                super().error_body(),
                indent("""\
                It appears you are missing jinja2.  Please install that
                package, then attempt to run again.
            """),
            ]
        )


class IntervalError(SaladError, ValueError):
    pass


class AssignmentError(SaladError, ValueError):
    pass


class ShapeError(SaladError, ValueError):
    pass


class EvaluationError(SaladError, ValueError):
    exit_code = 2


class UnknownVideoError(EvaluationError):
    """Detections name a video the ground truth does not have."""

    exit_code = 4


class AutodiffError(SaladError, RuntimeError):
    pass


class NumericalError(SaladError, ArithmeticError):
    """Raised on NaN losses or gradients; carries where it happened."""

    exit_code = 3


class SaladIOError(SaladError, OSError):
    exit_code = 4


class DatasetFormatError(SaladIOError):
    pass


class CheckpointError(SaladIOError):
    pass


class CheckpointMismatchError(CheckpointError):
    """The checkpoint does not fit the configured model."""

    exit_code = 2

    def __init__(self, offenders):
        self.offenders = list(offenders)
        super().__init__("checkpoint does not match the model config: " + ", ".join(self.offenders))
