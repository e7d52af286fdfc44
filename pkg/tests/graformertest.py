# Licensed under the Apache License: http://www.apache.org/licenses/LICENSE-2.0

"""Base test case class for graformer testing."""

import os
import os.path
import re
import shlex

from graformer.cmdline import main

from tests.mixins import PytestBase, StdStreamCapturingMixin, TempDirMixin


# Status returns for the command line.
OK, USAGE_ERR, NUMERICAL_ERR = 0, 2, 3

# The graformer/tests directory, for all sorts of finding test helping things.
TESTS_DIR = os.path.dirname(__file__)


class GraformerTest(
    StdStreamCapturingMixin,
    TempDirMixin,
    PytestBase,
):
    """A base class for graformer test cases."""

    def setup_test(self):
        super().setup_test()

        # Attributes for getting info about what happened.
        self.last_command_status = None

    def assert_exists(self, fname):
        """Assert that `fname` is a file that exists."""
        msg = f"File {fname!r} should exist"
        assert os.path.exists(fname), msg

    def assert_doesnt_exist(self, fname):
        """Assert that `fname` is a file that doesn't exist."""
        msg = f"File {fname!r} shouldn't exist"
        assert not os.path.exists(fname), msg

    def command_line(self, args, ret=OK):
        """Run `args` through the command line, in this process.

        Asserts that `ret` is the status `main` returns.  Exceptions the
        command line turns into a status are handled the same way a user
        would see them.

        Returns the captured stdout.

        """
        self.last_command_status = command_line(args)
        assert self.last_command_status == ret, f"{self.last_command_status!r} != {ret!r}"
        return self.stdout()

    def report_lines(self, report):
        """Return the lines of the report, as a list."""
        lines = report.split('\n')
        assert lines[-1] == ""
        return lines[:-1]

    def squeezed_lines(self, report):
        """Return a list of the lines in report, with the spaces squeezed."""
        lines = self.report_lines(report)
        return [re.sub(r"\s+", " ", l.strip()) for l in lines]

    def last_line_squeezed(self, report):
        """Return the last line of `report` with the spaces squeezed down."""
        return self.squeezed_lines(report)[-1]


def command_line(args):
    """Run `args` through the graformer command line.

    Returns the status from `graformer.cmdline.main`.

    """
    return main(shlex.split(args))
