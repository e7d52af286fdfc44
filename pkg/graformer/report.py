# Licensed under the Apache License: http://www.apache.org/licenses/LICENSE-2.0

"""Reporter foundation for graformer."""

import sys

from graformer.exceptions import GraformerException
from graformer.misc import ensure_dir_for_file, file_be_gone


def render_report(output_path, reporter):
    """Run a report generator, managing the output file.

    This function ensures the output file is ready to be written to. Then writes
    the report to it. Then closes the file and cleans up.  An `output_path`
    of "-" or None means stdout.

    """
    file_to_close = None
    delete_file = False

    if output_path in (None, "-"):
        outfile = sys.stdout
    else:
        ensure_dir_for_file(output_path)
        outfile = open(output_path, "w", encoding="utf-8")
        file_to_close = outfile

    try:
        return reporter.report(outfile=outfile)
    except GraformerException:
        delete_file = True
        raise
    finally:
        if file_to_close:
            file_to_close.close()
            if delete_file:
                file_be_gone(output_path)
