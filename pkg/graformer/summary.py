# Licensed under the Apache License: http://www.apache.org/licenses/LICENSE-2.0

"""Summary tables: parameter counts and MPJPE."""

import sys

from graformer.exceptions import GraformerException
from graformer.layers import count_parameters


class TableReporter:
    """Base for reporters that write an aligned table with a TOTAL row."""

    def __init__(self):
        self.outfile = None

    def writeout(self, line):
        """Write a line to the output, adding a newline."""
        self.outfile.write(line.rstrip())
        self.outfile.write("\n")

    def write_table(self, headers, rows, total):
        """Write `rows` of (name, *values) under `headers`, then `total`."""
        max_name = max([len(r[0]) for r in rows] + [len(total[0]), len(headers[0])])
        widths = [
            max([len(h)] + [len(str(r[i])) for r in rows + [total]])
            for i, h in enumerate(headers) if i
        ]
        fmt = "%%-%ds" % max_name + "".join("  %%%ds" % w for w in widths)
        header = fmt % tuple(headers)
        rule = "-" * len(header)
        self.writeout(header)
        self.writeout(rule)
        for row in rows:
            self.writeout(fmt % tuple(row))
        self.writeout(rule)
        self.writeout(fmt % tuple(total))


class ParameterReporter(TableReporter):
    """Trainable parameters per model component."""

    def __init__(self, model):
        super().__init__()
        self.model = model

    def report(self, outfile=None):
        """Write the table, returning the total parameter count."""
        self.outfile = outfile or sys.stdout
        rows = [(name, f"{n:,d}") for name, n in self.model.parameter_breakdown()]
        total = count_parameters(self.model)
        self.writeout(f"Model: {self.model.config.variant}, skeleton {self.model.skeleton.name}")
        self.write_table(("Component", "Params"), rows, ("TOTAL", f"{total:,d}"))
        self.writeout(f"Total trainable parameters: {total} ({total / 1e6:.2f}M)")
        return total


class EvalReporter(TableReporter):
    """MPJPE, with a per-action table when the samples carry actions."""

    def __init__(self, result):
        super().__init__()
        self.result = result

    def report(self, outfile=None):
        """Write the report, returning the overall MPJPE in mm."""
        self.outfile = outfile or sys.stdout
        result = self.result
        if not result.count:
            raise GraformerException("No samples to report.")
        if result.per_action:
            rows = [
                (action, str(result.action_counts.get(action, "")), f"{mm:.2f}")
                for action, mm in result.per_action.items()
            ]
            total = ("TOTAL", str(result.count), f"{result.mpjpe_mm:.2f}")
            self.write_table(("Action", "Samples", "MPJPE (mm)"), rows, total)
        self.writeout(f"MPJPE: {result.mpjpe_mm:.2f} mm over {result.count} samples")
        return result.mpjpe_mm
