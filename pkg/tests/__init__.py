# Licensed under the Apache License: http://www.apache.org/licenses/LICENSE-2.0

"""Automated tests. Run with pytest."""
