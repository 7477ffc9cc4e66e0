"""
Command groups of the qnprec command line.

Every module in this package exposes setup(app), which registers its command
objects on the application, the way the entry script discovers them.
"""

EXIT_OK = 0
EXIT_CONFIG_ERROR = 2
EXIT_BREAKDOWN = 3
EXIT_NOT_CONVERGED = 4
