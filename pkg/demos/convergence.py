"""Print convergence tables for a few eigenvalues and bound gaps.

Each study refines the scenario's base mesh over its levels and reports the
first-order Richardson extrapolation along with the observed order.
"""

from hmbounds.cli import convergence_study, convergence_text
from hmbounds.scenarios import get_scenario

STUDIES = [
    ("sphere-newton", "lambda_1"),
    ("sphere-newton", "lambda_4"),
    ("disk-steklov", "sigma_1"),
    ("ellipsoid-strict", "reilly"),
    ("ellipse", "ext_steklov"),
]


def main():
    for name, quantity in STUDIES:
        table = convergence_study(get_scenario(name), quantity)
        print(convergence_text(table, "markdown"))


if __name__ == "__main__":
    main()
