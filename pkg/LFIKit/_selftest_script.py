#!/usr/bin/env python
"""
Runs the LFIKit test suite (the invariant, oracle and regression tests
under LFIKit/tests) while measuring line coverage of the package.

Parameters:
    - sys.argv[1] (optional): Path for a JSON copy of the report.

The report is a dict containing:
    - 'tests_ran_n' (int): Number of tests that ran.
    - 'errors' (list[tuple(str, str)]): (test_id, traceback) of tests
        with errors.
    - 'failures' (list[tuple(str, str)]): (test_id, traceback) of
        failed tests.
    - 'coverage' (float): Percent of package lines executed.
"""
import sys, os, json
import tempfile
import unittest
import coverage

PACKAGE_DIR = os.path.dirname(os.path.abspath(__file__))


def run_selftest(verbosity: int=1) -> dict:
    """Discovers and runs LFIKit/tests under coverage."""
    cov = coverage.Coverage(
        source=[PACKAGE_DIR],
        omit=[os.path.join(PACKAGE_DIR, "tests", "*")],
        messages=False
    )
    cov.start()
    suite = unittest.TestLoader().discover(
        start_dir=os.path.join(PACKAGE_DIR, "tests"),
        top_level_dir=os.path.dirname(PACKAGE_DIR)
    )
    runner = unittest.TextTestRunner(
        stream=sys.stderr, verbosity=verbosity, warnings=False
    )
    result = runner.run(suite)
    cov.stop()

    temp_json = tempfile.NamedTemporaryFile(mode="w", delete=False, suffix=".json")
    temp_json.close()
    try:
        cov.json_report(outfile=temp_json.name)
        with open(temp_json.name) as file:
            json_report = json.load(file)
    finally:
        os.remove(temp_json.name)

    return {
        "tests_ran_n": result.testsRun,
        "errors": [(str(n), err) for (n, err) in result.errors],
        "failures": [(str(n), err) for (n, err) in result.failures],
        "coverage": json_report["totals"]["percent_covered"],
    }


if __name__ == "__main__":
    report = run_selftest(verbosity=2)
    if len(sys.argv) > 1:
        with open(sys.argv[1], "w") as f:
            json.dump(report, f)
    sys.exit(1 if report["errors"] or report["failures"] else 0)
