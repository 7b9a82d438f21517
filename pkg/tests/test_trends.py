"""
Desk-scale trend runs. Minutes of CPU per grid, so opt-in:

    FREEZELAB_RUN_TRENDS=1 ./test.sh tests.test_trends

Trend orderings only warn inside a grid report; here the orderings the
desk grids exist to show must be present and must hold, no hard check
may fail and every run must finish. Other warnings are printed.
"""

import os
import sys
import tempfile
import unittest
from pathlib import Path

sys.path.insert(0, os.path.join(os.path.dirname(__file__), ".."))

from ablate import EXIT_HARD_FAIL, HarnessConfig, load_grid, run_grid

GRID_DIR = Path(__file__).resolve().parent.parent / "grids"
RUN_TRENDS = os.getenv("FREEZELAB_RUN_TRENDS") == "1"


@unittest.skipUnless(RUN_TRENDS, "set FREEZELAB_RUN_TRENDS=1 to train the desk grids")
class TestDeskTrends(unittest.TestCase):
    def run_table(self, name):
        config = HarnessConfig.from_env()
        with tempfile.TemporaryDirectory() as tmp:
            report = run_grid(load_grid(GRID_DIR / f"{name}.json"), parallelism=config.max_jobs,
                              out_dir=tmp, config=config)
        for verdict in report.warnings:
            print(f"[{name}] WARN {verdict.check}: {verdict.detail}", file=sys.stderr)
        self.assertNotEqual(report.exit_code, EXIT_HARD_FAIL, report.report_lines())
        for row in report.rows:
            self.assertFalse(row.failed, f"{name}.{row.spec.row_id}: {row.failures}")
        return report

    def assertOrderingsHold(self, report, checks):
        verdicts = {v.check: v for v in report.verdicts}
        for check in checks:
            self.assertIn(check, verdicts, sorted(verdicts))
            self.assertTrue(verdicts[check].ok, f"{check}: {verdicts[check].detail}")

    def test_component_freezing(self):
        report = self.run_table("table1")
        self.assertGreater(report.row("r0").median("bleu"), 0.0)
        self.assertOrderingsHold(report, [
            "ordering:bleu(r0) > bleu(r1)",
            "ordering:bleu(r0) > bleu(r2)",
            "ordering:bleu(r0) > bleu(r3)",
            "ordering:bleu(r6) < bleu(r4)",
            "ordering:bleu(r6) < bleu(r5)",
        ])

    def test_small_attention_alone_learns(self):
        report = self.run_table("table4")
        self.assertGreater(report.row("r4").median("bleu"), 0.0)
        self.assertOrderingsHold(report, ["ordering:bleu(r4) > 0"])

    def test_language_model(self):
        report = self.run_table("table7")
        self.assertLess(report.row("r0").median("ppl"), report.row("r6").median("ppl"))
        self.assertOrderingsHold(report, [
            "ordering:ppl(r1) > ppl(r2)",
            "ordering:ppl(r1) > ppl(r3)",
        ])

    def test_diagonal_initialisation(self):
        report = self.run_table("table8")
        self.assertOrderingsHold(report, [
            "ordering:bleu(att_diag) < bleu(att)",
            "ordering:bleu(ffn_diag) ~ bleu(ffn)",
        ])

    def test_scheduled_freezing(self):
        self.run_table("table9")


if __name__ == "__main__":
    unittest.main()
