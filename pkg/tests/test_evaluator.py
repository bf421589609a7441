import json
import logging

from gocor.evaluator import CheckCase, CheckSuiteEvaluator, gradient_cases, oracle_cases


def _raise():
    raise RuntimeError("boom")


class TestCheckSuiteEvaluator:
    """Running named checks and collecting results."""

    def test_pass_fail_and_exceptions(self, tmp_path):
        evaluator = CheckSuiteEvaluator("demo")
        result = evaluator.evaluate_cases([
            CheckCase("ok", lambda: 1e-12, 1e-10),
            CheckCase("too-large", lambda: 1.0, 1e-10),
            CheckCase("nan", lambda: float("nan"), 1.0),
            CheckCase("raises", _raise, 1.0),
        ])
        assert result["passed"] == 1 and not result["success"]
        by_id = {r["case_id"]: r for r in result["results"]}
        assert by_id["ok"]["success"]
        assert by_id["nan"]["value"] is None
        assert "boom" in by_id["raises"]["reason"]

        evaluator.export_results(tmp_path / "out" / "demo.json")
        exported = json.loads((tmp_path / "out" / "demo.json").read_text())
        assert exported["summary"] == {"suites": 1, "total_checks": 4, "passed": 1, "failed": 3, "success": False}

    def test_exact_tolerance(self):
        result = CheckSuiteEvaluator("exact").evaluate_cases([CheckCase("zero", lambda: 0.0, 0.0)])
        assert result["success"]


class TestGradientSuite:
    """Finite-difference gradient cases."""

    def test_passes_with_smoothing(self):
        cases = gradient_cases(range(4), eta=0.1)
        assert [c.case_id for c in cases] == [
            "gradient-global-ref-0", "gradient-local-ref-1", "gradient-global-query-2", "gradient-local-query-3"]
        assert CheckSuiteEvaluator("gradcheck").evaluate_cases(cases)["success"]

    def test_kink_is_avoided_with_warning(self, caplog):
        with caplog.at_level(logging.WARNING):
            cases = gradient_cases(range(4), eta=0.0)
        assert "kink" in caplog.text
        assert CheckSuiteEvaluator("gradcheck").evaluate_cases(cases)["success"]

    def test_corrupted_gradient_fails(self):
        cases = gradient_cases(range(4), eta=0.1, corrupt_gradient=True)
        result = CheckSuiteEvaluator("gradcheck").evaluate_cases(cases)
        assert result["passed"] == 0


class TestOracleSuite:
    """Oracle-equivalence cases."""

    def test_small_suite_passes(self):
        cases = oracle_cases(range(4))
        assert any(c.case_id == "partition-of-unity" for c in cases)
        result = CheckSuiteEvaluator("oracle").evaluate_cases(cases)
        assert result["success"], [r for r in result["results"] if not r["success"]]
