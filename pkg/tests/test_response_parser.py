import random
import string
from decimal import Decimal

import pytest
from hypothesis import given, settings, strategies as st

from helpers import solution_doc, subproblem_block
from mathdivide.response_parser import (
    BadSection,
    CodeSnippet,
    NoFinalAnswer,
    NoSections,
    NumberOrRef,
    ParseError,
    StructuredSolution,
    Subproblem,
    fallback_final_answer,
    parse_solution,
    render_solution,
)


class TestStrictParse:
    def test_minimal_document(self):
        doc = solution_doc(
            [subproblem_block(1, "a*b", [("a", 16), ("b", 2)], result=32)], 32
        )
        solution = parse_solution(doc)
        assert len(solution.subproblems) == 1
        sp = solution.subproblems[0]
        assert sp.expression_src == "a*b"
        assert sp.binding_names() == ("a", "b")
        assert sp.code.entry_function == "compute_e1"
        assert sp.claimed_value == Decimal(32)
        assert solution.final_answer_claimed == Decimal(32)
        assert solution.raw_text == doc

    def test_sequential_dependency(self):
        doc = solution_doc(
            [
                subproblem_block(1, "a-b", [("a", 16), ("b", 7)]),
                subproblem_block(2, "s*p", [("s", ("ref", 1)), ("p", 2)]),
            ],
            18,
        )
        solution = parse_solution(doc)
        second = solution.subproblems[1]
        assert second.depends_on == (1,)
        assert second.bindings[0][1] == NumberOrRef.result_of(1)

    def test_forward_dependency_rejected(self):
        doc = solution_doc(
            [
                subproblem_block(1, "a+b", [("a", 1), ("b", 2)]),
                subproblem_block(2, "c*2", [("c", 3)], depends=[3]),
            ],
            6,
        )
        with pytest.raises(BadSection) as err:
            parse_solution(doc)
        assert err.value.index == 2
        assert "forward" in err.value.reason

    def test_prose_only_raises_no_sections(self):
        with pytest.raises(NoSections):
            parse_solution("The answer is 42.")

    def test_duplicate_index_rejected(self):
        doc = solution_doc(
            [
                subproblem_block(1, "a+b", [("a", 1), ("b", 2)]),
                subproblem_block(1, "a*b", [("a", 1), ("b", 2)]),
            ],
            3,
        )
        with pytest.raises(BadSection) as err:
            parse_solution(doc)
        assert "duplicate" in err.value.reason

    def test_gap_in_indices_rejected(self):
        doc = solution_doc(
            [
                subproblem_block(1, "a+b", [("a", 1), ("b", 2)]),
                subproblem_block(3, "a*b", [("a", 1), ("b", 2)]),
            ],
            3,
        )
        with pytest.raises(BadSection):
            parse_solution(doc)

    def test_missing_expression_line(self):
        doc = """### Subproblem 1: no expression here
Inputs: a = 1
Depends on: none
```python
def compute_e1(a):
    return a
```

### Final Answer: 1
"""
        with pytest.raises(BadSection) as err:
            parse_solution(doc)
        assert "expression" in err.value.reason

    def test_missing_code_block(self):
        doc = """### Subproblem 1: no code
Expression: a+1
Inputs: a = 1
Depends on: none

### Final Answer: 2
"""
        with pytest.raises(BadSection) as err:
            parse_solution(doc)
        assert "code" in err.value.reason

    def test_missing_final_answer(self):
        doc = subproblem_block(1, "a+1", [("a", 1)])
        with pytest.raises(NoFinalAnswer):
            parse_solution(doc)

    def test_unbound_expression_variable(self):
        doc = solution_doc([subproblem_block(1, "a+z", [("a", 1)])], 1)
        with pytest.raises(BadSection) as err:
            parse_solution(doc)
        assert "z" in err.value.reason

    def test_parameter_order_must_match_inputs(self):
        block = subproblem_block(1, "a-b", [("a", 5), ("b", 3)])
        doc = solution_doc([block.replace("compute_e1(a, b)", "compute_e1(b, a)")], 2)
        with pytest.raises(BadSection) as err:
            parse_solution(doc)
        assert "parameters" in err.value.reason

    def test_ref_without_declared_dependency(self):
        doc = solution_doc(
            [
                subproblem_block(1, "a+b", [("a", 1), ("b", 2)]),
                subproblem_block(2, "s*2", [("s", ("ref", 1))], depends=[]),
            ],
            6,
        )
        with pytest.raises(BadSection) as err:
            parse_solution(doc)
        assert "depends" in err.value.reason

    def test_ordering_only_dependency_allowed(self):
        doc = solution_doc(
            [
                subproblem_block(1, "a+b", [("a", 1), ("b", 2)]),
                subproblem_block(2, "c*2", [("c", 3)], depends=[1]),
            ],
            6,
        )
        solution = parse_solution(doc)
        assert solution.subproblems[1].depends_on == (1,)

    def test_degenerate_final_answer_only(self):
        solution = parse_solution("### Final Answer: 42\n")
        assert solution.subproblems == ()
        assert solution.final_answer_claimed == Decimal(42)

    def test_keyword_case_and_whitespace_lenient(self):
        doc = """  ###   SUBPROBLEM 1 : totals
  expression:  a * b
  INPUTS: a = 4, b = 3
  depends ON:   none
```python
def compute_e1(a, b):
    return a * b
```
  RESULT: 12

###  final ANSWER :  12
"""
        solution = parse_solution(doc)
        assert solution.subproblems[0].expression_src == "a * b"
        assert solution.final_answer_claimed == Decimal(12)

    def test_unparseable_claimed_result_is_absent(self):
        doc = solution_doc([subproblem_block(1, "a*b", [("a", 2), ("b", 3)], result="six-ish")], 6)
        assert parse_solution(doc).subproblems[0].claimed_value is None

    def test_headers_inside_code_blocks_ignored(self):
        body = "    # ### Subproblem 9: not a header\n    return a * b"
        doc = solution_doc(
            [subproblem_block(1, "a*b", [("a", 2), ("b", 3)], code_body=body)], 6
        )
        assert len(parse_solution(doc).subproblems) == 1


class TestFallback:
    def test_final_answer_marker(self):
        assert fallback_final_answer("so the Final Answer: 72 dollars") == Decimal(72)

    def test_last_standalone_number(self):
        assert fallback_final_answer("She has 3 apples then 5 then 8.") == Decimal(8)

    def test_no_digits(self) -> None:
        assert fallback_final_answer("no digits here") is None

    def test_marker_beats_trailing_numbers(self):
        text = "final answer: 10. I double-checked by adding 4 and 6."
        assert fallback_final_answer(text) == Decimal(10)

    def test_currency_and_commas(self):
        assert fallback_final_answer("Total comes to $1,250 overall") == Decimal(1250)

    def test_digits_inside_words_ignored(self):
        assert fallback_final_answer("compute_e2 ran fine; result was 7") == Decimal(7)


class TestRoundTrip:
    def test_generated_solutions_round_trip(self):
        from helpers import gen_structured_solution

        rng = random.Random(99)
        for _ in range(100):
            solution = gen_structured_solution(rng)
            assert parse_solution(render_solution(solution)) == solution


class TestTotality:
    @given(st.text(max_size=400))
    @settings(max_examples=200, deadline=None)
    def test_random_text_never_crashes(self, text):
        try:
            solution = parse_solution(text)
        except ParseError:
            return
        assert isinstance(solution, StructuredSolution)

    @given(st.binary(max_size=400))
    @settings(max_examples=200, deadline=None)
    def test_random_bytes_never_crash(self, raw):
        text = raw.decode("utf-8", errors="replace")
        try:
            parse_solution(text)
        except ParseError:
            pass
