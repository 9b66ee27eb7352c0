
import pytest

from conftest import central_difference, random_cases
from kooplift.expr import (
    Constant,
    Cos,
    EvaluationError,
    Exp,
    Ln,
    ParseError,
    Power,
    Product,
    Reciprocal,
    Sin,
    Sum,
    Variable,
    differentiate,
    evaluate,
    free_variables,
    is_polynomial,
    parse,
    replace_subexpressions,
    simplify,
    substitute,
    to_string,
)


class TestParse:
    def test_single_function(self):
        assert parse("sin(x1)") == Sin(Variable("x1"))

    def test_precedence_sum_of_products(self):
        e = parse("k1 + k2*cos(x1) + k3*sin(x1)")
        assert e == Sum(
            (
                Variable("k1"),
                Product((Variable("k2"), Cos(Variable("x1")))),
                Product((Variable("k3"), Sin(Variable("x1")))),
            )
        )

    def test_reciprocal_of_sum(self):
        assert parse("1/(1+exp(x))") == Product(
            (Constant(1.0), Reciprocal(Sum((Constant(1.0), Exp(Variable("x"))))))
        )

    def test_division_by_constant_folds(self):
        assert parse("x/2") == Product((Variable("x"), Constant(0.5)))

    def test_power_binds_tighter_than_unary_minus(self):
        e = parse("-x^2")
        assert e == Product((Constant(-1.0), Power(Variable("x"), 2)))
        assert evaluate(e, {"x": 3.0}) == -9.0

    def test_power_negative_exponent(self):
        assert parse("x^-2") == Power(Variable("x"), -2)

    def test_scientific_numbers(self):
        assert parse("2.5e-3") == Constant(0.0025)

    def test_syntax_error_carries_offset(self):
        with pytest.raises(ParseError) as err:
            parse("x + @y")
        assert err.value.offset == 4

    def test_unknown_function(self):
        with pytest.raises(ParseError, match="unknown function"):
            parse("tan(x)")

    def test_non_integer_exponent(self):
        with pytest.raises(ParseError, match="integer"):
            parse("x^1.5")

    def test_trailing_garbage(self):
        with pytest.raises(ParseError):
            parse("2 x")

    @pytest.mark.parametrize("seed", range(4))
    def test_print_parse_round_trip(self, seed):
        for e, _ in random_cases(100 + seed, 25):
            assert simplify(parse(to_string(e))) == simplify(e)


class TestEvaluate:
    def test_sin_at_zero(self):
        assert evaluate(Sin(Variable("x")), {"x": 0.0}) == 0.0

    def test_monomial(self):
        assert evaluate(parse("x^2*y"), {"x": 2, "y": 3}) == 12.0

    def test_swing_rhs_vanishes_at_fixed_point(self):
        e = parse("k1 + k2*cos(x) + k3*sin(x)")
        env = {"k1": 0.5667, "k2": -0.5667, "k3": -2.0843, "x": 0.0}
        assert evaluate(e, env) == pytest.approx(0.0, abs=1e-15)

    def test_unbound_variable(self):
        with pytest.raises(EvaluationError, match="unbound"):
            evaluate(Variable("nope"), {})

    def test_ln_domain(self):
        with pytest.raises(EvaluationError, match="ln"):
            evaluate(Ln(Constant(-1.0)), {})

    def test_reciprocal_of_zero(self):
        with pytest.raises(EvaluationError, match="division"):
            evaluate(Reciprocal(Variable("x")), {"x": 0.0})

    def test_zero_to_negative_power(self):
        with pytest.raises(EvaluationError):
            evaluate(Power(Variable("x"), -1), {"x": 0.0})


class TestDifferentiate:
    def test_sin(self):
        assert differentiate(Sin(Variable("x")), "x") == Cos(Variable("x"))

    def test_reciprocal_is_negative_square(self):
        u = Sum((Variable("k"), Variable("x")))
        d = differentiate(Reciprocal(u), "x")
        assert d == simplify(
            Product((Constant(-1.0), Power(Reciprocal(u), 2)))
        )

    def test_constant(self):
        assert differentiate(Constant(3.0), "x") == Constant(0.0)

    def test_parameters_are_inert(self):
        d = differentiate(parse("k*x^2"), "x")
        assert d == simplify(parse("2*k*x"))

    def test_matches_central_differences(self):
        checked = 0
        for e, env in random_cases(2024, 100):
            for name in env:
                sym = evaluate(differentiate(e, name), env)
                fd = central_difference(e, env, name)
                assert abs(sym - fd) <= 1e-6 * (1.0 + abs(sym))
                checked += 1
        assert checked >= 100


class TestSimplify:
    def test_unit_factor(self):
        e = Product((Constant(1.0), Sin(Variable("x"))))
        assert simplify(e) == Sin(Variable("x"))

    def test_constant_folding(self):
        assert simplify(Sum((Constant(2.0), Constant(3.0)))) == Constant(5.0)

    def test_idempotent_power_merge(self):
        c = Cos(Variable("x"))
        assert simplify(Product((c, Power(c, 1)))) == Power(c, 2)

    def test_zero_annihilates_product(self):
        e = Product((Constant(0.0), Exp(Variable("x"))))
        assert simplify(e) == Constant(0.0)

    def test_nested_flattening(self):
        e = Sum((Variable("a"), Sum((Variable("b"), Variable("c")))))
        assert simplify(e) == Sum(
            (Variable("a"), Variable("b"), Variable("c"))
        )

    def test_power_of_power(self):
        assert simplify(Power(Power(Variable("x"), 2), 3)) == Power(Variable("x"), 6)

    def test_commutative_canonical_order(self):
        a = simplify(parse("x2*sin(x1)"))
        b = simplify(parse("sin(x1)*x2"))
        assert a == b

    def test_preserves_value(self):
        for e, env in random_cases(777, 40):
            assert evaluate(simplify(e), env) == pytest.approx(
                evaluate(e, env), rel=1e-12, abs=1e-12
            )


class TestIsPolynomial:
    def test_bivariate_polynomial(self):
        assert is_polynomial(parse("x^2 + 3*x*y"), {"x", "y"})

    def test_sine_is_not(self):
        assert not is_polynomial(parse("sin(x)"), {"x"})

    def test_lifted_monomial(self):
        assert is_polynomial(parse("z2*z4"), {"z1", "z2", "z3", "z4"})

    def test_parameter_reciprocal_counts_as_constant(self):
        assert is_polynomial(parse("(k1 + k3*x2)/M"), {"x1", "x2"})

    def test_negative_power_of_state(self):
        assert not is_polynomial(parse("x^-1"), {"x"})

    def test_transcendental_of_parameter_only(self):
        assert is_polynomial(parse("sin(k)*x"), {"x"})


class TestHelpers:
    def test_free_variables(self):
        assert free_variables(parse("k1 + k2*cos(x1)")) == {"k1", "k2", "x1"}

    def test_substitute_binds_parameters(self):
        e = substitute(parse("k*x"), {"k": 2.0})
        assert evaluate(e, {"x": 3.0}) == 6.0

    def test_replace_subexpressions_chains(self):
        e = parse("1/(1+exp(x))")
        z1, z2 = Variable("z1"), Variable("z2")
        mapping = {
            Exp(Variable("x")): z1,
            Reciprocal(Sum((Constant(1.0), z1))): z2,
        }
        assert simplify(replace_subexpressions(e, mapping)) == z2

    def test_operator_overloads(self):
        x = Variable("x")
        assert simplify(x * x * x) == Power(x, 3)
        assert evaluate((x + 1) * x / 2, {"x": 3.0}) == 6.0
        assert to_string(simplify(1 / (1 + Exp(x)))) == "1/(1 + exp(x))"
