import numpy as np
import pytest

from kooplift import dynamics
from kooplift.expr import (
    Constant,
    Cos,
    Exp,
    Reciprocal,
    Sin,
    Sum,
    Variable,
    evaluate,
    is_polynomial,
    parse,
    simplify,
    substitute,
)
from kooplift.polylift import (
    LiftError,
    ObservableSet,
    OdeSystem,
    dump_lifted,
    dump_observables,
    dump_system,
    lie_derivative,
    lift,
    load_system,
    monomial_dictionary,
    observables_from_lift,
    parse_system,
    rbf_dictionary,
)


def system_of(*rhs_texts, params=None):
    names = tuple(f"x{i+1}" for i in range(len(rhs_texts))) if len(rhs_texts) > 1 else ("x",)
    return OdeSystem(
        state_names=names,
        rhs=tuple(parse(t) for t in rhs_texts),
        parameters=params or {},
    )


def check_lift_exactness(system, x0, seconds=1.0, tol=1e-6):
    """Integrate base and lifted systems side by side and compare every
    auxiliary channel against its defining function along the way."""
    lifted = lift(system)
    steps = int(round(seconds / 0.005))
    base_traj = dynamics.integrate_rk4(system, x0, 0.005, steps, substeps=5)
    lift_traj = dynamics.integrate_rk4(
        lifted, lifted.initial_state(x0), 0.005, steps, substeps=5
    )
    np.testing.assert_allclose(
        lift_traj.states[:, : system.dim], base_traj.states, atol=tol
    )
    expanded = lifted.expanded_aux()
    for j, (name, _) in enumerate(lifted.aux_defs):
        h = substitute(expanded[name], system.parameters)
        expected = np.array(
            [
                evaluate(h, dict(zip(system.state_names, row)))
                for row in base_traj.states
            ]
        )
        err = np.abs(lift_traj.states[:, system.dim + j] - expected).max()
        assert err <= tol, f"aux {name} drifted by {err}"


class TestLieDerivative:
    def test_sine_observable(self, smib):
        system, _ = smib
        out = lie_derivative(Sin(Variable("x1")), system)
        assert out == simplify(parse("x2*cos(x1)"))

    def test_cosine_observable(self, smib):
        system, _ = smib
        out = lie_derivative(Cos(Variable("x1")), system)
        assert out == simplify(parse("-x2*sin(x1)"))

    def test_constant_observable(self, smib):
        system, _ = smib
        assert lie_derivative(Constant(4.0), system) == Constant(0.0)

    def test_unknown_variable(self, smib):
        system, _ = smib
        with pytest.raises(LiftError, match="unknown"):
            lie_derivative(Variable("bogus"), system)


class TestLift:
    def test_smib_structure(self, smib):
        system, _ = smib
        lifted = lift(system)
        assert [name for name, _ in lifted.aux_defs] == ["z1", "z2"]
        assert dict(lifted.aux_defs) == {
            "z1": Sin(Variable("x1")),
            "z2": Cos(Variable("x1")),
        }
        assert lifted.lifted_rhs[2] == simplify(parse("x2*z2"))
        assert lifted.lifted_rhs[3] == simplify(parse("-x2*z1"))
        names = lifted.variable_names
        for e in lifted.lifted_rhs:
            assert is_polynomial(e, names)

    def test_logistic_composition(self):
        system = system_of("1/(1+exp(x))")
        lifted = lift(system)
        z1, z2 = Variable("z1"), Variable("z2")
        assert dict(lifted.aux_defs) == {
            "z1": Exp(Variable("x")),
            "z2": Reciprocal(Sum((Constant(1.0), z1))),
        }
        assert lifted.lifted_rhs[0] == z2
        assert lifted.lifted_rhs[1] == simplify(parse("z1*z2"))
        assert lifted.lifted_rhs[2] == simplify(parse("-z1*z2^3"))

    def test_already_polynomial(self):
        system = system_of("x2", "-x1 + x1*x2")
        lifted = lift(system)
        assert lifted.aux_defs == ()
        assert lifted.lifted_rhs == tuple(simplify(e) for e in system.rhs)

    def test_pair_introduced_for_lone_cosine(self):
        system = system_of("cos(x)")
        lifted = lift(system)
        assert dict(lifted.aux_defs) == {
            "z1": Sin(Variable("x")),
            "z2": Cos(Variable("x")),
        }

    def test_duplicate_subexpressions_share_a_variable(self):
        system = system_of("x2 + sin(x1)", "sin(x1)*cos(x1)")
        lifted = lift(system)
        assert len(lifted.aux_defs) == 2  # the sin/cos pair, once

    def test_negative_power_gets_reciprocal_variable(self):
        system = system_of("x^-2")
        lifted = lift(system)
        assert lifted.aux_defs == (("z1", Reciprocal(Variable("x"))),)
        names = lifted.variable_names
        assert all(is_polynomial(e, names) for e in lifted.lifted_rhs)
        check_lift_exactness(system, np.array([2.0]))

    def test_logarithm(self):
        system = system_of("ln(x)")
        lifted = lift(system)
        assert ("z1", parse("ln(x)")) == lifted.aux_defs[0]
        names = lifted.variable_names
        assert all(is_polynomial(e, names) for e in lifted.lifted_rhs)
        check_lift_exactness(system, np.array([2.0]))

    def test_max_rounds_diagnostic(self):
        system = system_of("1/(1+exp(x))")
        with pytest.raises(LiftError, match="rounds"):
            lift(system, max_rounds=1)

    def test_aux_names_avoid_collisions(self):
        system = OdeSystem(
            state_names=("z1",), rhs=(parse("sin(z1)"),), parameters={}
        )
        lifted = lift(system)
        introduced = [name for name, _ in lifted.aux_defs]
        assert "z1" not in introduced
        assert len(set(introduced)) == 2

    def test_exactness_smib(self, smib):
        system, _ = smib
        check_lift_exactness(system, np.array([-0.5, -0.75]))

    def test_exactness_logistic(self):
        check_lift_exactness(system_of("1/(1+exp(x))"), np.array([0.3]))

    def test_exactness_x_cos_x(self):
        check_lift_exactness(system_of("x*cos(x)"), np.array([0.5]))


class TestObservablesFromLift:
    def test_smib_dictionary_is_exact_list(self, smib):
        system, _ = smib
        obs = observables_from_lift(lift(system))
        assert obs.kind == "lie"
        assert (obs.n, obs.q) == (2, 6)
        assert list(obs.entries) == [
            Variable("x1"),
            Variable("x2"),
            Sin(Variable("x1")),
            Cos(Variable("x1")),
            simplify(parse("x2*sin(x1)")),
            simplify(parse("x2*cos(x1)")),
        ]

    def test_logistic_dictionary(self):
        obs = observables_from_lift(lift(system_of("1/(1+exp(x))")))
        expected = [
            "x",
            "exp(x)",
            "1/(1+exp(x))",
            "exp(x)/(1+exp(x))",
            "exp(x)*(1/(1+exp(x)))^3",
        ]
        assert list(obs.entries) == [simplify(parse(t)) for t in expected]

    def test_linear_system_warns_identity_only(self):
        system = system_of("x2", "-x1")
        with pytest.warns(UserWarning, match="identity"):
            obs = observables_from_lift(lift(system))
        assert obs.q == obs.n == 2

    def test_parameters_are_bound_in_entries(self):
        system = OdeSystem(
            state_names=("x",),
            rhs=(parse("sin(k*x)"),),
            parameters={"k": 2.0},
        )
        obs = observables_from_lift(lift(system))
        values = obs.evaluate_point([0.7])
        assert values[1] == pytest.approx(np.sin(1.4))


class TestMonomialDictionary:
    def test_count_matches_binomial(self):
        for degree, expected in ((2, 5), (3, 9), (4, 14)):
            assert monomial_dictionary(2, degree).q == expected

    def test_degree_three_entries(self):
        obs = monomial_dictionary(2, 3, ("d", "w"))
        texts = [str(e) for e in obs.entries]
        assert texts == [
            "d", "w", "d^2", "d*w", "w^2", "d^3", "d^2*w", "d*w^2", "w^3",
        ]

    def test_degree_one_is_identity(self):
        obs = monomial_dictionary(2, 1)
        assert list(obs.entries) == [Variable("x1"), Variable("x2")]

    def test_rejects_degree_zero(self):
        with pytest.raises(ValueError, match="degree"):
            monomial_dictionary(2, 0)


class TestRbfDictionary:
    def test_entry_count(self):
        centers = [(0.1, 0.2), (-0.3, 0.4), (0.0, -0.5), (0.2, 0.9)]
        obs = rbf_dictionary(2, 6, centers)
        assert (obs.n, obs.q) == (2, 6)
        assert obs.kind == "rbf"

    def test_value_at_unit_distance_is_zero(self):
        obs = rbf_dictionary(2, 3, [(0.0, 0.0)])
        assert obs.evaluate_point([1.0, 0.0])[2] == pytest.approx(0.0, abs=1e-15)

    def test_value_at_own_center_is_zero(self):
        obs = rbf_dictionary(2, 3, [(0.25, -0.5)])
        assert obs.evaluate_point([0.25, -0.5])[2] == 0.0

    def test_matches_closed_form(self):
        center = (0.1, -0.2)
        obs = rbf_dictionary(2, 3, [center])
        x = np.array([0.7, 0.5])
        r = np.hypot(x[0] - center[0], x[1] - center[1])
        assert obs.evaluate_point(x)[2] == pytest.approx(
            r**2 * np.log(r), rel=1e-13
        )

    def test_duplicate_centers_rejected(self):
        with pytest.raises(ValueError, match="duplicate"):
            rbf_dictionary(2, 4, [(0.1, 0.2), (0.1, 0.2)])

    def test_total_must_exceed_dimension(self):
        with pytest.raises(ValueError, match="exceed"):
            rbf_dictionary(2, 2, [])


class TestObservableSet:
    def test_identity_leading_enforced(self):
        with pytest.raises(ValueError, match="identity"):
            ObservableSet(
                state_names=("x1", "x2"),
                entries=(Variable("x2"), Variable("x1")),
            )

    def test_jacobian_point(self, smib):
        system, _ = smib
        obs = observables_from_lift(lift(system))
        x = np.array([0.3, -0.4])
        jac = obs.jacobian_point(x)
        assert jac.shape == (6, 2)
        np.testing.assert_allclose(jac[0], [1.0, 0.0])
        np.testing.assert_allclose(jac[2], [np.cos(0.3), 0.0], rtol=1e-12)
        np.testing.assert_allclose(
            jac[4], [-0.4 * np.cos(0.3), np.sin(0.3)], rtol=1e-12
        )


class TestSerialization:
    def test_system_round_trip(self, smib):
        system, _ = smib
        text = dump_system(system)
        back = parse_system(text)
        assert back.state_names == system.state_names
        assert back.parameters == system.parameters
        assert [simplify(e) for e in back.rhs] == [simplify(e) for e in system.rhs]

    def test_example_file_matches_built_system(self, smib):
        system, _ = smib
        loaded = load_system("systems/smib.ode")
        assert loaded.state_names == system.state_names
        for key, value in system.parameters.items():
            assert loaded.parameters[key] == pytest.approx(value, rel=1e-15)

    def test_lifted_document_layout(self, smib):
        system, _ = smib
        text = dump_lifted(lift(system))
        lines = [l for l in text.splitlines() if l]
        assert lines[0] == "x1' = x2"
        assert "z1 = sin(x1)" in lines
        assert "z1' = x2*z2" in lines
        assert any(l.startswith("param M = ") for l in lines)

    def test_observables_document(self, smib):
        system, _ = smib
        text = dump_observables(observables_from_lift(lift(system)))
        assert "g5 = x2*sin(x1)" in text

    def test_rejects_malformed_lines(self):
        with pytest.raises(ValueError, match="ODE lines"):
            parse_system("x1 = x2\n")
