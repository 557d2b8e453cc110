import numpy as np
import pytest

from invariant_reparam.errors import PreconditionError, SingularReparamError
from invariant_reparam.likelihood import LikelihoodProblem
from invariant_reparam.model_api import (
    Dataset,
    ErrorModel,
    ModelSpec,
    ObservationOperator,
    get_model,
    predict_obs,
    with_observation,
)
from invariant_reparam.models import paper_dataset
from invariant_reparam.reparam import (
    POOR,
    STRUCTURAL,
    WELL,
    SvdAnalysis,
    analyze,
    build_reparam,
    fisher_factor,
    fisher_rank_check,
    invariance_check,
    log_jacobian,
    monomial_label,
    null_space_basis,
    principal_angle,
    round_exponents,
)


def _same_up_to_sign(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return np.allclose(a, b) or np.allclose(a, -b)


def test_log_jacobian_scales_columns(flow):
    from invariant_reparam.model_api import predict_fine
    from invariant_reparam.numerics import jacobian

    theta = np.array([2.0, 0.5, 1.5])
    J = jacobian(lambda t: predict_fine(flow, t), theta)
    assert np.allclose(log_jacobian(flow, theta), J * theta)


def test_log_jacobian_rejects_points_outside_the_box(flow):
    with pytest.raises(PreconditionError):
        log_jacobian(flow, [10.0, 1.0, 1.0])
    with pytest.raises(PreconditionError):
        log_jacobian(flow, [1.0, 1.0])


def test_poisson_limit_has_one_identified_combination(poisson):
    """np is identified, n/p is structurally non-identified."""
    analysis = analyze(poisson, [95.2, 0.2])
    assert analysis.ratios[1] < 1e-12
    assert analysis.rank == 1
    assert analysis.classification == (WELL, STRUCTURAL)
    coords = build_reparam(analysis, rounded=True, scale="largest")
    assert coords.exponents.tolist() == [[1.0, 1.0], [1.0, -1.0]]
    assert coords.labels == ("n*p", "n/p")


def test_flow_structure_at_reference_point(flow):
    analysis = analyze(flow, [3.0, 1.0, 1.0])
    ratios = analysis.ratios
    assert ratios[2] < 1e-10
    assert 1e-4 < ratios[1] < 1e-1
    assert analysis.classification == (WELL, POOR, STRUCTURAL)
    assert _same_up_to_sign(analysis.null_space[:, 0], np.ones(3) / np.sqrt(3))


def test_flow_rounded_rows_and_labels(flow_coords):
    expected = [[0.0, 1.0, -1.0], [1.0, -0.5, -0.5], [1.0, 1.0, 1.0]]
    for row, want in zip(flow_coords.exponents, expected):
        assert _same_up_to_sign(row, want)
    assert flow_coords.labels == ("T2/R", "T1/sqrt(T2*R)", "T1*T2*R")
    assert flow_coords.forward([3.0, 1.0, 1.0]) == pytest.approx([1.0, 3.0, 3.0])


def test_rounded_coordinates_invert_exactly(flow_coords):
    theta = np.array([2.5, 0.4, 1.7])
    assert flow_coords.inverse(flow_coords.forward(theta)) == pytest.approx(theta, rel=1e-12)


def test_unrounded_inverse_is_the_transpose(flow):
    coords = build_reparam(analyze(flow, [3.0, 1.0, 1.0]), rounded=False)
    assert np.allclose(coords.inverse_exponents, coords.exponents.T)
    theta = np.array([1.2, 3.3, 0.7])
    assert coords.inverse(coords.forward(theta)) == pytest.approx(theta, rel=1e-12)


def test_mm_full_and_reduced_structure(mm_full):
    analysis = analyze(mm_full, [1.0, 5.0])
    assert analysis.rank == 2
    coords = build_reparam(analysis, rounded=True, scale="largest")
    assert _same_up_to_sign(coords.exponents[0], [-1.0, 1.0])
    assert _same_up_to_sign(coords.exponents[1], [1.0, 1.0])

    reduced = analyze(get_model("mm-reduced"), [1.0, 5.0])
    assert reduced.rank == 1
    assert reduced.classification[1] == STRUCTURAL
    rows = build_reparam(reduced, rounded=True, scale="largest").exponents
    assert _same_up_to_sign(rows[0], [-1.0, 1.0])


def test_reparam_bounds_cover_the_model_box(flow, flow_coords):
    box = flow_coords.bounds(flow, margin=0.1)
    assert box.shape == (3, 2)
    rng = np.random.default_rng(0)
    for _ in range(50):
        theta = np.exp(rng.uniform(np.log(flow.lower), np.log(flow.upper)))
        psi = flow_coords.forward(theta)
        assert np.all(psi >= box[:, 0]) and np.all(psi <= box[:, 1])


def test_flow_invariance_at_random_interior_points(flow):
    """Null direction [1,1,1]/sqrt(3) at five interior points."""
    rng = np.random.default_rng(11)
    points = [np.exp(rng.uniform(np.log(0.2), np.log(4.0), size=3)) for _ in range(5)]
    report = invariance_check(flow, points)
    assert report.passed
    assert report.max_angle < 1e-6
    assert report.null_dimensions == [1] * 5
    assert report.to_dict()["status"] == "PASS"


def test_invariance_check_needs_two_points(flow):
    with pytest.raises(PreconditionError):
        invariance_check(flow, [[3.0, 1.0, 1.0]])


def test_null_space_of_product_with_injective_factor():
    """ker(AB) = ker(B) for injective A, over random pairs."""
    rng = np.random.default_rng(2024)
    for _ in range(200):
        k = int(rng.integers(2, 6))
        m = k + int(rng.integers(0, 4))
        n = int(rng.integers(2, 7))
        r = int(rng.integers(1, min(k, n) + 1))
        A = rng.normal(size=(m, k))
        B = rng.normal(size=(k, r)) @ rng.normal(size=(r, n))
        angle = principal_angle(null_space_basis(A @ B), null_space_basis(B))
        assert angle < 1e-8


def test_principal_angle_edge_cases():
    empty = np.zeros((3, 0))
    assert principal_angle(empty, empty) == 0.0
    assert principal_angle(np.eye(3)[:, :1], empty) == pytest.approx(np.pi / 2)
    assert principal_angle(np.eye(3)[:, :1], np.eye(3)[:, 1:2]) == pytest.approx(np.pi / 2)


def test_round_exponents_scales_and_ties():
    assert round_exponents([0.25, -0.25, 1.0], 0.5, "largest").tolist() == [0.5, -0.5, 1.0]
    assert round_exponents([2.0, 1.0], 0.5, "smallest").tolist() == [2.0, 1.0]
    assert round_exponents([1e-9, 1.0], 0.5, "largest").tolist() == [0.0, 1.0]
    assert round_exponents([0.816, -0.408, -0.408], 0.5, "smallest").tolist() == [2.0, -1.0, -1.0]


def test_round_exponents_rejects_empty_rows():
    with pytest.raises(PreconditionError):
        round_exponents([0.0, 0.0])
    with pytest.raises(PreconditionError):
        round_exponents([1.0, 0.5], scale="median")


@pytest.mark.parametrize("exponents,label", [
    ([0.0, 1.0, -1.0], "T2/R"),
    ([1.0, -0.5, -0.5], "T1/sqrt(T2*R)"),
    ([1.0, 1.0, 1.0], "T1*T2*R"),
    ([-1.0, 0.0, 0.0], "1/T1"),
    ([2.0, 0.0, -1.0], "T1^2/R"),
])
def test_monomial_labels(exponents, label):
    assert monomial_label(exponents, ("T1", "T2", "R")) == label


def test_singular_rounding_is_reported():
    analysis = SvdAnalysis(
        singular_values=np.array([1.0, 0.5]),
        right_vectors=np.array([[1.0, 0.9], [0.9, 1.0]]),
        reference_point=np.array([1.0, 1.0]),
        rank_tol_structural=1e-8,
        rank_tol_practical=0.1,
        classification=(WELL, WELL),
        param_names=("a", "b"),
    )
    with pytest.raises(SingularReparamError):
        build_reparam(analysis, rounded=True, scale="largest")
    assert build_reparam(analysis, rounded=False).n_coords == 2


def test_fisher_rank_flow_passes(flow_problem):
    report = fisher_rank_check(flow_problem, [3.0, 1.0, 1.0])
    assert report.passed
    assert (report.solution_fisher_rank, report.solution_jacobian_rank) == (2, 2)
    assert not report.discrepancy


@pytest.mark.parametrize("name,theta,rank", [
    ("stat-poisson-limit", [95.2, 0.2], 1),
    ("stat-binomial", [45.9, 0.415], 2),
    ("mm-full", [1.0, 5.0], 2),
    ("mm-reduced", [1.0, 5.0], 1),
])
def test_fisher_rank_builtins_pass(name, theta, rank):
    model = get_model(name)
    family = name.split("-")[0]
    if family == "stat":
        data = paper_dataset(name)
    else:
        data = Dataset(predict_obs(model, theta))
    report = fisher_rank_check(LikelihoodProblem(model, data), theta)
    assert report.passed
    assert report.solution_fisher_rank == rank


def _sloppy_model():
    return ModelSpec(
        name="sloppy",
        param_names=("a", "b"),
        bounds=((0.1, 10.0), (0.1, 10.0)),
        auxiliary=lambda t: [t[0], t[0] * t[1] ** 1e-6],
        fine_grid=np.array([0.0, 1.0]),
        obs_operator=ObservationOperator((0, 1)),
        error_model=ErrorModel("normal-additive", 1.0),
    )


def test_fisher_rank_keeps_poorly_identified_directions():
    """A direction with singular value ratio ~5e-7 counts in both ranks."""
    model = _sloppy_model()
    analysis = analyze(model, [1.0, 1.0])
    assert 1e-8 < analysis.ratios[1] < 1e-6
    assert analysis.classification == (WELL, POOR)

    report = fisher_rank_check(LikelihoodProblem(model, Dataset([1.0, 1.0])), [1.0, 1.0])
    assert report.solution_jacobian_rank == 2
    assert report.solution_fisher_rank == 2
    assert report.observation_fisher_rank == 2
    assert report.passed
    assert not report.discrepancy


def test_fisher_factor_gram_matrix_is_the_fisher_information():
    J = np.array([[1.0, 2.0], [0.5, -1.0], [3.0, 0.0]])
    w = np.array([4.0, 0.25, 1.0])
    F = fisher_factor(J, w)
    assert np.allclose(F.T @ F, J.T @ np.diag(w) @ J)


def test_single_observation_reveals_grid_level_rank_drop(mm_full):
    single = with_observation(mm_full, [100])
    data = Dataset(predict_obs(single, [1.0, 5.0]))
    report = fisher_rank_check(LikelihoodProblem(single, data), [1.0, 5.0])
    assert report.passed
    assert report.solution_fisher_rank == 2
    assert report.observation_fisher_rank == 1
    assert report.discrepancy
    assert report.to_dict()["grid_level_discrepancy"] is True
