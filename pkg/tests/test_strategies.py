import numpy as np
import pytest

from fedsvm.data import SyntheticSpec, generate_synthetic
from fedsvm.model import Batch, Model, flatten_params, init_model, loss_and_gradient, unflatten_params
from fedsvm.numerics import finite_difference_gradient, relative_error
from fedsvm.optim import adam_state, sgd_state, sgd_step
from fedsvm.strategies import (
    FEDAVG,
    FEDOPT,
    MOON,
    PROX,
    SGD,
    SVM_MARGIN,
    ClientConfig,
    PenaltySchedule,
    ServerState,
    ServerStrategy,
    client_update,
    fedavg_aggregate,
    fedaws_penalty,
    fedaws_regularize,
    fedopt_step,
    moon_loss_and_gradient,
    penalty_value,
    pseudo_gradient,
    run_round,
    sample_clients,
    selective_aggregate,
    spreadout_loss,
    spreadout_regularize,
)
from fedsvm.svm import BinarySvmModel, OvoSvm, fit_ovo


def tiny_model(seed=0, input_dim=4, hidden=5, emb=3, classes=3):
    return init_model(input_dim, [hidden], emb, classes,
                      np.random.default_rng(seed))


def tiny_client_data(seed=0, n=12, input_dim=4, classes=3):
    rng = np.random.default_rng(seed + 500)
    return (rng.standard_normal((n, input_dim)),
            rng.integers(0, classes, size=n).astype(np.int64))


# ---------------------------------------------------------------------------
# Client update
# ---------------------------------------------------------------------------

def test_single_batch_vanilla_equals_manual_step():
    model = tiny_model(1)
    data = tiny_client_data(1, n=6)
    cfg = ClientConfig(epochs=1, batch_size=16, learning_rate=0.1)
    trained, _ = client_update(0, model, data, cfg, np.random.default_rng(77))

    order = np.random.default_rng(77).permutation(6)
    batch = Batch(data[0][order], data[1][order])
    _, grads = loss_and_gradient(model, batch)
    manual = sgd_step(flatten_params(model), flatten_params(grads), sgd_state(0.1))
    assert np.array_equal(flatten_params(trained), manual)


def test_prox_mu_zero_is_bitwise_vanilla():
    model = tiny_model(2)
    data = tiny_client_data(2, n=20)
    base = ClientConfig(epochs=3, batch_size=8, learning_rate=0.05)
    prox = ClientConfig(epochs=3, batch_size=8, learning_rate=0.05,
                        variant=PROX, prox_mu=0.0)
    a, _ = client_update(0, model, data, base, np.random.default_rng(5))
    b, _ = client_update(0, model, data, prox, np.random.default_rng(5))
    assert np.array_equal(flatten_params(a), flatten_params(b))


def test_zero_learning_rate_returns_global_model():
    model = tiny_model(3)
    trained, _ = client_update(0, model, tiny_client_data(3),
                               ClientConfig(learning_rate=0.0),
                               np.random.default_rng(0))
    assert np.array_equal(flatten_params(trained), flatten_params(model))


def test_client_update_leaves_global_untouched():
    model = tiny_model(4)
    before = flatten_params(model).copy()
    client_update(0, model, tiny_client_data(4), ClientConfig(),
                  np.random.default_rng(1))
    assert np.array_equal(flatten_params(model), before)


def test_empty_dataset_rejected():
    with pytest.raises(ValueError, match="empty"):
        client_update(0, tiny_model(), (np.zeros((0, 4)), np.zeros(0, dtype=int)),
                      ClientConfig(), np.random.default_rng(0))


def test_prox_gradient_zero_at_global_model():
    # At theta == theta_global the proximal term contributes exactly zero.
    flat = flatten_params(tiny_model(5))
    assert np.all(0.05 * (flat - flat) == 0.0)


def test_moon_gradient_vanishes_when_prev_equals_global():
    model = tiny_model(6)
    x = np.random.default_rng(3).standard_normal((5, model.input_dim))
    loss, grads = moon_loss_and_gradient(model, model, model, x, 0.5)
    assert loss == pytest.approx(np.log(2.0), abs=1e-12)
    assert np.linalg.norm(flatten_params(grads)) < 1e-12


def test_moon_gradient_matches_finite_differences():
    global_model = tiny_model(7)
    prev_model = tiny_model(8)
    model = tiny_model(9)
    x = np.random.default_rng(10).standard_normal((6, model.input_dim))
    _, grads = moon_loss_and_gradient(model, global_model, prev_model, x, 0.5)

    def loss_of(flat):
        return moon_loss_and_gradient(unflatten_params(model, flat), global_model,
                                      prev_model, x, 0.5)[0]

    fd = finite_difference_gradient(loss_of, flatten_params(model))
    assert relative_error(flatten_params(grads), fd) < 1e-5


# ---------------------------------------------------------------------------
# Aggregation primitives
# ---------------------------------------------------------------------------

def as_models(flats, template):
    return [unflatten_params(template, f) for f in flats]


def test_fedavg_weighted_mean():
    template = Model([(np.zeros((1, 1)), np.zeros(1))], np.zeros((2, 1)))
    size = flatten_params(template).size
    models = as_models([np.full(size, 2.0), np.full(size, 4.0)], template)
    out = fedavg_aggregate(models, [1.0, 3.0])
    assert np.all(flatten_params(out) == 3.5)


def test_fedavg_idempotent_on_identical_models():
    m = tiny_model(11)
    out = fedavg_aggregate([m.copy(), m.copy(), m.copy()], [1.0, 2.0, 9.0])
    assert np.array_equal(flatten_params(out), flatten_params(m))


def test_fedavg_single_model_identity():
    m = tiny_model(12)
    out = fedavg_aggregate([m.copy()], [5.0])
    assert np.array_equal(flatten_params(out), flatten_params(m))


def test_fedavg_rejects_empty_and_incompatible():
    with pytest.raises(ValueError):
        fedavg_aggregate([], [])
    with pytest.raises(ValueError):
        fedavg_aggregate([tiny_model(0), tiny_model(0, hidden=6)], [1.0, 1.0])


def test_pseudo_gradient_definition():
    template = tiny_model(13)
    size = flatten_params(template).size
    g = unflatten_params(template, np.concatenate([[1.0, 1.0], np.zeros(size - 2)]))
    a = unflatten_params(template, np.concatenate([[2.0, 0.0], np.zeros(size - 2)]))
    delta = pseudo_gradient(g, a)
    assert delta[0] == 1.0 and delta[1] == -1.0
    assert np.all(delta[2:] == 0.0)
    assert np.all(pseudo_gradient(g, g) == 0.0)


def test_fedopt_adam_moves_along_delta():
    model = tiny_model(14)
    delta = np.ones(flatten_params(model).size)
    out = fedopt_step(model, delta, adam_state(0.1))
    moved = flatten_params(out) - flatten_params(model)
    assert np.allclose(moved, 0.1, atol=1e-7)


def test_fedopt_zero_delta_first_step_noop():
    model = tiny_model(15)
    out = fedopt_step(model, np.zeros(flatten_params(model).size), adam_state(0.1))
    assert np.array_equal(flatten_params(out), flatten_params(model))


def test_fedopt_amsgrad_first_step_equals_adam():
    model = tiny_model(16)
    delta = np.random.default_rng(4).standard_normal(flatten_params(model).size)
    a = fedopt_step(model, delta, adam_state(0.05))
    from fedsvm.optim import amsgrad_state
    b = fedopt_step(model, delta, amsgrad_state(0.05))
    assert np.array_equal(flatten_params(a), flatten_params(b))


# ---------------------------------------------------------------------------
# Cosine spread-out regularizer
# ---------------------------------------------------------------------------

def test_fedaws_orthogonal_rows_no_change():
    w = np.eye(3)
    loss, grad = fedaws_penalty(w)
    assert loss == 0.0 and np.all(grad == 0.0)
    out = fedaws_regularize(w, adam_state(0.1))
    assert np.array_equal(out, w)


def test_fedaws_identical_rows_pair_loss_one():
    w = np.array([[1.0, 0.0], [1.0, 0.0]])
    loss, _ = fedaws_penalty(w)
    assert loss == pytest.approx(1.0, abs=1e-12)


def test_fedaws_zero_row_rejected():
    with pytest.raises(ValueError, match="zero-norm"):
        fedaws_penalty(np.array([[1.0, 0.0], [0.0, 0.0]]))


def test_fedaws_gradient_matches_finite_differences():
    rng = np.random.default_rng(20)
    checked = 0
    while checked < 5:
        w = rng.standard_normal((4, 3))
        norms = np.linalg.norm(w, axis=1)
        cosines = (w @ w.T) / np.outer(norms, norms)
        off = cosines[~np.eye(4, dtype=bool)]
        if np.any(np.abs(off) < 1e-2):
            continue  # keep away from the hinge kink
        _, grad = fedaws_penalty(w)
        fd = finite_difference_gradient(
            lambda flat: fedaws_penalty(flat.reshape(4, 3))[0], w.ravel())
        assert relative_error(grad.ravel(), fd) < 1e-5
        checked += 1


# ---------------------------------------------------------------------------
# SVM-margin pieces
# ---------------------------------------------------------------------------

def test_spreadout_equal_projections_give_max_term():
    w = np.array([[1.0, 0.0], [1.0, 0.0]])
    normals = {(0, 1): np.array([1.0, 0.0])}
    loss, _ = spreadout_loss(w, normals)
    assert loss == pytest.approx(1.0, abs=1e-12)


def test_spreadout_unit_variance_distance_gives_inv_e():
    h = np.array([2.0, 0.0])
    # Projection difference squared equal to 2|h|^2 makes the pair term 1/e:
    # the rows differ by sqrt(2) along the normal direction.
    w = np.array([[np.sqrt(2.0) / 2.0, 0.0], [-np.sqrt(2.0) / 2.0, 0.0]])
    loss, _ = spreadout_loss(w, {(0, 1): h})
    assert loss == pytest.approx(np.exp(-1.0), abs=1e-12)


def test_spreadout_zero_normal_rejected():
    with pytest.raises(ValueError, match="zero-norm"):
        spreadout_loss(np.eye(2), {(0, 1): np.zeros(2)})


def test_spreadout_gradient_matches_finite_differences():
    rng = np.random.default_rng(30)
    k, d = 4, 3
    normals = {(a, b): rng.standard_normal(d)
               for a in range(k) for b in range(a + 1, k)}
    for _ in range(5):
        w = rng.standard_normal((k, d))
        _, grad = spreadout_loss(w, normals)
        fd = finite_difference_gradient(
            lambda flat: spreadout_loss(flat.reshape(k, d), normals)[0], w.ravel())
        assert relative_error(grad.ravel(), fd) < 1e-5


def fake_binary(alphas):
    return BinarySvmModel(normal=np.zeros(1), bias=0.0, alphas=np.asarray(alphas),
                          support_indices=tuple(np.flatnonzero(np.asarray(alphas) > 1e-8)),
                          slacks=np.zeros(len(alphas)), primal_value=0.0,
                          dual_value=0.0, duality_gap=0.0, converged=True, sweeps=1)


def test_selective_aggregate_weighted_mean_of_support_rows():
    # Class 0 has clients 0..3; only clients 1 and 3 support the single
    # pair problem, with sizes 1 and 3 and embeddings 0 and 4.
    class_samples = {
        0: [(0, np.array([9.0]), 2.0), (1, np.array([0.0]), 1.0),
            (2, np.array([9.0]), 2.0), (3, np.array([4.0]), 3.0)],
        1: [(0, np.array([-1.0]), 1.0)],
    }
    alphas = np.array([0.0, 1.0, 0.0, 1.0, 1.0])  # rows: class0 x4, class1 x1
    ovo = OvoSvm(2, {(0, 1): fake_binary(alphas)}, class_samples)
    w = selective_aggregate(ovo)
    assert w[0, 0] == pytest.approx(3.0, abs=1e-12)
    assert w[1, 0] == -1.0


def test_selective_aggregate_single_client_keeps_rows():
    embeddings = {0: [(np.array([1.0, 2.0]), 4.0)], 1: [(np.array([-1.0, 0.5]), 4.0)]}
    ovo = fit_ovo(embeddings, 1.0)
    w = selective_aggregate(ovo)
    assert np.array_equal(w, np.array([[1.0, 2.0], [-1.0, 0.5]]))


def test_selective_aggregate_all_svs_equal_sizes_is_plain_mean():
    rng = np.random.default_rng(40)
    rows0 = [rng.standard_normal(2) for _ in range(3)]
    rows1 = [r + np.array([5.0, 0.0]) for r in (rng.standard_normal(2) for _ in range(3))]
    embeddings = {0: [(r, 2.0) for r in rows0], 1: [(r, 2.0) for r in rows1]}
    ovo = fit_ovo(embeddings, 1e-6)  # vanishing penalty makes every point a support vector
    w = selective_aggregate(ovo)
    from fedsvm.numerics import weighted_mean
    assert np.array_equal(w[0], weighted_mean(rows0, [2.0, 2.0, 2.0]))
    assert np.array_equal(w[1], weighted_mean(rows1, [2.0, 2.0, 2.0]))


def test_spreadout_regularize_strictly_decreases_loss():
    rng = np.random.default_rng(41)
    embeddings = {k: [(rng.standard_normal(3) + 3.0 * np.eye(3)[k], 1.0),
                      (rng.standard_normal(3) + 3.0 * np.eye(3)[k], 1.0)]
                  for k in range(3)}
    ovo = fit_ovo(embeddings, 1.0)
    w = selective_aggregate(ovo)
    for steps in (1, 5, 10):
        _, losses = spreadout_regularize(w, ovo, adam_state(1e-3), steps)
        assert len(losses) == steps
        assert all(b < a for a, b in zip(losses, losses[1:])), losses


def test_penalty_schedule_values():
    sched = PenaltySchedule(initial=1.0, floor=0.01, total_rounds=100)
    assert penalty_value(sched, 0) == 1.0
    assert penalty_value(sched, 99) == pytest.approx(0.01)
    values = [penalty_value(sched, t) for t in range(100)]
    assert all(b <= a for a, b in zip(values, values[1:]))
    with pytest.raises(ValueError):
        penalty_value(sched, 100)
    inc = PenaltySchedule(initial=1.0, floor=0.01, total_rounds=100, mode="increasing")
    inc_values = [penalty_value(inc, t) for t in range(100)]
    assert inc_values == values[::-1]


# ---------------------------------------------------------------------------
# Round engine
# ---------------------------------------------------------------------------

def small_dataset(seed=0, clients=6, classes=3, dim=4):
    return generate_synthetic(SyntheticSpec(
        num_clients=clients, num_classes=classes, feature_dim=dim,
        samples_per_client_mean=15, samples_per_client_spread=5,
        dirichlet_alpha=0.5, class_separation=3.0, noise_sigma=0.5, seed=seed))


def make_server(kind=FEDAVG, **kwargs):
    return ServerState.create(ServerStrategy(kind=kind, **kwargs))


def test_run_round_single_client_fedavg_equals_client_model():
    dataset = small_dataset(clients=2)
    assert len(dataset.train_client_indices) == 1
    n = dataset.train_client_indices[0]
    model = init_model(dataset.feature_dim, [5], 3, dataset.num_classes,
                       np.random.default_rng(0))
    cfg = ClientConfig(epochs=1, batch_size=8, learning_rate=0.1)
    new_model, rec = run_round(0, model, dataset, make_server(), cfg, 1, seed=3)

    rng = np.random.default_rng(np.random.SeedSequence([3, 2, 0, n]))
    expected, _ = client_update(n, model, dataset.clients[n], cfg, rng)
    assert np.array_equal(flatten_params(new_model), flatten_params(expected))
    assert rec.selected_clients == (n,)


def test_run_round_deterministic_given_seed():
    dataset = small_dataset(1)
    model = init_model(dataset.feature_dim, [5], 3, dataset.num_classes,
                       np.random.default_rng(1))
    cfg = ClientConfig(epochs=1, batch_size=8, learning_rate=0.05)
    outs = []
    for _ in range(2):
        server = make_server(SVM_MARGIN, server_learning_rate=1e-2,
                             schedule=PenaltySchedule(total_rounds=3), reg_steps=1)
        m = model.copy()
        recs = []
        for t in range(3):
            m, rec = run_round(t, m, dataset, server, cfg, 3, seed=7)
            recs.append((rec.train_loss, rec.lam, rec.sv_counts, rec.selected_clients))
        outs.append((flatten_params(m), recs))
    assert np.array_equal(outs[0][0], outs[1][0])
    assert outs[0][1] == outs[1][1]


def test_fedopt_sgd_unit_rate_is_bitwise_fedavg():
    dataset = small_dataset(2)
    model = init_model(dataset.feature_dim, [5], 3, dataset.num_classes,
                       np.random.default_rng(2))
    cfg = ClientConfig(epochs=1, batch_size=8, learning_rate=0.05)
    m_avg, m_opt = model.copy(), model.copy()
    server_avg = make_server()
    server_opt = make_server(FEDOPT, server_optimizer=SGD, server_learning_rate=1.0)
    for t in range(5):
        m_avg, _ = run_round(t, m_avg, dataset, server_avg, cfg, 3, seed=11)
        m_opt, _ = run_round(t, m_opt, dataset, server_opt, cfg, 3, seed=11)
        assert np.array_equal(flatten_params(m_avg), flatten_params(m_opt))


def test_svm_margin_encoder_matches_fedavg_encoder():
    dataset = small_dataset(3)
    model = init_model(dataset.feature_dim, [5], 3, dataset.num_classes,
                       np.random.default_rng(3))
    cfg = ClientConfig(epochs=1, batch_size=8, learning_rate=0.05)
    server = make_server(SVM_MARGIN, server_learning_rate=1e-2,
                         schedule=PenaltySchedule(total_rounds=1), reg_steps=1)
    m_svm, rec = run_round(0, model.copy(), dataset, server, cfg, 3, seed=13)
    m_avg, _ = run_round(0, model.copy(), dataset, make_server(), cfg, 3, seed=13)
    for (w1, b1), (w2, b2) in zip(m_svm.encoder, m_avg.encoder):
        assert np.array_equal(w1, w2) and np.array_equal(b1, b2)
    assert rec.lam == 1.0
    assert rec.sv_counts is not None and len(rec.sv_counts) == dataset.num_classes


def test_svm_margin_degenerate_equals_fedavg_logits():
    # Vanishing penalty makes every embedding a support vector; with equal
    # dataset sizes and no regularizer steps the logit rows reduce to the
    # plain weighted mean.
    dataset = generate_synthetic(SyntheticSpec(
        num_clients=6, num_classes=3, feature_dim=4,
        samples_per_client_mean=12, samples_per_client_spread=0,
        dirichlet_alpha=0.5, class_separation=3.0, noise_sigma=0.5, seed=9))
    model = init_model(dataset.feature_dim, [5], 3, dataset.num_classes,
                       np.random.default_rng(4))
    cfg = ClientConfig(epochs=1, batch_size=8, learning_rate=0.05)
    schedule = PenaltySchedule(initial=1e-6, floor=1e-6, total_rounds=4)
    server = make_server(SVM_MARGIN, server_learning_rate=1e-2,
                         schedule=schedule, reg_steps=0)
    server_avg = make_server()
    m_svm, m_avg = model.copy(), model.copy()
    for t in range(4):
        m_svm, rec = run_round(t, m_svm, dataset, server, cfg, 3, seed=17)
        m_avg, _ = run_round(t, m_avg, dataset, server_avg, cfg, 3, seed=17)
        assert rec.sv_counts == (3, 3, 3)
        assert np.array_equal(m_svm.logit_matrix, m_avg.logit_matrix)
        assert np.array_equal(flatten_params(m_svm), flatten_params(m_avg))


def test_sampling_frequencies_are_uniform():
    counts = np.zeros(10)
    for t in range(10_000):
        rng = np.random.default_rng(np.random.SeedSequence([123, 1, t]))
        for i in sample_clients(range(10), 3, rng):
            counts[i] += 1
    freq = counts / 10_000
    assert np.all(freq >= 0.27) and np.all(freq <= 0.33)


def test_sample_clients_rejects_oversampling():
    with pytest.raises(ValueError):
        sample_clients(range(3), 4, np.random.default_rng(0))


def test_moon_round_uses_previous_model_store():
    dataset = small_dataset(5)
    model = init_model(dataset.feature_dim, [5], 3, dataset.num_classes,
                       np.random.default_rng(5))
    cfg = ClientConfig(epochs=1, batch_size=8, learning_rate=0.05,
                       variant=MOON, moon_coeff=1.0)
    server = make_server()
    m = model.copy()
    for t in range(2):
        m, _ = run_round(t, m, dataset, server, cfg, 3, seed=19)
    assert server.prev_models  # clients trained this run are remembered
