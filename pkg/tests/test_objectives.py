import pytest
from context import beamx

import jax
import jax.numpy as jnp
import numpy as np

from beamx import diffcore as dc
from beamx.baselines import mrt
from beamx.channel import DatasetHeader, sample_channels
from beamx.diffcore import Tape, Tensor, grad_check
from beamx.errors import ConfigError, ShapeError
from beamx.objectives import (
    BeamBatch,
    BeamMatrix,
    UtilitySpec,
    dual_update,
    energy_efficiency,
    loss_lagrangian,
    loss_penalty,
    loss_supervised,
    loss_unsupervised,
    min_rate,
    rates_numpy,
    sum_rate,
    user_rates,
    utility_numpy,
    utility_value,
)


def _channels(K=3, N=4, count=3, seed=0):
    return [s.H for s in sample_channels(DatasetHeader(k_users=K, n_antennas=N, count=count, seed=seed))]


def _beams(K, N, seed, power=1.0):
    key = jax.random.PRNGKey(seed)
    z = np.asarray(jax.random.normal(key, (2, N, K), dtype=jnp.float64))
    W = z[0] + 1j * z[1]
    return W * np.sqrt(power / np.sum(np.abs(W) ** 2))


def test_rates_match_numpy_reference():
    H = _channels(count=1)[0]
    W = _beams(3, 4, 1, power=5.0)
    rates = user_rates(H, W, sigma2=0.5).numpy()

    assert np.allclose(rates, rates_numpy(H, W, 0.5), atol=1e-12)


def test_single_user_closed_form():
    H = _channels(K=1, N=4, count=1)[0]
    P, sigma2 = 10.0, 1.0
    W = mrt(H, P)
    expected = np.log2(1.0 + P * np.sum(np.abs(H) ** 2) / sigma2)
    rate = sum_rate(user_rates(H, W, sigma2)).item()

    assert abs(rate - expected) < 1e-9


@pytest.mark.parametrize("kind", ["srm", "eem", "mmr"])
def test_utility_matches_numpy(kind):
    H = _channels(count=1)[0]
    W = _beams(3, 4, 2, power=3.0)
    spec = UtilitySpec(kind=kind, sigma2=1.0, power_budget=10.0, circuit_power=2.0)

    assert abs(utility_value(spec, H, W).numpy()[0] - utility_numpy(H, W, spec)) < 1e-12


@pytest.mark.parametrize("kind", ["srm", "eem", "mmr"])
def test_batched_utility_matches_per_sample(kind):
    channels = _channels(count=4, seed=3)
    matrices = [_beams(3, 4, 10 + i, power=2.0 + i) for i in range(4)]
    spec = UtilitySpec(kind=kind)
    batch = BeamBatch.from_matrices(matrices, spec.power_budget)
    values = utility_value(spec, np.concatenate(channels, axis=0), batch).numpy()

    assert values.shape == (4,)
    for i in range(4):
        assert abs(values[i] - utility_numpy(channels[i], matrices[i], spec)) < 1e-12


def test_utilities_on_mixed_user_counts():
    channels = _channels(K=2, N=4, count=1, seed=1) + _channels(K=3, N=4, count=1, seed=2)
    matrices = [_beams(2, 4, 5), _beams(3, 4, 6)]
    batch = BeamBatch.from_matrices(matrices, 10.0)
    rates = user_rates(np.concatenate(channels, axis=0), batch, 1.0)

    assert rates.shape == (5,)
    assert np.allclose(sum_rate(rates, batch).numpy(), [rates_numpy(H, W, 1.0).sum() for H, W in zip(channels, matrices)])
    assert np.allclose(min_rate(rates, batch).numpy(), [rates_numpy(H, W, 1.0).min() for H, W in zip(channels, matrices)])


@pytest.mark.parametrize("kind", ["srm", "eem", "mmr"])
def test_utility_gradient(kind):
    H = _channels(count=1, seed=4)[0]
    W = _beams(3, 4, 7, power=4.0)
    rows = W.T
    spec = UtilitySpec(kind=kind)

    def fn(p):
        beams = BeamBatch(Wr=p["Wr"], Wi=p["Wi"], k_users=(3,), raw_power=np.zeros(1), power_budget=10.0)
        return dc.sum(utility_value(spec, H, beams))

    assert grad_check(fn, {"Wr": rows.real.copy(), "Wi": rows.imag.copy()}) < 1e-6


def test_zero_signal_gradient_is_finite():
    H = _channels(count=1)[0]
    Wr = Tensor.parameter(np.zeros((3, 4)))
    Wi = Tensor.parameter(np.zeros((3, 4)))
    with Tape() as tape:
        beams = BeamBatch(Wr=Wr, Wi=Wi, k_users=(3,), raw_power=np.zeros(1), power_budget=1.0)
        total = dc.sum(sum_rate(user_rates(H, beams, 1.0), beams))
    grads = dc.backward(tape, total)

    assert total.item() == 0.0
    assert np.all(np.isfinite(grads[Wr]))


def test_energy_efficiency_counts_circuit_power():
    H = _channels(count=1)[0]
    W = _beams(3, 4, 8, power=2.0)
    rates = user_rates(H, W, 1.0)
    ee = energy_efficiency(rates, W, circuit_power=3.0).numpy()[0]

    assert abs(ee - rates.numpy().sum() / 5.0) < 1e-12


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        user_rates(_channels(K=3, N=4, count=1)[0], _beams(2, 4, 0), 1.0)


def test_beam_matrix_feasibility():
    W = _beams(2, 3, 0, power=10.0)

    assert BeamMatrix.create(W, 10.0).feasible
    assert not BeamMatrix.create(W * 1.01, 10.0).feasible


def test_losses():
    utility = Tensor.constant(np.array([1.0, 3.0]))
    power = Tensor.constant(np.array([9.0, 12.0]))

    assert loss_unsupervised(utility).item() == -2.0
    assert loss_supervised(utility, np.array([2.0, 3.0])).item() == 0.5
    assert loss_penalty(utility, power, 10.0, rho=2.0).item() == pytest.approx((-1.0 + -3.0 + 2.0 * 4.0) / 2)
    assert loss_lagrangian(utility, power, 10.0, lam=0.5).item() == pytest.approx((-1.0 - 0.5 - 3.0 + 1.0) / 2)


def test_penalty_vanishes_inside_budget():
    utility = Tensor.constant(np.array([2.0]))
    power = Tensor.constant(np.array([4.0]))

    assert loss_penalty(utility, power, 10.0, rho=100.0).item() == loss_unsupervised(utility).item()


def test_dual_update_stays_non_negative():
    assert dual_update(0.1, -5.0, 0.05) == 0.0
    assert dual_update(0.1, 2.0, 0.05) == pytest.approx(0.2)
    with pytest.raises(ConfigError):
        dual_update(0.1, 1.0, 0.0)


def test_invalid_utility():
    with pytest.raises(ConfigError):
        UtilitySpec(kind="sinr").validate()
