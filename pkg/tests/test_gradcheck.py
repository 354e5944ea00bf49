"""The finite-difference suite itself, plus the analytic corner cases."""

import numpy as np

from videotok.autodiff import Tensor, tsum
from videotok.encoders import EncoderConfig, build_encoder
from videotok.gradcheck import (
    default_suite,
    encoder_gradcheck,
    finite_difference_check,
    relative_error,
    run_suite,
)


def test_relative_error_unit_floor():
    # Exactly-zero analytic gradient against finite-difference roundoff
    # must not blow up into a 0/0-style failure.
    assert relative_error(0.0, 1e-12) < 1e-4
    assert relative_error(5.0, 5.0005) < 2e-4
    assert relative_error(0.0, 1e-3) >= 1e-4


def test_mean_pool_input_gradient_is_one_over_t():
    config = EncoderConfig("mean_pool", m=3, channels=4)
    encoder = build_encoder(config, np.random.default_rng(0))
    grid = Tensor(np.random.default_rng(1).normal(size=(1, 5, 3, 4)), requires_grad=True)
    tsum(encoder.encode_batch(grid)).backward()
    np.testing.assert_allclose(grid.grad, 1.0 / 5.0, atol=1e-15)


def test_tokenlearner_gradcheck_at_reference_dims():
    result = encoder_gradcheck(
        EncoderConfig("tokenlearner_pool", m=2, channels=4), frames=2, tokens_per_frame=3
    )
    assert result.passed, str(result)


def test_grouped_ttm_gradcheck_at_reference_dims():
    result = encoder_gradcheck(
        EncoderConfig("grouped_ttm", m=4, channels=8, group_slots=2,
                      read_size=3, layers=1, heads=2),
        frames=3, tokens_per_frame=4,
    )
    assert result.passed, str(result)


def test_full_suite_passes():
    results = run_suite()
    assert len(results) == len(default_suite())
    for result in results:
        assert result.passed, str(result)
        assert result.max_rel_error < 1e-4


def test_finite_difference_check_catches_broken_gradients():
    # An op whose backward lies about its Jacobian must be flagged.
    from videotok.autodiff import _make

    def bad_double(t):
        return _make(2.0 * t.data, (t,), lambda g: (3.0 * g,))

    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    result = finite_difference_check(
        lambda: tsum(bad_double(x)), [("x", x)], label="broken"
    )
    assert not result.passed
    assert result.worst_tensor == "x"
