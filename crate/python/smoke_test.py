"""Smoke test for the miolab extension module.

Build and import:
    cargo build --release -p miolab-py
    cp target/release/libmiolab.so python/miolab.so
    python3 python/smoke_test.py
"""

import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import miolab  # noqa: E402


def close(a, b, tol=1e-9):
    return abs(a - b) <= tol * max(1.0, abs(a), abs(b))


def main():
    # losses on a pair with π⁺ = 0.2, π⁻ = 0.1 and reference 0.25 / 0.25
    dpo = miolab.pair_loss("dpo", 0.2, 0.1, 0.25, 0.25, beta=1.0)
    expected = math.log1p(math.exp(-(math.log(0.2 / 0.25) - math.log(0.1 / 0.25))))
    assert close(dpo, expected), (dpo, expected)
    gp, gm = miolab.pair_grads("dpo", 0.2, 0.1, 0.25, 0.25)
    assert gp < 0 < gm and close(gm / -gp, 2.0)
    mp, mm = miolab.pair_grads("mio", 0.2, 0.1, 0.25, 0.25)
    assert mm > 0
    root = miolab.mio_self_regulation_root(1.0)
    assert close(root, math.log(2.0), 1e-9), root
    assert close(miolab.log_ratio_grads("mio", root, -1.0)[0], 0.0, 1e-9)

    policy = miolab.PolicyTable.from_logits(4, 10, [0.1 * i for i in range(40)])
    reference = miolab.PolicyTable.uniform(4, 10)
    assert policy.shape == (4, 10)
    assert all(close(sum(row), 1.0) for row in policy.prob_table())
    loss = miolab.preference_loss("mio", policy, reference, 0, 9, 0)
    assert math.isfinite(loss)
    policy.set_probability(1, 3, 1e-3)
    assert close(policy.prob(1, 3), 1e-3)
    policy.freeze()
    assert policy.frozen
    assert miolab.critic_reward_identity_error(policy, reference, 0.5, 1.0) < 1e-9

    assert close(miolab.infonce_estimate([2.0], [1.0]), -math.log1p(math.exp(-1.0)))
    assert miolab.jsd_estimate([0.0, 0.0], [0.0, 0.0]) <= -2 * math.log(2) + 1e-12
    gap, _cv = miolab.jensen_gap([1.0, 4.0], [0.5, 0.5])
    assert gap > 0
    assert close(miolab.analytic_mi(0.5), -0.5 * math.log(1 - 0.25))

    rows = miolab.run_toy(1, "mio", seed=3, steps=50)
    assert len(rows) == 51 and rows[-1][2] < rows[0][2]

    est, var, trace = miolab.train_gaussian_critic(0.5, "jsd", steps=60, batch=64, variance_window=20)
    assert len(trace) == 60 and var >= 0 and math.isfinite(est)

    for pi_star, measured, bound in miolab.starvation_sweep(1.0, [1e-2, 1e-4]):
        assert measured <= bound + 1e-12, (pi_star, measured, bound)
    auto, decomp = miolab.dv_directional_derivative("log-ratio", zero_support=True, seed=5)
    assert abs(auto) < 1e-10 and abs(auto - decomp) < 1e-10

    for suite, points, err in miolab.run_gradcheck(points=100):
        assert err < 1e-5, (suite, points, err)

    with tempfile.TemporaryDirectory() as out:
        checks = miolab.run_suite("gradcheck", out)
        assert checks and all(passed for _, passed, _ in checks), checks
        assert os.path.exists(os.path.join(out, "gradcheck.csv"))

    try:
        miolab.pair_loss("ppo", 0.2, 0.1, 0.25, 0.25)
    except ValueError:
        pass
    else:
        raise AssertionError("unknown method accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
