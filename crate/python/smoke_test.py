"""Smoke test for the `mgr_py` extension module.

Build first:
    cargo build --release -p mgr-python --features extension-module
then run `python3 python/smoke_test.py` from the repository root. The script
copies the built library next to a temporary `mgr_py.so` when the module is
not already importable.
"""

import glob
import math
import os
import shutil
import sys
import tempfile


def import_module():
    try:
        import mgr_py  # noqa: F401
        return mgr_py
    except ImportError:
        pass
    root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    candidates = sorted(
        glob.glob(os.path.join(root, "target", "*", "libmgr_py.so")),
        key=os.path.getmtime,
        reverse=True,
    )
    if not candidates:
        sys.exit("libmgr_py.so not found; build with --features extension-module")
    tmp = tempfile.mkdtemp()
    shutil.copy(candidates[0], os.path.join(tmp, "mgr_py.so"))
    sys.path.insert(0, tmp)
    import mgr_py
    return mgr_py


def main():
    m = import_module()

    assert abs(m.p_spurious(1, 0.7) - 0.3) < 1e-15
    assert abs(m.p_spurious(3, 0.67) - 0.254826) < 1e-9
    mean, stderr = m.monte_carlo_spurious(3, 0.67, 200_000, 1)
    assert abs(mean - 0.254826) < 4 * stderr
    assert abs(m.estimate_pc(15395, 15169) - 0.6650275245327357) < 1e-12
    payoff, grad = m.predictor_payoff(3, 2, 1.0, 0.0, 0.67, 0.33, 0.8)
    assert grad > 0 and math.isfinite(payoff)

    assert m.omega([1, 1, 0, 0], 4, 1.0, 1.0, 0.5) == 1.0
    p, r, f1 = m.token_prf1([[1, 1, 0, 0]], [[0, 1, 1, 0]])
    assert (p, r, f1) == (0.5, 0.5, 0.5)
    assert m.generator_overlap([1, 1, 0], [1, 0, 1]) == 0.5
    marg, joint, lo, hi = m.entropy_bounds([2, 2], [0.25, 0.25, 0.25, 0.25])
    assert lo and hi and abs(joint - 2.0) < 1e-12 and marg == [1.0, 1.0]
    assert m.grad_check() < 1e-4

    corpus = m.SyntheticCorpus(seed=1, rho=0.0, train_size=400, dev_size=100, test_size=100)
    ids, label, gold = corpus.records("train")[0]
    assert len(ids) == len(gold) == 40 and label in (0, 1)

    cfg = m.TrainConfig("epochs = 2\nembed_dim = 8\nhidden_size = 8", n=3, seed=1)
    rates, pred_rate = cfg.schedule()
    assert rates == [cfg_eta * k for cfg_eta in [rates[0]] for k in (1, 2, 3)]
    assert abs(pred_rate - rates[0] / 3) < 1e-18
    try:
        cfg.set("lambda1", "-1")
        raise AssertionError("negative lambda1 accepted")
    except ValueError as e:
        assert "lambda1" in str(e)

    model = m.Model.train(corpus, cfg)
    assert model.generators == 3 and 0.0 <= model.test_f1 <= 1.0
    mask, probs = model.infer(ids)
    assert len(mask) == 40 and abs(sum(probs) - 1.0) < 1e-12

    path = os.path.join(tempfile.mkdtemp(), "model.ckpt")
    model.save(path)
    again = m.Model.load(path)
    assert again.infer(ids) == (mask, probs)

    print("smoke test passed")


if __name__ == "__main__":
    main()
