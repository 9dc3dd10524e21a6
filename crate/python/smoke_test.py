"""Smoke test for the qovae extension module.

Build and install first:
    maturin develop -m crates/python/Cargo.toml --release
"""

import math
import tempfile

import qovae

WORKED = "BS(b,c) OAMHolo(b,1) DownConv(c,d) Ref(c) OAMHolo(a,1)"


def check_vocabulary():
    v = qovae.Vocabulary()
    assert v.size == 67, v.size
    assert v.max_len == 12
    idx = v.encode(WORKED)
    assert len(idx) == 12 and idx[5:] == [0] * 7
    assert v.decode(idx) == WORKED
    assert v.canonical("BS(c,b) Ref(a)") == "BS(b,c) Ref(a)"
    try:
        v.encode("Foo(a)")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown device accepted")


def check_simulation():
    out = qovae.Vocabulary().simulate(WORKED)
    kets = sorted(tuple(k) for k, _ in out["kets"])
    assert kets == [(1, 1, -1, -1), (1, 1, 0, 0), (1, 1, 1, 1)], kets
    for _, amp in out["kets"]:
        assert abs(abs(amp) ** 2 - 1 / 3) < 1e-12
    assert abs(out["summary"]["total"] - 4 * math.log(3)) < 1e-9

    ghz = qovae.summarize([((0, 0, 0, 0), 1.0), ((1, 1, 1, 1), 1.0)])
    assert all(abs(s - math.log(2)) < 1e-9 for s in ghz["entropies"])
    assert ghz["ranks"] == [2] * 7


def check_generation():
    a = qovae.generate_dataset(40, s_min=0.0, seed=3)
    b = qovae.generate_dataset(40, s_min=0.0, seed=3)
    assert a == b and len(a) == 40
    assert all(s > 0 for _, s in a)


def check_model():
    data = [s for s, _ in qovae.generate_dataset(64, seed=1)]
    model, log = qovae.Model.train(data, latent_dim=2, epochs=3, seed=0)
    assert len(log) == 3 and all(math.isfinite(r[1]) for r in log)
    z = model.encode(data[0])
    assert len(z) == model.latent_dim == 2
    assert model.decode(z) == model.decode(z)
    assert model.sample(5, seed=9) == model.sample(5, seed=9)
    with tempfile.TemporaryDirectory() as d:
        model.save(d)
        again = qovae.Model.load(d)
        assert again.encode(data[0]) == z


if __name__ == "__main__":
    check_vocabulary()
    check_simulation()
    check_generation()
    check_model()
    print("python smoke test passed")
