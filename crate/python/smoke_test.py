"""Smoke test for the blockkey Python extension.

Build and install first:
    cd crates/py && maturin develop --release
or
    maturin build --release -o dist && pip install dist/blockkey-*.whl
"""
import math
import os
import tempfile

import blockkey


def main():
    key = blockkey.KeySet.generate(4, "SHF+NP", seed=42)
    assert key.block_size == 4 and key.transforms == "SHF+NP"
    assert sorted(key.alpha) == list(range(48))
    assert blockkey.KeySet.from_json(key.to_json()) == key

    assert blockkey.key_space(2, "SHF") == math.factorial(12)
    assert blockkey.key_space(8, "SHF+NP+FFX") == math.factorial(192) * 2 ** 384
    assert blockkey.pair_count(4) == 48 * 47 // 2

    cipher = blockkey.FeistelCipher("password")
    assert [cipher.encrypt(n) for n in (0, 1, 255, 999)] == [484, 365, 213, 971]
    assert sorted(cipher.encrypt(n) for n in range(1000)) == list(range(1000))

    data = blockkey.Dataset.synthetic(2, 20, size=8, seed=3)
    train, test = data.split(0.75, 1)
    shape = data.shape
    image = test.image(0)
    pipe = blockkey.Pipeline(blockkey.KeySet.generate(4, "SHF+NP", seed=1))
    enc = pipe.transform(image, shape)
    back = pipe.invert(enc, shape)
    assert all(abs(a - b) < 1e-6 for a, b in zip(back, (round(v * 255) / 255 for v in image)))

    k4 = blockkey.KeySet.generate(4, "NP", seed=5)
    model, losses = blockkey.train(train, key=k4, epochs=2, batch_size=8)
    assert len(losses) == 2 and all(math.isfinite(x) for x in losses)
    acc = model.evaluate(test, key=k4)
    assert 0.0 <= acc <= 1.0
    probs = model.predict_proba(pipe.transform(image, shape), shape)
    assert abs(sum(probs) - 1.0) < 1e-6

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "m.bknn")
        model.save(path)
        again = blockkey.Classifier.load(path)
        assert again.evaluate(test, key=k4) == acc
        try:
            again.evaluate(test, key=blockkey.KeySet.generate(2, "NP", seed=5))
        except ValueError as e:
            assert "M=2" in str(e)
        else:
            raise AssertionError("mismatched key accepted")

    r = blockkey.pixel_correlation(image, shape, "horizontal", samples=32)
    assert -1.0 <= r <= 1.0

    try:
        blockkey.KeySet.generate(4, "XOR", seed=1)
    except ValueError:
        pass
    else:
        raise AssertionError("bad transform name accepted")
    print("python smoke test ok")


if __name__ == "__main__":
    main()
