"""Quick end-to-end check of the compiled module: data, training, explanations, metrics."""

import json
import math
import tempfile

import attrex_py as ax


def main():
    data = ax.Dataset.generate(48, 7, json.dumps({"height": 16, "width": 16}))
    again = ax.Dataset.generate(48, 7, json.dumps({"height": 16, "width": 16}))
    assert len(data) == 48 and data.id == again.id
    assert data.image(0).data == again.image(0).data

    model, losses, f1 = ax.train(data, seed=1, epochs=4)
    assert len(losses) == 4 and 0.0 <= f1 <= 1.0
    print(f"trained: loss {losses[0]:.3f} -> {losses[-1]:.3f}, macro-F1 {f1:.3f}")

    with tempfile.TemporaryDirectory() as d:
        model.save(f"{d}/m.bin")
        assert ax.Model.load(f"{d}/m.bin").logits(data.image(0)) == model.logits(data.image(0))

    i = next(i for i in range(len(data)) if sum(data.labels(i)) > 1)
    x = data.image(i)
    labels = data.labels(i)
    masks = [data.mask(i, c).data for c in range(data.num_classes)]
    masks = [[v > 0.5 for v in m] for m in masks]
    cls = labels.index(True)
    for method in ["gradcam", "lrp", "deeplift", "lime", "random"]:
        attr = ax.explain(model, x, cls, method)
        assert attr.shape == [16, 16]
        raw, oriented = ax.score("rra", model, x, cls, attr, method, masks=masks)
        assert 0.0 <= raw <= 1.0
        print(f"{method:>9}: RRA {raw:.3f}")

    try:
        ax.explain(model, x, cls, "shap")
    except ValueError as e:
        assert "shap" in str(e)
    else:
        raise AssertionError("unknown method accepted")

    assert ax.mc_score(1.0, 0.0, 0.5, 0.5) == 0.5
    assert ax.iac([1.0, 2, 3, 4, 5, 6], [[1.0, 2, 3, 4, 5, 6]], "minor") == 1.0
    assert math.isclose(ax.pearson([1, 2, 3], [2, 4, 7]), 0.9933992677987828, rel_tol=1e-12)
    assert ax.derive_seed(1, "x", [2]) == ax.derive_seed(1, "x", [2])

    report = json.loads(
        ax.meta_evaluate(model, data, ["gradcam", "random"], ["sp"], n_samples=8, k_plans=1, iterations=1, seed=3)
    )
    mc = report["summary"][0]["mc"]["mean"]
    print(f"meta: sp MC {mc:.3f}")
    print("smoke test passed")


if __name__ == "__main__":
    main()
