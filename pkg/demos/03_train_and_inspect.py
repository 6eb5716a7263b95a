"""Train a small captioner for a few epochs, then caption a pair and look at its attention.

This is a scaled-down run that finishes in about a minute; the acceptance suite
trains the full desk-scale model.
"""
import numpy as np

from r3net import datagen, training
from r3net.model import ModelDims

gen = datagen.GenConfig(channels=16)
train_set = datagen.build_corpus(1000, seed=1, config=gen)
held_out = datagen.build_corpus(60, seed=2, config=gen)

config = training.TrainConfig(variant="r3net-ssp", epochs=12, eval_every=4, lr=3e-3,
                              dims=ModelDims(c_in=16, c=16, hidden=32, skel_dim=16, word_dim=16))
state, records = training.train(train_set, config, held_out=held_out)
for r in records:
    line = f"epoch {r['epoch']}: loss {r['loss']:.3f} (caption {r['loss_cap']:.3f}, skeleton {r['loss_s']:.3f})"
    if "held_out" in r:
        h = r["held_out"]
        line += f"  CIDEr {h['cider']:.2f}  type acc {h['change_type_accuracy']:.2f}  pointing {h['pointing_accuracy']:.2f}"
    print(line)

# Caption one held-out pair and compare with its reference.
i = next(k for k, p in enumerate(held_out.pairs) if p.kind == "Move")
pred = training.predict(state, held_out.before[i : i + 1], held_out.after[i : i + 1])
pair = held_out.pairs[i]
print("\nreference:", " ".join(pair.caption))
print("generated:", " ".join(pred.captions[0]))
print("changed cells (before frame):", pair.change.cells)


def show(grid, title):
    # darker characters mark stronger attention
    ramp = " .:-=+*#%@"
    a = grid.reshape(gen.height, gen.width)
    a = (a - a.min()) / (np.ptp(a) + 1e-12)
    print(title)
    for row in a:
        print("   " + "".join(ramp[int(v * (len(ramp) - 1))] * 2 for v in row))


show(pred.a_bef[0], "localizer map, before image:")
show(pred.a_aft[0], "localizer map, after image:")

# The decoder mixes the three features with weights beta at every word.
for word, beta in zip(pred.captions[0] + ["<eos>"], pred.betas[0]):
    print(f"  {word:<10s} bef {beta[0]:.2f}  aft {beta[1]:.2f}  diff {beta[2]:.2f}")

# Top skeletons from the predictor.
probs = pred.skel_probs[0]
print("top skeletons:", [(datagen.SKELETONS[k], round(float(probs[k]), 2)) for k in np.argsort(-probs)[:6]])
