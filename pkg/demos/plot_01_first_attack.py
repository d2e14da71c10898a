"""
A first adversarial example
===========================

Train the small reference network on the synthetic pattern corpus, then
push one test image across the decision boundary with a single
gradient-sign step.
"""
from pathlib import Path

import numpy as np

from advlab import desk
from advlab.attacks import fgsm, write_pnm
from advlab.network import accuracy

OUT = Path("demo_output")
OUT.mkdir(exist_ok=True)

# 3000 training and 1000 test images of 28x28 procedural patterns, ten classes
train, test = desk.desk_corpus()
print(train.class_names)

# fewer epochs than the reference recipe keeps the demo under a minute
net, history = desk.train_desk_model(train, seed=0, epochs=20)
print("final training loss %.4f" % history[-1]["loss"])
print("clean test accuracy", accuracy(net, test.images, test.labels))

# %%
# One step of size 0.05 along the sign of the input gradient.
item = test[0]
outcome = fgsm(net, item, epsilon=0.05)
np.set_printoptions(precision=3, suppress=True)
print("label        ", item.label)
print("clean probs  ", outcome.clean_probs)
print("attacked     ", outcome.adv_probs)
print("largest pixel change", outcome.linf_norm)

# both images as 8-bit PGM files, viewable with most image tools
write_pnm(OUT / "clean.pgm", item.pixels)
write_pnm(OUT / "fgsm.pgm", outcome.adversarial)
