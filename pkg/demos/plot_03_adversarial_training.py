"""
Hardening a model with adversarial training
===========================================

Half of every training batch is replaced by gradient-sign versions of
itself, computed against the weights as they are at that step. The
defended model is then compared with an undefended twin trained from
the same seed.
"""
import numpy as np

from advlab import desk
from advlab.attacks import AttackConfig, AttackMethod, fgsm_batch
from advlab.defenses import AdvTrainConfig, adversarial_train
from advlab.network import accuracy

train, test = desk.desk_corpus()
epochs = 30

plain, _ = desk.train_desk_model(train, seed=0, epochs=epochs)

attack = AttackConfig(AttackMethod.FAST_GRADIENT_SIGN, epsilon=0.1)
cfg = AdvTrainConfig(desk.desk_train_config(0, epochs=epochs), attack, mix_ratio=0.5)
defended, _ = adversarial_train(desk.desk_model(0), train, cfg)

# %%
# Ground-truth accuracy on clean images and under the same attack,
# crafted against each model's own gradients.
for name, net in (("plain", plain), ("defended", defended)):
    adv = fgsm_batch(net, test.images, test.labels, 0.1)
    print(f"{name:9s} clean {accuracy(net, test.images, test.labels):.3f}  "
          f"attacked {accuracy(net, adv, test.labels):.3f}")

print("mean |perturbation|:", np.abs(adv - test.images).mean())
