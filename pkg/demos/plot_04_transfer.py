"""
Attacking a model through a surrogate
=====================================

An attacker without access to a model's weights trains a stand-in of
their own and crafts examples against it. Here the two models share the
data and architecture and differ only in their seed. Random +-epsilon
noise of the same size is the control.
"""
from advlab import desk
from advlab.attacks import AttackConfig, AttackMethod
from advlab.evaluation import run_transfer

train, test = desk.desk_corpus()
victim, _ = desk.train_desk_model(train, seed=1, epochs=20)
surrogate, _ = desk.train_desk_model(train, seed=2, epochs=20)

for eps in (0.02, 0.05, 0.1):
    attack = AttackConfig(AttackMethod.FAST_GRADIENT_SIGN, eps)
    row, = run_transfer(surrogate, victim, attack, test, seed=0, n=100).rows
    print(f"eps={eps:<5g} victim keeps its prediction on {row.transfer_top1_rel:.0%} "
          f"of transferred examples, {row.noise_control_top1_rel:.0%} under random noise")
