"""
Accuracy against perturbation budget
====================================

Attack a seeded subset of 20 test images with all three methods over a
grid of budgets and chart how often the clean prediction survives.
"""
from pathlib import Path

from advlab import desk
from advlab.evaluation import SweepConfig, render_plot_svg, run_sweep, write_report_csv

OUT = Path("demo_output")
OUT.mkdir(exist_ok=True)

train, test = desk.desk_corpus()
net, _ = desk.train_desk_model(train, seed=0, epochs=20)

cfg = SweepConfig(eps_grid=[0, 0.01, 0.02, 0.05, 0.1], subset_size=20, seed=0)
report = run_sweep(net, test, cfg)

for row in report.rows:
    print(f"{row.method:22s} eps={row.epsilon:<5g} top1={row.top1_rel:.2f} "
          f"top5={row.top5_rel:.2f} true-label top1={row.top1_gt:.2f}")

# %%
# The CSV holds every column; the SVG plots one metric per method.
write_report_csv(report, OUT / "sweep.csv")
(OUT / "sweep_top1.svg").write_text(render_plot_svg(report, "top1_rel"))
(OUT / "sweep_top5.svg").write_text(render_plot_svg(report, "top5_rel"))
