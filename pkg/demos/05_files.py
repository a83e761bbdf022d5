"""
Files on disk
=============

Parse a .pts annotation, then write a dataset, a checkpoint and a CED plot
into a temporary directory.
"""
import tempfile
from pathlib import Path

from kdlandmarks import io
from kdlandmarks.metrics import evaluate_errors
from kdlandmarks.pipeline import SyntheticSpec, generate_synthetic
from kdlandmarks.regressor import MlpSpec, Regressor

pts = io.parse_pts("version: 1\nn_points: 2\n{\n1.0 2.0\n3.0 4.0\n}")
print(pts.n_points, "points:", pts.points.tolist())

try:
    io.parse_pts("version: 1\nn_points: 3\n{\n1 2\n3 4\n}")
except io.FormatError as exc:
    print("rejected:", exc)

# %%
out = Path(tempfile.mkdtemp())
data = generate_synthetic(SyntheticSpec(k=5, n_train=10, n_test=5))
io.save_dataset(data, out / "dataset.json")
print("dataset round trip ok:", (io.load_dataset(out / "dataset.json").hard == data.hard).all())

model = Regressor(MlpSpec(10, (8,), 10))
io.save_checkpoint(model, out / "model.json")
print("checkpoint parameters:", io.load_checkpoint(out / "model.json").theta.size)

report = evaluate_errors([0.02, 0.04, 0.07, 0.12])
io.export_ced_csv(report.ced, out / "ced.csv")
io.write_ced_svg(report.ced, out / "ced.svg")
print("wrote", sorted(p.name for p in out.iterdir()), "to", out)
