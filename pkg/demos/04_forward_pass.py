"""One review through the model: five interactions, fusion, and per-subtask heads."""

from mmss.dataset import make_synthetic
from mmss.model import FeatureBundle, ModelDims, ModelParams, forward

product = make_synthetic(1, 3, d_t=16, d_roi=16, seed=2)[0]
review = product.reviews[0]
params = ModelParams.init(ModelDims(d_t=16, d_roi=16, d_f=16, d_g=16), seed=0)

out = forward(params, FeatureBundle.from_records(product, review))
print(f"global score y_g = {float(out.y_hat_g.value):+.4f} (gold label {review.label})")
for kind, score in out.y_hat_s.items():
    print(f"  {kind.value:5s} subtask score {float(score.value):+.4f}, representation dim {out.f_s_star[kind].value.size}")

n = sum(p.value.size for _, p in params.named_parameters())
print("parameters:", n)
