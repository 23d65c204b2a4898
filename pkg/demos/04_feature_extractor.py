"""Channel bookkeeping of the dense-block feature extractor."""

import numpy as np

from cirn.features import DenseNetConfig, channel_plan, extract_features, init_feature_params
from cirn.interaction import InteractionStack
from cirn.tensor import Tensor

# Reference geometry: width 32, four layers, 1x1 reduction to 30%, two dense
# blocks of eight 3x3 layers adding 20 channels each, a transition halving
# the channels in between.
cfg = DenseNetConfig()
print("channels per stage:", channel_plan(32, 4, cfg))

for eta in (0.1, 0.3, 0.5):
    print(f"eta={eta}:", channel_plan(32, 4, DenseNetConfig(eta=eta)))

# The extractor turns any n x m grid into one fixed-width vector.
rng = np.random.default_rng(0)
params = init_feature_params(32, 4, cfg, rng)
for n, m in [(3, 4), (9, 2), (12, 12)]:
    stack = InteractionStack(Tensor(rng.normal(size=(n, m, 32, 4)).astype(np.float32)),
                             np.ones((n, m), bool), 4)
    f = extract_features(stack, params, cfg)
    print(f"{n}x{m} grid -> feature vector of width {f.shape[0]}")
