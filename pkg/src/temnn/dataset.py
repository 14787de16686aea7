"""Dataset directories: bundles plus a manifest listing split membership."""
from __future__ import annotations

import json
import os

from temnn.features import FeatureOptions, read_bundle

MANIFEST = "manifest.json"
DATASET_FORMAT = "temnn-dataset"
DATASET_VERSION = 1


class Dataset:
    """Lazy, cached view of a dataset directory."""

    def __init__(self, root):
        self.root = str(root)
        path = os.path.join(self.root, MANIFEST)
        if not os.path.exists(path):
            raise FileNotFoundError(f"no {MANIFEST} in {self.root}")
        with open(path) as fh:
            self.manifest = json.load(fh)
        if self.manifest.get("format") != DATASET_FORMAT:
            raise ValueError(f"{path} is not a dataset manifest")
        if self.manifest.get("version") != DATASET_VERSION:
            raise ValueError(f"unsupported dataset version {self.manifest.get('version')}")
        self._bundles = {}
        self._samples = {}

    @property
    def condition_features(self) -> int:
        return int(self.manifest["condition_features"])

    @property
    def field(self) -> dict:
        return self.manifest["field"]

    def split(self, name):
        return list(self.manifest["splits"][name])

    def bundle(self, name):
        if name not in self._bundles:
            self._bundles[name] = read_bundle(os.path.join(self.root, "bundles", name))
        return self._bundles[name]

    def samples(self, split, options: FeatureOptions | None = None):
        options = options or FeatureOptions()
        key = (split, options.coord_mode, options.use_t, options.use_dot)
        if key not in self._samples:
            self._samples[key] = [self.bundle(n).to_sample(options) for n in self.split(split)]
        return self._samples[key]
