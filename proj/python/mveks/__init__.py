# Copyright 2026 The mveks Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Multi-view ensemble Kalman smoothing."""

import json as _json

try:
    from . import _mveks as _ext
except ImportError:  # in-tree build: the extension sits on PYTHONPATH
    import _mveks as _ext

globals().update({k: v for k, v in vars(_ext).items() if not k.startswith("__")})
__version__ = _ext.__version__


def default_synth_config():
    return _json.loads(_ext._default_synth_config())


def generate(config=None):
    """Generate a synthetic rig, ground truth and ensemble from a config dict."""
    return _ext._generate(_json.dumps(config or {}))


def run_smooth(config, out_dir):
    """Run the smoothing pipeline described by `config` and write outputs to `out_dir`.

    Returns the run manifest as a dict.
    """
    return _json.loads(_ext._run_smooth(_json.dumps(config), str(out_dir)))
